//! Levenberg-Marquardt reconstruction of anomaly parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::PARAM_COUNT;
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::jacobian::{jacobian, JacobianEngine, JacobianMatrix};
use crate::model::{param, AnomalyParams};

/// What the inversion sees: a forward map and its Jacobian.
pub trait InverseContext {
    fn simulate(&self, params: &AnomalyParams) -> Result<Vec<f64>>;
    fn jacobian(&self, params: &AnomalyParams, engine: JacobianEngine) -> Result<JacobianMatrix>;
}

impl InverseContext for ForwardModel {
    fn simulate(&self, params: &AnomalyParams) -> Result<Vec<f64>> {
        ForwardModel::simulate(self, params)
    }

    fn jacobian(&self, params: &AnomalyParams, engine: JacobianEngine) -> Result<JacobianMatrix> {
        jacobian(self, params, engine)
    }
}

/// Which parameters are fitted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FitMode {
    General,
    /// Conductivities pinned; only `(cx, cy, r)` are fitted.
    Fixed { sigma_in: f64, sigma_out: f64 },
}

impl FitMode {
    pub fn active(&self) -> &'static [usize] {
        match self {
            FitMode::General => &[param::CX, param::CY, param::R, param::SIGMA_IN, param::SIGMA_OUT],
            FitMode::Fixed { .. } => &[param::CX, param::CY, param::R],
        }
    }

    /// Centered start with radius 0.3; mid-range conductivities in the general case.
    pub fn default_initial(&self) -> AnomalyParams {
        match *self {
            FitMode::General => AnomalyParams::new(0.3, 0.0, 0.0, 1.3, 0.8),
            FitMode::Fixed { sigma_in, sigma_out } => {
                AnomalyParams::new(0.3, 0.0, 0.0, sigma_in, sigma_out)
            }
        }
    }

    fn pin(&self, mut p: AnomalyParams) -> AnomalyParams {
        if let FitMode::Fixed { sigma_in, sigma_out } = *self {
            p.sigma_in = sigma_in;
            p.sigma_out = sigma_out;
        }
        p
    }
}

/// Closed intervals `[lo, hi]` per parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterBounds {
    pub r: [f64; 2],
    pub cx: [f64; 2],
    pub cy: [f64; 2],
    pub sigma_in: [f64; 2],
    pub sigma_out: [f64; 2],
}

impl Default for ParameterBounds {
    fn default() -> Self {
        Self {
            r: [0.02, 1.0],
            cx: [-0.98, 0.98],
            cy: [-0.98, 0.98],
            sigma_in: [0.1, 5.0],
            sigma_out: [0.1, 5.0],
        }
    }
}

impl ParameterBounds {
    fn as_array(&self) -> [[f64; 2]; PARAM_COUNT] {
        AnomalyParams {
            r: self.r,
            cx: self.cx,
            cy: self.cy,
            sigma_in: self.sigma_in,
            sigma_out: self.sigma_out,
        }
        .to_array()
    }

    pub fn clamp(&self, p: &AnomalyParams) -> AnomalyParams {
        let bounds = self.as_array();
        let mut v = p.to_array();
        for (x, [lo, hi]) in v.iter_mut().zip(bounds) {
            *x = x.clamp(lo, hi);
        }
        AnomalyParams::from_array(v)
    }

    pub fn contains(&self, p: &AnomalyParams) -> bool {
        p.to_array()
            .iter()
            .zip(self.as_array())
            .all(|(x, [lo, hi])| (lo..=hi).contains(x))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in param::NAMES.iter().zip(self.as_array()) {
            if !(lo < hi) {
                return Err(Error::Config(format!("bounds for {name} must satisfy lo < hi")));
            }
        }
        if self.r[0] <= 0.0 || self.sigma_in[0] <= 0.0 || self.sigma_out[0] <= 0.0 {
            return Err(Error::Config(
                "lower bounds of r and the conductivities must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub rel_loss_threshold: f64,
    /// Absolute initial damping; when absent it is `lambda_init_scale · max diag(JᵀJ)`.
    pub lambda_init: Option<f64>,
    pub lambda_init_scale: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub line_search_shrink: f64,
    /// Backtracking trials per damping value, and also the number of damping
    /// increases tried before giving up on an iteration.
    pub line_search_max_steps: usize,
    pub bounds: ParameterBounds,
    pub jacobian_engine: JacobianEngine,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            rel_loss_threshold: 1e-3,
            lambda_init: None,
            lambda_init_scale: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            line_search_shrink: 0.5,
            line_search_max_steps: 8,
            bounds: ParameterBounds::default(),
            jacobian_engine: JacobianEngine::Analytic,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.rel_loss_threshold > 0.0) {
            return bad("rel_loss_threshold must be positive");
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return bad("line_search_shrink must lie in (0, 1)");
        }
        if self.line_search_max_steps == 0 {
            return bad("line_search_max_steps must be at least 1");
        }
        if !(self.lambda_up > 1.0 && self.lambda_down > 1.0) {
            return bad("lambda_up and lambda_down must exceed 1");
        }
        if !(self.lambda_init_scale > 0.0) || self.lambda_init.is_some_and(|l| !(l > 0.0)) {
            return bad("initial damping must be positive");
        }
        self.bounds.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmIteration {
    pub iteration: usize,
    pub params: AnomalyParams,
    pub loss: f64,
    pub relative_loss: f64,
    /// Damping in effect when the step was taken (the final value after retries).
    pub lambda: f64,
    pub step_norm: f64,
    pub line_search_steps: usize,
    pub accepted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// No damping value produced a decrease.
    Stalled,
    NonFinite,
}

/// Iteration 0 is the initial point; later entries are LM iterations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmTrace {
    pub iterations: Vec<LmIteration>,
    pub stop_reason: Option<StopReason>,
}

impl LmTrace {
    pub fn accepted_losses(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.loss)
            .collect()
    }

    pub fn final_record(&self) -> Option<&LmIteration> {
        self.iterations.last()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub params: AnomalyParams,
    pub trace: LmTrace,
}

fn residual(sim: &[f64], m_true: &[f64]) -> Result<Vec<f64>> {
    if sim.len() != m_true.len() {
        return Err(Error::Usage(format!(
            "{} simulated values against {} measurements",
            sim.len(),
            m_true.len()
        )));
    }
    Ok(sim.iter().zip(m_true).map(|(s, m)| s - m).collect())
}

/// `½ ‖sim - m‖²`.
pub fn loss_of(sim: &[f64], m_true: &[f64]) -> Result<f64> {
    Ok(0.5 * residual(sim, m_true)?.iter().map(|r| r * r).sum::<f64>())
}

/// `½ ‖sim - m‖² / ‖m‖²`.
pub fn relative_loss_of(sim: &[f64], m_true: &[f64]) -> Result<f64> {
    let norm_sq: f64 = m_true.iter().map(|m| m * m).sum();
    if norm_sq == 0.0 {
        return Err(Error::Usage("relative loss needs nonzero measurements".into()));
    }
    Ok(loss_of(sim, m_true)? / norm_sq)
}

pub fn loss(ctx: &impl InverseContext, params: &AnomalyParams, m_true: &[f64]) -> Result<f64> {
    loss_of(&ctx.simulate(params)?, m_true)
}

pub fn relative_loss(
    ctx: &impl InverseContext,
    params: &AnomalyParams,
    m_true: &[f64],
) -> Result<f64> {
    relative_loss_of(&ctx.simulate(params)?, m_true)
}

/// `δ = -(JᵀJ + λI)⁻¹ Jᵀ r`.
pub fn lm_step(jac: &DMatrix<f64>, residual: &[f64], lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::Usage(format!("damping must be nonnegative, got {lambda}")));
    }
    if jac.nrows() != residual.len() {
        return Err(Error::Usage(format!(
            "Jacobian has {} rows but the residual has {} entries",
            jac.nrows(),
            residual.len()
        )));
    }
    let r = DVector::from_column_slice(residual);
    let gradient = jac.transpose() * &r;
    let mut normal = jac.transpose() * jac;
    for i in 0..normal.nrows() {
        normal[(i, i)] += lambda;
    }
    let solved = match normal.clone().cholesky() {
        Some(c) => Some(c.solve(&gradient)),
        None => normal.lu().solve(&gradient),
    };
    match solved {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(-x),
        _ => Err(Error::Singular(format!(
            "damped normal equations are singular at lambda = {lambda}"
        ))),
    }
}

fn active_columns(jac: &JacobianMatrix, active: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(jac.rows(), active.len(), |i, c| jac.0[(i, active[c])])
}

fn apply_step(
    params: &AnomalyParams,
    step: &DVector<f64>,
    t: f64,
    active: &[usize],
    bounds: &ParameterBounds,
) -> AnomalyParams {
    let mut v = params.to_array();
    for (c, &p) in active.iter().enumerate() {
        v[p] += t * step[c];
    }
    bounds.clamp(&AnomalyParams::from_array(v))
}

fn abort(trace: LmTrace, message: String) -> Error {
    Error::Reconstruction {
        message,
        trace: Box::new(trace),
    }
}

/// Runs LM from `initial` and returns the best parameters seen with the trace.
pub fn reconstruct(
    ctx: &impl InverseContext,
    m_true: &[f64],
    initial: &AnomalyParams,
    mode: FitMode,
    cfg: &LmConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let active = mode.active();
    let norm_sq: f64 = m_true.iter().map(|m| m * m).sum();
    if norm_sq == 0.0 || m_true.iter().any(|m| !m.is_finite()) {
        return Err(Error::Usage("measurements must be finite and not all zero".into()));
    }

    let mut params = cfg.bounds.clamp(&mode.pin(*initial));
    let mut r = residual(&ctx.simulate(&params)?, m_true)?;
    let mut current = 0.5 * r.iter().map(|x| x * x).sum::<f64>();
    let mut trace = LmTrace::default();
    trace.iterations.push(LmIteration {
        iteration: 0,
        params,
        loss: current,
        relative_loss: current / norm_sq,
        lambda: 0.0,
        step_norm: 0.0,
        line_search_steps: 0,
        accepted: true,
    });
    if !current.is_finite() {
        trace.stop_reason = Some(StopReason::NonFinite);
        return Err(abort(trace, "initial loss is not finite".into()));
    }

    let mut lambda: Option<f64> = cfg.lambda_init;
    for iteration in 1..=cfg.max_iterations {
        if current / norm_sq < cfg.rel_loss_threshold {
            trace.stop_reason = Some(StopReason::Converged);
            break;
        }
        let jac = active_columns(&ctx.jacobian(&params, cfg.jacobian_engine)?, active);
        let lam = lambda.get_or_insert_with(|| {
            let max_diag = jac.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
            (cfg.lambda_init_scale * max_diag).max(f64::MIN_POSITIVE)
        });

        let mut trials = 0;
        let mut outcome = None;
        for _ in 0..=cfg.line_search_max_steps {
            let step = match lm_step(&jac, &r, *lam) {
                Ok(step) => step,
                Err(Error::Singular(_)) => {
                    *lam *= cfg.lambda_up;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut t = 1.0;
            for attempt in 0..cfg.line_search_max_steps {
                trials += 1;
                let candidate = apply_step(&params, &step, t, active, &cfg.bounds);
                let r_new = residual(&ctx.simulate(&candidate)?, m_true)?;
                let value = 0.5 * r_new.iter().map(|x| x * x).sum::<f64>();
                if !value.is_finite() {
                    trace.stop_reason = Some(StopReason::NonFinite);
                    return Err(abort(trace, format!("loss became non-finite at iteration {iteration}")));
                }
                if value < current {
                    outcome = Some((candidate, r_new, value, t * step.norm(), attempt == 0));
                    break;
                }
                t *= cfg.line_search_shrink;
            }
            if outcome.is_some() {
                break;
            }
            *lam *= cfg.lambda_up;
        }

        match outcome {
            Some((candidate, r_new, value, step_norm, full_step)) => {
                trace.iterations.push(LmIteration {
                    iteration,
                    params: candidate,
                    loss: value,
                    relative_loss: value / norm_sq,
                    lambda: *lam,
                    step_norm,
                    line_search_steps: trials,
                    accepted: true,
                });
                if full_step {
                    *lam /= cfg.lambda_down;
                }
                params = candidate;
                r = r_new;
                current = value;
            }
            None => {
                trace.iterations.push(LmIteration {
                    iteration,
                    params,
                    loss: current,
                    relative_loss: current / norm_sq,
                    lambda: *lam,
                    step_norm: 0.0,
                    line_search_steps: trials,
                    accepted: false,
                });
                trace.stop_reason = Some(StopReason::Stalled);
                break;
            }
        }
    }
    if trace.stop_reason.is_none() {
        trace.stop_reason = Some(if current / norm_sq < cfg.rel_loss_threshold {
            StopReason::Converged
        } else {
            StopReason::MaxIterations
        });
    }
    // Accepted iterates strictly decrease the loss, so the current point is the best seen.
    Ok(Reconstruction { params, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Linear forward map `V = G w` with a known Jacobian.
    struct Linear {
        g: DMatrix<f64>,
    }

    impl Linear {
        fn new() -> Self {
            Self {
                g: DMatrix::from_fn(12, 5, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.1 + if i == j { 1.0 } else { 0.0 }),
            }
        }
    }

    impl InverseContext for Linear {
        fn simulate(&self, p: &AnomalyParams) -> Result<Vec<f64>> {
            let w = DVector::from_column_slice(&p.to_array());
            Ok((&self.g * w).iter().copied().collect())
        }
        fn jacobian(&self, _: &AnomalyParams, _: JacobianEngine) -> Result<JacobianMatrix> {
            Ok(JacobianMatrix(self.g.clone()))
        }
    }

    #[test]
    fn loss_examples() {
        let m = [1.0, 2.0, -2.0];
        assert_eq!(loss_of(&m, &m).unwrap(), 0.0);
        assert_eq!(loss_of(&[1.0, 0.0, 0.0], &[0.0; 3]).unwrap(), 0.5);
        assert_eq!(relative_loss_of(&[0.0; 3], &m).unwrap(), 0.5);
        assert_eq!(relative_loss_of(&[2.0, 4.0, -4.0], &m).unwrap(), 0.5);
        assert!(relative_loss_of(&m, &[0.0; 3]).is_err());
        assert!(loss_of(&m, &[0.0; 2]).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_step() {
        let j = Linear::new().g;
        let step = lm_step(&j, &[0.0; 12], 1e-3).unwrap();
        assert!(step.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn heavy_damping_tends_to_scaled_gradient() {
        let j = Linear::new().g;
        let r: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let lambda = 1e8;
        let step = lm_step(&j, &r, lambda).unwrap();
        let g = j.transpose() * DVector::from_column_slice(&r);
        let rel = (step * lambda + &g).norm() / g.norm();
        assert!(rel <= 1e-6, "{rel}");
    }

    #[test]
    fn undamped_step_matches_normal_equations() {
        let j = Linear::new().g;
        let r: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).sin()).collect();
        let step = lm_step(&j, &r, 0.0).unwrap();
        // Oracle: least squares through an SVD of J.
        let oracle = j.clone().svd(true, true).solve(&DVector::from_column_slice(&r), 1e-14).unwrap();
        assert!((step + oracle).norm() <= 1e-10);
    }

    #[test]
    fn rank_deficient_undamped_step_is_singular() {
        let j = DMatrix::from_fn(6, 2, |i, _| i as f64);
        assert!(matches!(lm_step(&j, &[1.0; 6], 0.0), Err(Error::Singular(_))));
        assert!(lm_step(&j, &[1.0; 6], 1e-3).is_ok());
    }

    #[test]
    fn linear_problem_is_solved_with_monotone_losses() {
        let ctx = Linear::new();
        let truth = AnomalyParams::new(0.4, 0.2, -0.3, 1.5, 0.7);
        let m = ctx.simulate(&truth).unwrap();
        let cfg = LmConfig {
            rel_loss_threshold: 1e-20,
            ..LmConfig::default()
        };
        let rec = reconstruct(&ctx, &m, &FitMode::General.default_initial(), FitMode::General, &cfg).unwrap();
        assert!(rec.params.distance(&truth) < 1e-6);
        let losses = rec.trace.accepted_losses();
        assert!(losses.windows(2).all(|w| w[1] < w[0]));
        assert!(rec.trace.iterations.iter().all(|it| cfg.bounds.contains(&it.params)));
    }

    #[test]
    fn starting_at_the_truth_stops_immediately() {
        let ctx = Linear::new();
        let truth = AnomalyParams::new(0.4, 0.2, -0.3, 1.5, 0.7);
        let m = ctx.simulate(&truth).unwrap();
        let rec = reconstruct(&ctx, &m, &truth, FitMode::General, &LmConfig::default()).unwrap();
        assert_eq!(rec.trace.iterations.len(), 1);
        assert_eq!(rec.trace.stop_reason, Some(StopReason::Converged));
        assert_eq!(rec.params, truth);
    }

    #[test]
    fn iterates_are_clamped_to_bounds() {
        let ctx = Linear::new();
        // The unconstrained optimum has r < 0 and cx outside the disk.
        let target = AnomalyParams::new(-0.5, 1.5, 0.0, 1.2, 0.8);
        let m = ctx.simulate(&target).unwrap();
        let cfg = LmConfig::default();
        let rec = reconstruct(&ctx, &m, &FitMode::General.default_initial(), FitMode::General, &cfg).unwrap();
        for it in &rec.trace.iterations {
            assert!(cfg.bounds.contains(&it.params));
            assert!(it.params.r >= 0.02);
        }
    }

    #[test]
    fn fixed_mode_only_moves_geometry() {
        let ctx = Linear::new();
        let mode = FitMode::Fixed { sigma_in: 1.4, sigma_out: 0.7 };
        let truth = AnomalyParams::new(0.35, -0.1, 0.25, 1.4, 0.7);
        let m = ctx.simulate(&truth).unwrap();
        let cfg = LmConfig {
            rel_loss_threshold: 1e-20,
            ..LmConfig::default()
        };
        let rec = reconstruct(&ctx, &m, &mode.default_initial(), mode, &cfg).unwrap();
        assert!(rec.trace.iterations.iter().all(|it| it.params.sigma_in == 1.4 && it.params.sigma_out == 0.7));
        assert!(rec.params.distance(&truth) < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(LmConfig::default().validate().is_ok());
        let bad = LmConfig {
            line_search_shrink: 1.0,
            ..LmConfig::default()
        };
        assert!(bad.validate().is_err());
        let mut bounds = ParameterBounds::default();
        bounds.r = [0.5, 0.1];
        assert!(LmConfig { bounds, ..LmConfig::default() }.validate().is_err());
        let json = serde_json::to_string(&LmConfig::default()).unwrap();
        let back: LmConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, LmConfig::default());
    }
}
