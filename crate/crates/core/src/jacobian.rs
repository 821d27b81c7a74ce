//! Jacobians of the measurements with respect to the five anomaly parameters.
//!
//! * [`jacobian_analytic`]: adjoint formula `∂V_n/∂w = -Γᵀ (∂A/∂w) θ_n`, where
//!   `A Γ = M̃ᵀ` (one adjoint solve per electrode) and `∂A/∂w` only touches the
//!   conductivity block, scattered element by element.
//! * [`jacobian_ad`]: the generic simulator run on [`Dual5`] scalars.
//! * [`jacobian_fd`]: central differences, used as an oracle.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ad::{Dual, Dual5, PARAM_COUNT};
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::model::{element_conductivity_gradients, AnomalyParams};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianEngine {
    Analytic,
    Ad,
}

/// Measurement-by-parameter matrix; columns in `model::param` order.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMatrix(pub DMatrix<f64>);

impl JacobianMatrix {
    pub fn zeros(rows: usize) -> Self {
        Self(DMatrix::zeros(rows, PARAM_COUNT))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn to_rows(&self) -> Vec<[f64; PARAM_COUNT]> {
        (0..self.rows())
            .map(|i| std::array::from_fn(|p| self.0[(i, p)]))
            .collect()
    }

    pub fn from_rows(rows: &[[f64; PARAM_COUNT]]) -> Self {
        Self(DMatrix::from_fn(rows.len(), PARAM_COUNT, |i, p| rows[i][p]))
    }

    pub fn column(&self, p: usize) -> Vec<f64> {
        self.0.column(p).iter().copied().collect()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianComparison {
    pub frobenius_diff: f64,
    /// `frobenius_diff / ‖J_a‖_F`.
    pub relative_frobenius: f64,
    /// Per column `max_i |a_i - b_i| / max_i |a_i|` (absolute if column `a` is zero).
    pub per_column_max_rel: Vec<f64>,
}

impl JacobianComparison {
    pub fn max_column_error(&self) -> f64 {
        self.per_column_max_rel.iter().copied().fold(0.0, f64::max)
    }
}

pub fn compare_jacobians(a: &JacobianMatrix, b: &JacobianMatrix) -> Result<JacobianComparison> {
    if a.0.shape() != b.0.shape() {
        return Err(Error::Usage(format!(
            "cannot compare Jacobians of shapes {:?} and {:?}",
            a.0.shape(),
            b.0.shape()
        )));
    }
    let diff = &a.0 - &b.0;
    let frobenius_diff = diff.norm();
    let reference = a.0.norm();
    let relative_frobenius = if reference > 0.0 {
        frobenius_diff / reference
    } else {
        frobenius_diff
    };
    let per_column_max_rel = (0..a.0.ncols())
        .map(|p| {
            let err = diff.column(p).amax();
            let scale = a.0.column(p).amax();
            if scale > 0.0 {
                err / scale
            } else {
                err
            }
        })
        .collect();
    Ok(JacobianComparison {
        frobenius_diff,
        relative_frobenius,
        per_column_max_rel,
    })
}

/// Right-hand sides `M̃ᵀ e_l` of the adjoint systems, one per electrode.
pub fn adjoint_rhs(node_count: usize, electrodes: usize) -> Vec<Vec<f64>> {
    (0..electrodes)
        .map(|l| {
            let mut b = vec![0.0; node_count + electrodes - 1];
            if l == 0 {
                b[node_count..].fill(1.0);
            } else {
                b[node_count + l - 1] = -1.0;
            }
            b
        })
        .collect()
}

pub fn jacobian_analytic(model: &ForwardModel, params: &AnomalyParams) -> Result<JacobianMatrix> {
    params.validate()?;
    let mesh = &model.mesh;
    let n = mesh.node_count();
    let electrodes = model.electrode_count();
    let sigma = model.conductivities(params);
    let grads = element_conductivity_gradients(params, &model.centroids, &model.smoothing);

    let system = model.discretization.assemble(mesh, &sigma)?;
    let thetas = model.solver.solve_real(&system.matrix, &model.discretization.rhs)?;
    let gammas = model.solver.solve_real(&system.matrix, &adjoint_rhs(n, electrodes))?;

    let mut jac = JacobianMatrix::zeros(model.measurement_count());
    for (k, tri) in mesh.elements.iter().enumerate() {
        let g = grads[k];
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let local = &mesh.local_stiffness[k];
        for (j, theta) in thetas.iter().enumerate() {
            // K_k θ restricted to the element.
            let kt: [f64; 3] =
                std::array::from_fn(|a| (0..3).map(|b| local[a][b] * theta[tri[b]]).sum());
            for (l, gamma) in gammas.iter().enumerate() {
                let q: f64 = (0..3).map(|a| gamma[tri[a]] * kt[a]).sum();
                let row = j * electrodes + l;
                for (p, gp) in g.iter().enumerate() {
                    jac.0[(row, p)] -= gp * q;
                }
            }
        }
    }
    Ok(jac)
}

pub fn jacobian_ad(model: &ForwardModel, params: &AnomalyParams) -> Result<JacobianMatrix> {
    let mut seeds = [[0.0; PARAM_COUNT]; PARAM_COUNT];
    for (p, s) in seeds.iter_mut().enumerate() {
        s[p] = 1.0;
    }
    jacobian_ad_seeded(model, params, &seeds)
}

/// Forward-mode Jacobian with parameter `i` carrying tangent `seeds[i]`; the
/// identity seed gives the plain Jacobian.
pub fn jacobian_ad_seeded(
    model: &ForwardModel,
    params: &AnomalyParams,
    seeds: &[[f64; PARAM_COUNT]; PARAM_COUNT],
) -> Result<JacobianMatrix> {
    let values = params.to_array();
    let duals: [Dual5; PARAM_COUNT] = std::array::from_fn(|i| Dual::new(values[i], seeds[i]));
    let v = model.simulate(&AnomalyParams::from_array(duals))?;
    Ok(JacobianMatrix(DMatrix::from_fn(v.len(), PARAM_COUNT, |i, p| {
        v[i].tangent[p]
    })))
}

/// Central differences of an arbitrary map, one column per parameter.
pub fn central_differences<F>(f: F, at: [f64; PARAM_COUNT], step: f64) -> Result<JacobianMatrix>
where
    F: Fn([f64; PARAM_COUNT]) -> Result<Vec<f64>>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Usage(format!("finite-difference step must be positive, got {step}")));
    }
    let mut columns = Vec::with_capacity(PARAM_COUNT);
    for p in 0..PARAM_COUNT {
        let mut plus = at;
        let mut minus = at;
        plus[p] += step;
        minus[p] -= step;
        let fp = f(plus)?;
        let fm = f(minus)?;
        columns.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect::<Vec<_>>(),
        );
    }
    let rows = columns[0].len();
    Ok(JacobianMatrix(DMatrix::from_fn(rows, PARAM_COUNT, |i, p| {
        columns[p][i]
    })))
}

pub fn jacobian_fd(model: &ForwardModel, params: &AnomalyParams, step: f64) -> Result<JacobianMatrix> {
    params.validate()?;
    central_differences(
        |w| model.simulate(&AnomalyParams::from_array(w)),
        params.to_array(),
        step,
    )
}

pub fn jacobian(
    model: &ForwardModel,
    params: &AnomalyParams,
    engine: JacobianEngine,
) -> Result<JacobianMatrix> {
    match engine {
        JacobianEngine::Analytic => jacobian_analytic(model, params),
        JacobianEngine::Ad => jacobian_ad(model, params),
    }
}
