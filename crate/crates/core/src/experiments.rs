//! Seeded datasets, batch reconstructions, error statistics and the scaling
//! benchmark.

use std::f64::consts::TAU;
use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardConfig, ForwardModel, Measurements};
use crate::jacobian::{jacobian_ad, jacobian_analytic, JacobianEngine};
use crate::lm::{reconstruct, FitMode, LmConfig, StopReason};
use crate::mesh::{build_disk_mesh, ElectrodeLayout};
use crate::model::AnomalyParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Fixed,
    General,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_cases: usize,
    pub mode: DatasetMode,
    pub seed: u64,
    pub data_mesh_h: f64,
    pub sigma_in_range: [f64; 2],
    pub sigma_out_range: [f64; 2],
    pub fixed_sigma_in: f64,
    pub fixed_sigma_out: f64,
    pub r_min: f64,
    /// Standard deviation of additive Gaussian noise relative to the
    /// measurement RMS; zero leaves the data noiseless.
    pub noise_level: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_cases: 50,
            mode: DatasetMode::Fixed,
            seed: 0,
            data_mesh_h: 0.05,
            sigma_in_range: [1.0, 1.6],
            sigma_out_range: [0.6, 1.0],
            fixed_sigma_in: 1.4,
            fixed_sigma_out: 0.7,
            r_min: 0.1,
            noise_level: 0.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_cases == 0 {
            return bad("n_cases must be at least 1".into());
        }
        for (name, [lo, hi]) in [("sigma_in_range", self.sigma_in_range), ("sigma_out_range", self.sigma_out_range)] {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("{name} must be a positive interval, got [{lo}, {hi}]"));
            }
        }
        if !(self.fixed_sigma_in > 0.0 && self.fixed_sigma_out > 0.0) {
            return bad("fixed conductivities must be positive".into());
        }
        if !(self.r_min > 0.0 && self.r_min < 1.0) {
            return bad(format!("r_min must lie in (0, 1), got {}", self.r_min));
        }
        if !(self.noise_level >= 0.0) {
            return bad("noise_level must be nonnegative".into());
        }
        Ok(())
    }

    pub fn fit_mode(&self) -> FitMode {
        match self.mode {
            DatasetMode::General => FitMode::General,
            DatasetMode::Fixed => FitMode::Fixed {
                sigma_in: self.fixed_sigma_in,
                sigma_out: self.fixed_sigma_out,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub mesh_h: f64,
    pub mesh_nodes: usize,
    pub electrode_grading: bool,
    pub epsilon: f64,
    pub amplitude: f64,
    pub layout: ElectrodeLayout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: usize,
    pub mode: FitMode,
    pub true_params: AnomalyParams,
    pub measurements: Measurements,
    pub provenance: Provenance,
}

/// Independent stream per case, so results do not depend on scheduling.
pub fn case_rng(seed: u64, case_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case_id as u64);
    rng
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Area-uniform center, radius in `[r_min, 1 - |c|]`.
pub fn sample_anomaly(rng: &mut impl Rng, spec: &DatasetSpec) -> AnomalyParams {
    loop {
        let angle = rng.gen_range(0.0..TAU);
        let radius = rng.gen::<f64>().sqrt();
        // The radius interval is empty once the center is this close to the boundary.
        if radius > 1.0 - spec.r_min {
            continue;
        }
        let r = uniform(rng, [spec.r_min, 1.0 - radius]);
        let (sigma_in, sigma_out) = match spec.mode {
            DatasetMode::Fixed => (spec.fixed_sigma_in, spec.fixed_sigma_out),
            DatasetMode::General => (
                uniform(rng, spec.sigma_in_range),
                uniform(rng, spec.sigma_out_range),
            ),
        };
        return AnomalyParams::new(r, radius * angle.cos(), radius * angle.sin(), sigma_in, sigma_out);
    }
}

fn add_noise(rng: &mut impl Rng, voltages: &mut [f64], level: f64) {
    if level == 0.0 {
        return;
    }
    let rms = (voltages.iter().map(|v| v * v).sum::<f64>() / voltages.len() as f64).sqrt();
    for v in voltages {
        // Box-Muller; two uniforms per sample keeps the stream layout simple.
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        *v += level * rms * (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
    }
}

pub fn generate_dataset(spec: &DatasetSpec, forward: &ForwardConfig) -> Result<Vec<CaseRecord>> {
    spec.validate()?;
    let model = ForwardModel::build(spec.data_mesh_h, forward)?;
    let provenance = Provenance {
        seed: spec.seed,
        mesh_h: spec.data_mesh_h,
        mesh_nodes: model.mesh.node_count(),
        electrode_grading: forward.electrode_grading,
        epsilon: forward.epsilon,
        amplitude: forward.amplitude,
        layout: model.layout.clone(),
    };
    (0..spec.n_cases)
        .into_par_iter()
        .map(|case_id| {
            let mut rng = case_rng(spec.seed, case_id);
            let true_params = sample_anomaly(&mut rng, spec);
            let mut measurements = model.measurements(&true_params, Some(spec.seed))?;
            add_noise(&mut rng, &mut measurements.voltages, spec.noise_level);
            Ok(CaseRecord {
                case_id,
                mode: spec.fit_mode(),
                true_params,
                measurements,
                provenance: provenance.clone(),
            })
        })
        .collect()
}

pub fn write_jsonl(records: &[CaseRecord], out: impl Write) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(input: impl BufRead) -> Result<Vec<CaseRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub inversion_mesh_h: f64,
    pub engines: Vec<JacobianEngine>,
    pub lm: LmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            inversion_mesh_h: 0.06,
            engines: vec![JacobianEngine::Analytic, JacobianEngine::Ad],
            lm: LmConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineOutcome {
    pub engine: JacobianEngine,
    pub params: Option<AnomalyParams>,
    pub error_vs_truth: Option<f64>,
    /// Per-parameter absolute errors in column order.
    pub parameter_errors: Option<[f64; 5]>,
    pub iterations: usize,
    pub final_rel_loss: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub failure: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: usize,
    pub true_params: AnomalyParams,
    pub engines: Vec<EngineOutcome>,
    /// `‖σ_AD - σ_AN‖₂` when both engines ran.
    pub err_ad_an: Option<f64>,
}

impl CaseOutcome {
    pub fn engine(&self, engine: JacobianEngine) -> Option<&EngineOutcome> {
        self.engines.iter().find(|e| e.engine == engine)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub true_analytic: Option<StatsSummary>,
    pub true_ad: Option<StatsSummary>,
    pub ad_analytic: Option<StatsSummary>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub inversion_mesh_h: f64,
    pub inversion_elements: usize,
    pub cases: Vec<CaseOutcome>,
    pub summary: ExperimentSummary,
}

impl ExperimentResults {
    pub fn errors_vs_truth(&self, engine: JacobianEngine) -> Vec<f64> {
        self.cases
            .iter()
            .filter_map(|c| c.engine(engine)?.error_vs_truth)
            .collect()
    }

    pub fn errors_between_engines(&self) -> Vec<f64> {
        self.cases.iter().filter_map(|c| c.err_ad_an).collect()
    }
}

/// Refuses to invert on the data mesh itself or on a finer one.
pub fn check_inverse_crime(records: &[CaseRecord], inversion: &ForwardModel) -> Result<()> {
    let h = inversion.mesh.h_target;
    for r in records {
        let data = &r.provenance;
        if h <= data.mesh_h || inversion.mesh.node_count() == data.mesh_nodes {
            return Err(Error::Config(format!(
                "inverse crime: case {} was simulated at h = {} ({} nodes) and the inversion mesh \
                 has h = {h} ({} nodes); the inversion mesh must be strictly coarser",
                r.case_id,
                data.mesh_h,
                data.mesh_nodes,
                inversion.mesh.node_count()
            )));
        }
    }
    Ok(())
}

fn check_case(model: &ForwardModel, record: &CaseRecord) -> Result<()> {
    record.measurements.validate()?;
    if record.measurements.voltages.len() != model.measurement_count() {
        return Err(Error::Usage(format!(
            "case {} has {} measurements, the inversion model produces {}",
            record.case_id,
            record.measurements.voltages.len(),
            model.measurement_count()
        )));
    }
    Ok(())
}

fn run_engine(
    model: &ForwardModel,
    record: &CaseRecord,
    engine: JacobianEngine,
    lm: &LmConfig,
) -> EngineOutcome {
    let start = Instant::now();
    let cfg = LmConfig {
        jacobian_engine: engine,
        ..lm.clone()
    };
    let initial = record.mode.default_initial();
    let result = check_case(model, record).and_then(|()| {
        reconstruct(model, &record.measurements.voltages, &initial, record.mode, &cfg)
    });
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(rec) => {
            let truth = record.true_params.to_array();
            let got = rec.params.to_array();
            let last = rec.trace.final_record();
            EngineOutcome {
                engine,
                params: Some(rec.params),
                error_vs_truth: Some(rec.params.distance(&record.true_params)),
                parameter_errors: Some(std::array::from_fn(|i| (got[i] - truth[i]).abs())),
                iterations: rec.trace.iterations.len() - 1,
                final_rel_loss: last.map(|l| l.relative_loss),
                stop_reason: rec.trace.stop_reason,
                failure: None,
                seconds,
            }
        }
        Err(e) => {
            let (iterations, stop_reason) = match &e {
                Error::Reconstruction { trace, .. } => {
                    (trace.iterations.len().saturating_sub(1), trace.stop_reason)
                }
                _ => (0, None),
            };
            EngineOutcome {
                engine,
                params: None,
                error_vs_truth: None,
                parameter_errors: None,
                iterations,
                final_rel_loss: None,
                stop_reason,
                failure: Some(e.to_string()),
                seconds,
            }
        }
    }
}

/// Reconstructs every case with every engine on the coarse inversion mesh.
/// Per-case failures are recorded, never propagated.
pub fn run_experiment(
    records: &[CaseRecord],
    forward: &ForwardConfig,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResults> {
    if records.is_empty() {
        return Err(Error::Config("the dataset is empty".into()));
    }
    if cfg.engines.is_empty() {
        return Err(Error::Config("at least one Jacobian engine is required".into()));
    }
    cfg.lm.validate()?;
    let model = ForwardModel::build(cfg.inversion_mesh_h, forward)?;
    check_inverse_crime(records, &model)?;

    let cases: Vec<CaseOutcome> = records
        .par_iter()
        .map(|record| {
            let engines: Vec<EngineOutcome> = cfg
                .engines
                .iter()
                .map(|&e| run_engine(&model, record, e, &cfg.lm))
                .collect();
            let find = |e| engines.iter().find(|o: &&EngineOutcome| o.engine == e)?.params;
            let err_ad_an = match (find(JacobianEngine::Ad), find(JacobianEngine::Analytic)) {
                (Some(a), Some(b)) => Some(a.distance(&b)),
                _ => None,
            };
            CaseOutcome {
                case_id: record.case_id,
                true_params: record.true_params,
                engines,
                err_ad_an,
            }
        })
        .collect();

    let mut results = ExperimentResults {
        inversion_mesh_h: cfg.inversion_mesh_h,
        inversion_elements: model.mesh.element_count(),
        cases,
        summary: ExperimentSummary {
            true_analytic: None,
            true_ad: None,
            ad_analytic: None,
            failures: 0,
        },
    };
    let summarize_opt = |v: Vec<f64>| if v.is_empty() { None } else { summarize(&v).ok() };
    results.summary = ExperimentSummary {
        true_analytic: summarize_opt(results.errors_vs_truth(JacobianEngine::Analytic)),
        true_ad: summarize_opt(results.errors_vs_truth(JacobianEngine::Ad)),
        ad_analytic: summarize_opt(results.errors_between_engines()),
        failures: results
            .cases
            .iter()
            .flat_map(|c| &c.engines)
            .filter(|e| e.failure.is_some())
            .count(),
    };
    Ok(results)
}

/// Flat per-case row for CSV output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case_id: usize,
    pub err_true_ad: Option<f64>,
    pub err_true_an: Option<f64>,
    pub err_ad_an: Option<f64>,
    pub iterations_ad: Option<usize>,
    pub iterations_an: Option<usize>,
    pub final_rel_loss_ad: Option<f64>,
    pub final_rel_loss_an: Option<f64>,
}

impl ExperimentResults {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.cases
            .iter()
            .map(|c| {
                let ad = c.engine(JacobianEngine::Ad);
                let an = c.engine(JacobianEngine::Analytic);
                ResultRow {
                    case_id: c.case_id,
                    err_true_ad: ad.and_then(|e| e.error_vs_truth),
                    err_true_an: an.and_then(|e| e.error_vs_truth),
                    err_ad_an: c.err_ad_an,
                    iterations_ad: ad.map(|e| e.iterations),
                    iterations_an: an.map(|e| e.iterations),
                    final_rel_loss_ad: ad.and_then(|e| e.final_rel_loss),
                    final_rel_loss_an: an.and_then(|e| e.final_rel_loss),
                }
            })
            .collect()
    }
}

pub fn write_results_csv(rows: &[ResultRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const HISTOGRAM_BINS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges, log10-spaced.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub count: usize,
    pub mean: f64,
    /// Sample variance with the `n - 1` denominator (zero for one sample).
    pub variance: f64,
    pub max: f64,
    pub min: f64,
    pub median: f64,
    pub histogram: Histogram,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Log-spaced bins between the smallest positive value and the maximum;
/// zeros land in the first bin.
pub fn log_histogram(values: &[f64], bins: usize) -> Histogram {
    let positive: Vec<f64> = values.iter().copied().filter(|v| *v > 0.0).collect();
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = positive.iter().copied().fold(0.0, f64::max);
    if positive.is_empty() || lo == hi {
        let edge = if positive.is_empty() { 0.0 } else { lo };
        let mut counts = vec![0; bins];
        counts[0] = values.len();
        return Histogram {
            edges: vec![edge; bins + 1],
            counts,
        };
    }
    let (a, b) = (lo.log10(), hi.log10());
    let edges: Vec<f64> = (0..=bins)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / bins as f64))
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let bin = if v <= lo {
            0
        } else {
            (((v.log10() - a) / (b - a) * bins as f64).floor() as usize).min(bins - 1)
        };
        counts[bin] += 1;
    }
    Histogram { edges, counts }
}

pub fn summarize(errors: &[f64]) -> Result<StatsSummary> {
    if errors.is_empty() {
        return Err(Error::Usage("cannot summarize an empty error array".into()));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Usage("error array contains non-finite values".into()));
    }
    let n = errors.len() as f64;
    // Welford's update; the tests compare against the two-pass formula.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in errors.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let variance = if errors.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    Ok(StatsSummary {
        count: errors.len(),
        mean,
        variance,
        max: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: errors.iter().copied().fold(f64::INFINITY, f64::min),
        median: median(errors),
        histogram: log_histogram(errors, HISTOGRAM_BINS),
    })
}

/// Bar chart of a log-binned histogram.
pub fn histogram_svg(hist: &Histogram, title: &str) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let bins = hist.counts.len().max(1);
    let peak = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = (w - 2.0 * pad) / bins as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        w / 2.0,
        escape(title)
    );
    for (i, &c) in hist.counts.iter().enumerate() {
        let bh = (h - 2.0 * pad) * c as f64 / peak;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\" stroke=\"white\"/>\n",
            pad + i as f64 * bar_w,
            h - pad - bh,
            bar_w,
            bh
        ));
    }
    let axis_y = h - pad;
    svg.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{axis_y}\" x2=\"{}\" y2=\"{axis_y}\" stroke=\"black\"/>\n",
        w - pad
    ));
    if let (Some(first), Some(last)) = (hist.edges.first(), hist.edges.last()) {
        for (x, v, anchor) in [(pad, first, "start"), (w - pad, last, "end")] {
            svg.push_str(&format!(
                "<text x=\"{x}\" y=\"{}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"12\">{v:.3e}</text>\n",
                axis_y + 18.0
            ));
        }
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">error (log scale)</text>\n</svg>\n",
        w / 2.0,
        h - 8.0
    ));
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mesh_h: f64,
    pub elements: usize,
    pub nodes: usize,
    pub unknowns: usize,
    pub nonzeros: usize,
    pub analytic_median_s: f64,
    pub ad_median_s: f64,
    pub analytic_times_s: Vec<f64>,
    pub ad_times_s: Vec<f64>,
    pub analytic_memory_bytes: usize,
    pub ad_memory_bytes: usize,
}

#[derive(Serialize)]
struct BenchCsvRow {
    mesh_h: f64,
    elements: usize,
    nodes: usize,
    unknowns: usize,
    nonzeros: usize,
    analytic_median_s: f64,
    ad_median_s: f64,
    analytic_memory_bytes: usize,
    ad_memory_bytes: usize,
}

pub fn write_bench_csv(rows: &[BenchRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(BenchCsvRow {
            mesh_h: r.mesh_h,
            elements: r.elements,
            nodes: r.nodes,
            unknowns: r.unknowns,
            nonzeros: r.nonzeros,
            analytic_median_s: r.analytic_median_s,
            ad_median_s: r.ad_median_s,
            analytic_memory_bytes: r.analytic_memory_bytes,
            ad_memory_bytes: r.ad_memory_bytes,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Bytes held by the large buffers of one Jacobian evaluation: system
/// values and pattern, solution vectors, CG work vectors and, for the AD
/// engine, the dual copies and per-direction matrices.
pub fn memory_estimate(engine: JacobianEngine, unknowns: usize, nonzeros: usize, electrodes: usize) -> usize {
    let f = std::mem::size_of::<f64>();
    let idx = std::mem::size_of::<usize>();
    let patterns = electrodes - 1;
    let pattern = nonzeros * idx + (unknowns + 1) * idx;
    let cg = 5 * unknowns * f;
    match engine {
        JacobianEngine::Analytic => {
            pattern + nonzeros * f + (patterns + electrodes) * unknowns * f + cg
        }
        JacobianEngine::Ad => {
            let dual = std::mem::size_of::<crate::ad::Dual5>();
            // Dual matrix, its value part and five tangent parts.
            pattern + nonzeros * (dual + 6 * f) + patterns * unknowns * dual + cg + 2 * unknowns * f
        }
    }
}

/// Times both Jacobian engines on each mesh size over `anomalies` sampled
/// general anomalies, `repeats` times each.
pub fn scaling_benchmark(
    mesh_hs: &[f64],
    anomalies: usize,
    repeats: usize,
    seed: u64,
    forward: &ForwardConfig,
) -> Result<Vec<BenchRow>> {
    if mesh_hs.len() < 2 {
        return Err(Error::Config("the benchmark needs at least two mesh sizes".into()));
    }
    if anomalies == 0 || repeats == 0 {
        return Err(Error::Config("anomalies and repeats must be positive".into()));
    }
    let spec = DatasetSpec {
        mode: DatasetMode::General,
        seed,
        ..DatasetSpec::default()
    };
    let params: Vec<AnomalyParams> = (0..anomalies)
        .map(|i| sample_anomaly(&mut case_rng(seed, i), &spec))
        .collect();
    let layout = forward.layout()?;
    let mut rows = Vec::with_capacity(mesh_hs.len());
    for &h in mesh_hs {
        let mesh = Arc::new(build_disk_mesh(h, &layout)?);
        let model = ForwardModel::new(mesh, forward)?;
        let mut analytic = Vec::with_capacity(repeats);
        let mut ad = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            for p in &params {
                jacobian_analytic(&model, p)?;
            }
            analytic.push(start.elapsed().as_secs_f64() / anomalies as f64);
            let start = Instant::now();
            for p in &params {
                jacobian_ad(&model, p)?;
            }
            ad.push(start.elapsed().as_secs_f64() / anomalies as f64);
        }
        let unknowns = model.discretization.dimension();
        let nonzeros = model.discretization.nnz();
        let electrodes = model.electrode_count();
        rows.push(BenchRow {
            mesh_h: h,
            elements: model.mesh.element_count(),
            nodes: model.mesh.node_count(),
            unknowns,
            nonzeros,
            analytic_median_s: median(&analytic),
            ad_median_s: median(&ad),
            analytic_times_s: analytic,
            ad_times_s: ad,
            analytic_memory_bytes: memory_estimate(JacobianEngine::Analytic, unknowns, nonzeros, electrodes),
            ad_memory_bytes: memory_estimate(JacobianEngine::Ad, unknowns, nonzeros, electrodes),
        });
    }
    Ok(rows)
}
