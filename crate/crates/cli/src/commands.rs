use std::path::Path;

use eit_core::error::{Error, Result};
use eit_core::experiments::{
    case_rng, generate_dataset, histogram_svg, read_jsonl, run_experiment, sample_anomaly,
    scaling_benchmark, summarize, write_bench_csv, write_jsonl, write_results_csv, DatasetMode,
    DatasetSpec, StatsSummary,
};
use eit_core::forward::{ForwardModel, Measurements};
use eit_core::jacobian::{
    compare_jacobians, jacobian as compute_jacobian, jacobian_ad, jacobian_analytic, jacobian_fd, JacobianEngine,
    JacobianMatrix,
};
use eit_core::lm::{reconstruct as lm_reconstruct, FitMode, LmTrace};
use eit_core::model::{param, AnomalyParams};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::OutputDir;
use crate::{EngineArg, ModeArg};

pub fn dataset_mode(mode: ModeArg) -> DatasetMode {
    match mode {
        ModeArg::Fixed => DatasetMode::Fixed,
        ModeArg::General => DatasetMode::General,
    }
}

fn done(out: OutputDir, command: &str, config: &RunConfig, argv: &[String]) -> Result<()> {
    let path = out.path().display().to_string();
    out.finish(command, config, argv)?;
    println!("{command}: wrote {path}");
    Ok(())
}

pub fn mesh(config: &RunConfig, argv: &[String]) -> Result<()> {
    let model = ForwardModel::build(config.mesh_h, &config.forward)?;
    let mut out = OutputDir::create(config)?;
    out.json("mesh.json", &model.mesh.to_file())?;
    done(out, "mesh", config, argv)
}

pub fn simulate(config: &RunConfig, argv: &[String]) -> Result<()> {
    let model = ForwardModel::build(config.mesh_h, &config.forward)?;
    let measurements = model.measurements(&config.anomaly, Some(config.seed))?;
    let mut out = OutputDir::create(config)?;
    out.json("measurements.json", &measurements)?;
    done(out, "simulate", config, argv)
}

#[derive(Serialize)]
struct JacobianFile<'a> {
    engine: &'a str,
    params: AnomalyParams,
    columns: [&'static str; 5],
    rows: Vec<[f64; 5]>,
}

fn write_matrix_csv(j: &JacobianMatrix, w: impl std::io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(param::NAMES)?;
    for row in j.to_rows() {
        csv.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ComparisonRow {
    case_id: usize,
    r: f64,
    cx: f64,
    cy: f64,
    sigma_in: f64,
    sigma_out: f64,
    relative_frobenius: f64,
    frobenius_diff: f64,
    max_column_error: f64,
}

#[derive(Serialize)]
struct ComparisonSummary {
    cases: usize,
    mesh_h: f64,
    elements: usize,
    relative_frobenius: StatsSummary,
}

pub fn jacobian(config: &RunConfig, engine: EngineArg, cases: usize, argv: &[String]) -> Result<()> {
    let model = ForwardModel::build(config.mesh_h, &config.forward)?;
    let mut out = OutputDir::create(config)?;
    let single = |name: &str, j: JacobianMatrix, out: &mut OutputDir| -> Result<()> {
        out.json(
            "jacobian.json",
            &JacobianFile {
                engine: name,
                params: config.anomaly,
                columns: param::NAMES,
                rows: j.to_rows(),
            },
        )?;
        write_matrix_csv(&j, out.file("jacobian.csv")?)
    };
    match engine {
        EngineArg::Analytic => single("analytic", compute_jacobian(&model, &config.anomaly, JacobianEngine::Analytic)?, &mut out)?,
        EngineArg::Ad => single("ad", compute_jacobian(&model, &config.anomaly, JacobianEngine::Ad)?, &mut out)?,
        EngineArg::Fd => single("fd", jacobian_fd(&model, &config.anomaly, config.fd_step)?, &mut out)?,
        EngineArg::Compare => {
            if cases == 0 {
                return Err(Error::Config("--cases must be at least 1".into()));
            }
            let spec = DatasetSpec {
                mode: DatasetMode::General,
                ..config.dataset.clone()
            };
            let rows = (0..cases)
                .into_par_iter()
                .map(|case_id| {
                    let p = sample_anomaly(&mut case_rng(config.seed, case_id), &spec);
                    let c = compare_jacobians(&jacobian_analytic(&model, &p)?, &jacobian_ad(&model, &p)?)?;
                    Ok(ComparisonRow {
                        case_id,
                        r: p.r,
                        cx: p.cx,
                        cy: p.cy,
                        sigma_in: p.sigma_in,
                        sigma_out: p.sigma_out,
                        relative_frobenius: c.relative_frobenius,
                        frobenius_diff: c.frobenius_diff,
                        max_column_error: c.max_column_error(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut csv = csv::Writer::from_writer(out.file("comparison.csv")?);
            for r in &rows {
                csv.serialize(r)?;
            }
            csv.flush()?;
            drop(csv);
            let rel: Vec<f64> = rows.iter().map(|r| r.relative_frobenius).collect();
            out.json(
                "comparison_summary.json",
                &ComparisonSummary {
                    cases,
                    mesh_h: config.mesh_h,
                    elements: model.mesh.element_count(),
                    relative_frobenius: summarize(&rel)?,
                },
            )?;
        }
    }
    done(out, "jacobian", config, argv)
}

#[derive(Serialize)]
struct ReconstructionFile<'a> {
    params: AnomalyParams,
    trace: &'a LmTrace,
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    loss: f64,
    relative_loss: f64,
    lambda: f64,
    step_norm: f64,
    line_search_steps: usize,
    accepted: bool,
}

pub fn reconstruct(config: &RunConfig, path: &Path, mode: ModeArg, argv: &[String]) -> Result<()> {
    let mut out = OutputDir::create(config)?;
    let measurements: Measurements = serde_json::from_slice(&out.input(path)?)?;
    measurements.validate()?;
    if measurements.mesh_h == config.mesh_h {
        eprintln!(
            "warning: measurements were simulated at the inversion mesh size h = {}",
            config.mesh_h
        );
    }
    let model = ForwardModel::build(config.mesh_h, &config.forward)?;
    if measurements.voltages.len() != model.measurement_count() {
        return Err(Error::Usage(format!(
            "{} measurements for a model producing {}",
            measurements.voltages.len(),
            model.measurement_count()
        )));
    }
    let fit = match mode {
        ModeArg::General => FitMode::General,
        ModeArg::Fixed => FitMode::Fixed {
            sigma_in: config.dataset.fixed_sigma_in,
            sigma_out: config.dataset.fixed_sigma_out,
        },
    };
    let rec = lm_reconstruct(&model, &measurements.voltages, &fit.default_initial(), fit, &config.lm)?;
    out.json(
        "reconstruction.json",
        &ReconstructionFile {
            params: rec.params,
            trace: &rec.trace,
        },
    )?;
    let mut csv = csv::Writer::from_writer(out.file("trace.csv")?);
    for it in &rec.trace.iterations {
        csv.serialize(TraceRow {
            iteration: it.iteration,
            loss: it.loss,
            relative_loss: it.relative_loss,
            lambda: it.lambda,
            step_norm: it.step_norm,
            line_search_steps: it.line_search_steps,
            accepted: it.accepted,
        })?;
    }
    csv.flush()?;
    drop(csv);
    done(out, "reconstruct", config, argv)
}

pub fn dataset(config: &RunConfig, argv: &[String]) -> Result<()> {
    let records = generate_dataset(&config.dataset, &config.forward)?;
    let mut out = OutputDir::create(config)?;
    write_jsonl(&records, out.file("dataset.jsonl")?)?;
    done(out, "dataset", config, argv)
}

pub fn experiment(config: &RunConfig, dataset: Option<&Path>, argv: &[String]) -> Result<()> {
    let mut out = OutputDir::create(config)?;
    let records = match dataset {
        Some(path) => read_jsonl(&out.input(path)?[..])?,
        None => {
            let records = generate_dataset(&config.dataset, &config.forward)?;
            write_jsonl(&records, out.file("dataset.jsonl")?)?;
            records
        }
    };
    let results = run_experiment(&records, &config.forward, &config.experiment())?;
    out.json("results.json", &results)?;
    out.json("summary.json", &results.summary)?;
    write_results_csv(&results.rows(), out.file("results.csv")?)?;
    let summaries = [
        ("hist_true_analytic.svg", "error vs truth, analytic engine", &results.summary.true_analytic),
        ("hist_true_ad.svg", "error vs truth, AD engine", &results.summary.true_ad),
        ("hist_ad_analytic.svg", "AD vs analytic reconstructions", &results.summary.ad_analytic),
    ];
    for (name, title, summary) in summaries {
        if let Some(s) = summary {
            out.text(name, &histogram_svg(&s.histogram, title))?;
        }
    }
    done(out, "experiment", config, argv)
}

pub fn bench(config: &RunConfig, argv: &[String]) -> Result<()> {
    let b = &config.bench;
    let rows = scaling_benchmark(&b.mesh_h, b.anomalies, b.repeats, config.seed, &config.forward)?;
    let mut out = OutputDir::create(config)?;
    write_bench_csv(&rows, out.file("bench.csv")?)?;
    out.json("bench.json", &rows)?;
    done(out, "bench", config, argv)
}
