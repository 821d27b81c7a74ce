mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eit_core::error::Error;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "eit", version, about = "Complete-electrode-model EIT toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` (and `dataset.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for `experiment` and `bench`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a disk mesh and export it as JSON.
    Mesh {
        #[arg(long)]
        h: Option<f64>,
    },
    /// Simulate electrode voltages for one anomaly.
    Simulate {
        #[arg(long)]
        h: Option<f64>,
        #[command(flatten)]
        anomaly: AnomalyArgs,
    },
    /// Compute Jacobians with one engine, or compare engines over seeded anomalies.
    Jacobian {
        #[arg(long, value_enum, default_value = "compare")]
        engine: EngineArg,
        /// Number of seeded general anomalies for `--engine compare`.
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long)]
        h: Option<f64>,
        #[command(flatten)]
        anomaly: AnomalyArgs,
    },
    /// Reconstruct an anomaly from a measurements JSON file.
    Reconstruct {
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, value_enum, default_value = "general")]
        mode: ModeArg,
        /// Inversion mesh size.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Generate a seeded dataset as JSON lines.
    Dataset {
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Reconstruct every case of a dataset with every configured engine.
    /// Without `--dataset` the dataset is generated first from the config.
    Experiment {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Time both Jacobian engines over a range of mesh sizes.
    Bench,
}

#[derive(Args, Debug, Clone, Default)]
pub struct AnomalyArgs {
    /// Anomaly as JSON, e.g. '{"r":0.3,"cx":0,"cy":0,"sigma_in":1.4,"sigma_out":0.7}'.
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub cx: Option<f64>,
    #[arg(long)]
    pub cy: Option<f64>,
    #[arg(long)]
    pub sigma_in: Option<f64>,
    #[arg(long)]
    pub sigma_out: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineArg {
    Analytic,
    Ad,
    Fd,
    Compare,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Fixed,
    General,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Json(_) => 2,
        Error::Io(_) | Error::Csv(_) => 4,
        _ => 3,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Usage(_) => "usage",
        Error::Mesh(_) => "mesh",
        Error::Model(_) => "model",
        Error::Singular(_) => "singular",
        Error::Solver { .. } => "solver",
        Error::Reconstruction { .. } => "reconstruction",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn resolve(global: &GlobalArgs, parallel: bool) -> Result<RunConfig, Error> {
    let mut config = RunConfig::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        config.seed = seed;
        config.dataset.seed = seed;
    }
    if let Some(out) = &global.out {
        config.output_dir = out.clone();
    }
    let threads = match (global.jobs, parallel) {
        (Some(0), _) => return Err(Error::Usage("--jobs must be at least 1".into())),
        (Some(_), false) => {
            return Err(Error::Usage("--jobs applies only to experiment and bench".into()))
        }
        (Some(n), true) => n,
        (None, true) => 0,
        (None, false) => 1,
    };
    // Fails only if a pool already exists, which cannot happen here.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    let parallel = matches!(cli.command, Command::Experiment { .. } | Command::Bench);
    let mut config = resolve(&cli.global, parallel)?;
    let argv: Vec<String> = std::env::args().collect();
    let set_h = |config: &mut RunConfig, h: Option<f64>| {
        if let Some(h) = h {
            config.mesh_h = h;
        }
    };
    match cli.command {
        Command::Mesh { h } => {
            set_h(&mut config, h);
            config.validate()?;
            commands::mesh(&config, &argv)
        }
        Command::Simulate { h, anomaly } => {
            set_h(&mut config, h);
            apply_anomaly(&mut config, &anomaly)?;
            config.validate()?;
            commands::simulate(&config, &argv)
        }
        Command::Jacobian {
            engine,
            cases,
            h,
            anomaly,
        } => {
            set_h(&mut config, h);
            apply_anomaly(&mut config, &anomaly)?;
            config.validate()?;
            commands::jacobian(&config, engine, cases, &argv)
        }
        Command::Reconstruct { measurements, mode, h } => {
            set_h(&mut config, h);
            config.validate()?;
            commands::reconstruct(&config, &measurements, mode, &argv)
        }
        Command::Dataset { cases, mode } => {
            apply_dataset(&mut config, cases, mode);
            config.validate()?;
            commands::dataset(&config, &argv)
        }
        Command::Experiment { dataset, cases, mode } => {
            if dataset.is_some() && (cases.is_some() || mode.is_some()) {
                return Err(Error::Usage(
                    "--cases and --mode describe a generated dataset and conflict with --dataset".into(),
                ));
            }
            apply_dataset(&mut config, cases, mode);
            config.validate()?;
            commands::experiment(&config, dataset.as_deref(), &argv)
        }
        Command::Bench => {
            config.validate()?;
            commands::bench(&config, &argv)
        }
    }
}

fn apply_dataset(config: &mut RunConfig, cases: Option<usize>, mode: Option<ModeArg>) {
    if let Some(n) = cases {
        config.dataset.n_cases = n;
    }
    if let Some(mode) = mode {
        config.dataset.mode = commands::dataset_mode(mode);
    }
}

fn apply_anomaly(config: &mut RunConfig, a: &AnomalyArgs) -> Result<(), Error> {
    if let Some(json) = &a.params {
        config.anomaly = serde_json::from_str(json)
            .map_err(|e| Error::Usage(format!("--params: {e}")))?;
    }
    let p = &mut config.anomaly;
    for (slot, value) in [
        (&mut p.r, a.r),
        (&mut p.cx, a.cx),
        (&mut p.cy, a.cy),
        (&mut p.sigma_in, a.sigma_in),
        (&mut p.sigma_out, a.sigma_out),
    ] {
        if let Some(v) = value {
            *slot = v;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({
                "error": { "kind": kind(&e), "message": e.to_string() }
            });
            eprintln!("{body}");
            ExitCode::from(exit_code(&e))
        }
    }
}
