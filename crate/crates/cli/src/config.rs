use std::path::{Path, PathBuf};

use eit_core::error::{Error, Result};
use eit_core::experiments::{DatasetSpec, ExperimentConfig};
use eit_core::forward::ForwardConfig;
use eit_core::jacobian::{JacobianEngine, DEFAULT_FD_STEP};
use eit_core::lm::LmConfig;
use eit_core::model::AnomalyParams;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub mesh_h: Vec<f64>,
    pub anomalies: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            mesh_h: vec![0.13, 0.08, 0.05, 0.04, 0.03],
            anomalies: 3,
            repeats: 3,
        }
    }
}

/// Everything a subcommand needs; every field has a default so an empty
/// `{}` file is a valid configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub forward: ForwardConfig,
    /// Mesh used by `mesh`, `simulate`, `jacobian` and `reconstruct`.
    pub mesh_h: f64,
    /// Anomaly used by `simulate` and single-case `jacobian`.
    pub anomaly: AnomalyParams,
    pub fd_step: f64,
    pub lm: LmConfig,
    pub dataset: DatasetSpec,
    pub inversion_mesh_h: f64,
    pub engines: Vec<JacobianEngine>,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let experiment = ExperimentConfig::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("eit-out"),
            forward: ForwardConfig::default(),
            mesh_h: 0.06,
            anomaly: AnomalyParams::new(0.3, 0.2, -0.1, 1.4, 0.7),
            fd_step: DEFAULT_FD_STEP,
            lm: LmConfig::default(),
            dataset: DatasetSpec::default(),
            inversion_mesh_h: experiment.inversion_mesh_h,
            engines: experiment.engines,
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.forward.validate()?;
        self.lm.validate()?;
        self.dataset.validate()?;
        self.anomaly.validate()?;
        for (name, h) in [("mesh_h", self.mesh_h), ("inversion_mesh_h", self.inversion_mesh_h)] {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {h}")));
            }
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config(format!("fd_step must be positive, got {}", self.fd_step)));
        }
        if self.engines.is_empty() {
            return Err(Error::Config("engines must name at least one Jacobian engine".into()));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            inversion_mesh_h: self.inversion_mesh_h,
            engines: self.engines.clone(),
            lm: self.lm.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        crate::output::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
