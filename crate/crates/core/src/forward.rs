//! The forward operator: anomaly parameters to electrode voltages.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{extract_voltages, trig_patterns, CemDiscretization, CurrentPatterns};
use crate::mesh::{build_disk_mesh_graded, ElectrodeLayout, Grading, Mesh};
use crate::model::{element_conductivities, AnomalyParams, SmoothingConfig};
use crate::solver::{LinearSolve, LinearSolver, SolverOptions};

/// Electrode layout, excitation, smoothing and solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    pub electrodes: usize,
    pub amplitude: f64,
    pub arc_length: f64,
    pub contact_impedance: f64,
    pub epsilon: f64,
    pub solver: SolverOptions,
    /// Refine generated meshes towards the electrode endpoints.
    pub electrode_grading: bool,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            electrodes: 16,
            amplitude: 3.0,
            arc_length: PI / 64.0,
            contact_impedance: 5e-6,
            epsilon: 0.03,
            solver: SolverOptions::default(),
            electrode_grading: false,
        }
    }
}

impl ForwardConfig {
    pub fn layout(&self) -> Result<ElectrodeLayout> {
        ElectrodeLayout::uniform(self.electrodes, self.arc_length, self.contact_impedance)
    }

    pub fn patterns(&self) -> Result<CurrentPatterns> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!(
                "current amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        trig_patterns(self.electrodes, self.amplitude)
    }

    pub fn smoothing(&self) -> Result<SmoothingConfig> {
        SmoothingConfig::new(self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        self.patterns()?;
        self.smoothing()?;
        self.solver.validate()
    }
}

/// Flattened voltages, pattern-major: entry `(j, l)` sits at `j·L + l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurements {
    pub electrodes: usize,
    pub patterns: usize,
    pub mesh_h: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    pub voltages: Vec<f64>,
}

impl Measurements {
    pub fn validate(&self) -> Result<()> {
        if self.voltages.len() != self.electrodes * self.patterns {
            return Err(Error::Usage(format!(
                "{} voltages for {} patterns on {} electrodes",
                self.voltages.len(),
                self.patterns,
                self.electrodes
            )));
        }
        if self.voltages.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("measurements contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn pattern(&self, j: usize) -> &[f64] {
        &self.voltages[j * self.electrodes..(j + 1) * self.electrodes]
    }
}

/// Mesh, discretization and solver bundled for repeated simulation.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    pub mesh: Arc<Mesh>,
    pub layout: ElectrodeLayout,
    pub patterns: CurrentPatterns,
    pub smoothing: SmoothingConfig,
    pub discretization: Arc<CemDiscretization>,
    pub centroids: Arc<Vec<[f64; 2]>>,
    pub solver: LinearSolver,
}

impl ForwardModel {
    pub fn new(mesh: Arc<Mesh>, config: &ForwardConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout()?;
        let patterns = config.patterns()?;
        let discretization = Arc::new(CemDiscretization::new(&mesh, &layout, &patterns)?);
        Ok(Self {
            centroids: Arc::new(mesh.centroids()),
            mesh,
            layout,
            patterns,
            smoothing: config.smoothing()?,
            discretization,
            solver: LinearSolver::new(config.solver),
        })
    }

    /// Meshes the unit disk at `h` and sets up the model.
    pub fn build(h: f64, config: &ForwardConfig) -> Result<Self> {
        let layout = config.layout()?;
        let grading = config.electrode_grading.then(|| Grading::for_layout(&layout));
        let mesh = build_disk_mesh_graded(h, &layout, grading)?;
        Self::new(Arc::new(mesh), config)
    }

    /// Same discretization with different solver settings and fresh counters.
    pub fn with_solver(&self, options: SolverOptions) -> Result<Self> {
        options.validate()?;
        Ok(Self {
            solver: LinearSolver::new(options),
            ..self.clone()
        })
    }

    pub fn electrode_count(&self) -> usize {
        self.layout.count
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.pattern_count()
    }

    pub fn measurement_count(&self) -> usize {
        self.electrode_count() * self.pattern_count()
    }

    pub fn conductivities<T: LinearSolve>(&self, params: &AnomalyParams<T>) -> Vec<T> {
        element_conductivities(params, &self.centroids, &self.smoothing)
    }

    /// Solution vectors `θ_j = (α_j, β_j)`, one per pattern.
    pub fn solve_states<T: LinearSolve>(&self, sigma: &[T]) -> Result<Vec<Vec<T>>> {
        let system = self.discretization.assemble(&self.mesh, sigma)?;
        T::solve_system(&self.solver, &system.matrix, &self.discretization.rhs)
    }

    /// Voltages for a given element conductivity field.
    pub fn simulate_sigma<T: LinearSolve>(&self, sigma: &[T]) -> Result<Vec<T>> {
        let n = self.mesh.node_count();
        let states = self.solve_states(sigma)?;
        let mut out = Vec::with_capacity(self.measurement_count());
        for theta in &states {
            out.extend(extract_voltages(&theta[n..]));
        }
        Ok(out)
    }

    pub fn simulate<T: LinearSolve>(&self, params: &AnomalyParams<T>) -> Result<Vec<T>> {
        params.validate()?;
        self.simulate_sigma(&self.conductivities(params))
    }

    pub fn measurements(&self, params: &AnomalyParams, seed: Option<u64>) -> Result<Measurements> {
        Ok(Measurements {
            electrodes: self.electrode_count(),
            patterns: self.pattern_count(),
            mesh_h: self.mesh.h_target,
            seed,
            voltages: self.simulate(params)?,
        })
    }
}
