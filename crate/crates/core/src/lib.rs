//! Complete-electrode-model EIT on the unit disk: meshing, FEM forward
//! solves generic over real and dual scalars, analytic-adjoint and
//! forward-mode Jacobians, Levenberg-Marquardt reconstruction of circular
//! anomalies, and the batch experiments built on them.

pub mod ad;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod forward;
pub mod jacobian;
pub mod lm;
pub mod mesh;
pub mod model;
pub mod solver;
pub mod sparse;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
