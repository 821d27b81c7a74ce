//! Circular-anomaly conductivity model.
//!
//! The anomaly is the positive set of the level set
//! `LS(x, y) = r² - |(x, y) - c|²`; the conductivity blends `sigma_in` and
//! `sigma_out` through an arctangent-smoothed Heaviside of `LS`, evaluated at
//! element centroids to give a piecewise-constant field.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ad::{Scalar, PARAM_COUNT};
use crate::error::{Error, Result};

/// Index of each parameter in parameter vectors and Jacobian columns.
pub mod param {
    pub const CX: usize = 0;
    pub const CY: usize = 1;
    pub const R: usize = 2;
    pub const SIGMA_IN: usize = 3;
    pub const SIGMA_OUT: usize = 4;

    pub const NAMES: [&str; super::PARAM_COUNT] = ["cx", "cy", "r", "sigma_in", "sigma_out"];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyParams<T = f64> {
    pub r: T,
    pub cx: T,
    pub cy: T,
    pub sigma_in: T,
    pub sigma_out: T,
}

impl<T: Copy> AnomalyParams<T> {
    /// Parameters in Jacobian column order `(cx, cy, r, sigma_in, sigma_out)`.
    pub fn to_array(&self) -> [T; PARAM_COUNT] {
        [self.cx, self.cy, self.r, self.sigma_in, self.sigma_out]
    }

    pub fn from_array(v: [T; PARAM_COUNT]) -> Self {
        Self {
            cx: v[param::CX],
            cy: v[param::CY],
            r: v[param::R],
            sigma_in: v[param::SIGMA_IN],
            sigma_out: v[param::SIGMA_OUT],
        }
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> AnomalyParams<U> {
        AnomalyParams {
            r: f(self.r),
            cx: f(self.cx),
            cy: f(self.cy),
            sigma_in: f(self.sigma_in),
            sigma_out: f(self.sigma_out),
        }
    }
}

impl<T: Scalar> AnomalyParams<T> {
    pub fn values(&self) -> AnomalyParams<f64> {
        self.map(|x| x.value())
    }

    /// Positive radius and conductivities.
    pub fn validate(&self) -> Result<()> {
        let p = self.values();
        let ok = p.r > 0.0 && p.sigma_in > 0.0 && p.sigma_out > 0.0;
        if !ok || p.to_array().iter().any(|x| !x.is_finite()) {
            return Err(Error::Model(format!("non-physical anomaly parameters {p:?}")));
        }
        Ok(())
    }
}

impl AnomalyParams<f64> {
    pub fn new(r: f64, cx: f64, cy: f64, sigma_in: f64, sigma_out: f64) -> Self {
        Self {
            r,
            cx,
            cy,
            sigma_in,
            sigma_out,
        }
    }

    /// Anomaly lies inside the unit disk with radius at least `r_min`.
    pub fn is_strictly_inside(&self, r_min: f64) -> bool {
        self.r >= r_min && self.r + self.cx.hypot(self.cy) <= 1.0
    }

    /// Euclidean distance between parameter vectors.
    pub fn distance(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub epsilon: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { epsilon: 0.03 }
    }
}

impl SmoothingConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("smoothing width must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }
}

pub fn level_set<T: Scalar>(params: &AnomalyParams<T>, point: [f64; 2]) -> T {
    let dx = -params.cx + point[0];
    let dy = -params.cy + point[1];
    params.r * params.r - (dx * dx + dy * dy)
}

/// `H_ε(z) = atan(z/ε)/π + 1/2`.
pub fn smooth_heaviside<T: Scalar>(z: T, cfg: &SmoothingConfig) -> T {
    (z / cfg.epsilon).atan() * (1.0 / PI) + 0.5
}

/// `dH_ε/dz = ε / (π (z² + ε²))`.
pub fn smooth_heaviside_derivative(z: f64, cfg: &SmoothingConfig) -> f64 {
    let eps = cfg.epsilon;
    eps / (PI * (z * z + eps * eps))
}

pub fn conductivity_at<T: Scalar>(params: &AnomalyParams<T>, point: [f64; 2], cfg: &SmoothingConfig) -> T {
    let h = smooth_heaviside(level_set(params, point), cfg);
    // Blend through the contrast so equal conductivities give an exactly
    // constant field.
    params.sigma_out + (params.sigma_in - params.sigma_out) * h
}

/// Conductivity of each element, evaluated at its centroid.
pub fn element_conductivities<T: Scalar>(
    params: &AnomalyParams<T>,
    centroids: &[[f64; 2]],
    cfg: &SmoothingConfig,
) -> Vec<T> {
    centroids
        .iter()
        .map(|&c| conductivity_at(params, c, cfg))
        .collect()
}

/// Closed-form `∂σ_k/∂w` for every element, columns in [`param`] order.
pub fn element_conductivity_gradients(
    params: &AnomalyParams<f64>,
    centroids: &[[f64; 2]],
    cfg: &SmoothingConfig,
) -> Vec<[f64; PARAM_COUNT]> {
    let contrast = params.sigma_in - params.sigma_out;
    centroids
        .iter()
        .map(|&[x, y]| {
            let ls = level_set(params, [x, y]);
            let h = smooth_heaviside(ls, cfg);
            let dh = contrast * smooth_heaviside_derivative(ls, cfg);
            let mut g = [0.0; PARAM_COUNT];
            g[param::CX] = dh * 2.0 * (x - params.cx);
            g[param::CY] = dh * 2.0 * (y - params.cy);
            g[param::R] = dh * 2.0 * params.r;
            g[param::SIGMA_IN] = h;
            g[param::SIGMA_OUT] = 1.0 - h;
            g
        })
        .collect()
}
