//! Conditional continuous normalizing flow mapping latents to attribute scores.
//!
//! A [`CnfModel`] stacks blocks whose dynamics are small ConcatSquash
//! networks conditioned on `(t, score)`. Each block is integrated over
//! `t in [0, 1]` with fixed-step RK4; the base density is a standard normal.

mod block;
mod density;
mod edit;
mod format;
mod layer;
mod model;
mod ode;
mod train;

pub use block::BlockField;
pub use density::{
    forward_map, log_density, log_density_blocks, reverse_map, standard_normal_log_pdf,
};
pub use edit::{clamp_score, edit_latent, MAX_EDIT_DELTA};
pub use format::{FLOW_MAGIC, FLOW_VERSION};
pub use layer::{layer_param_count, ConcatSquashLayer, CONTEXT_WIDTH};
pub use model::{CnfModel, FlowConfig};
pub use ode::{integrate, integrate_with_trace, Direction, Dynamics, FnDynamics, TRACE_FD_STEP};
pub use train::{nll_and_gradient, train_mapper, MapperTraining};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point in the editable latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent vector has non-finite entries"));
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Max-norm distance to another latent of the same length.
    pub fn max_abs_diff(&self, other: &LatentVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl AsRef<[f64]> for LatentVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Conditioning pair fed to every layer: flow time and attribute score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MappingContext {
    pub t: f64,
    pub score: f64,
}

impl MappingContext {
    pub fn new(t: f64, score: f64) -> Self {
        Self { t, score }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t) || !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(format!(
                "context out of range: t={}, score={}",
                self.t, self.score
            )));
        }
        Ok(())
    }

    pub(crate) fn as_array(&self) -> [f64; 2] {
        [self.t, self.score]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverScheme {
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// RK4 steps per block.
    pub steps: usize,
    pub scheme: SolverScheme,
    /// Round-trip tolerance (max-norm) used by self-checks.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            steps: 16,
            scheme: SolverScheme::Rk4,
            tolerance: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.tolerance > 0.0) {
            return Err(Error::invalid(format!("bad solver config {self:?}")));
        }
        Ok(())
    }
}

pub(crate) fn check_score(score: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::invalid(format!("score {score} outside [0, 1]")));
    }
    Ok(())
}
