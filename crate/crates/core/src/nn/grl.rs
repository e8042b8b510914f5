//! Gradient reversal layer and its warm-up schedule.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

pub const DEFAULT_GRL_GAMMA: f64 = 5.0;

/// `2 / (1 + exp(-γ·p)) - 1` for training progress `p ∈ [0, 1]`.
pub fn grl_schedule(progress: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::Config(format!("GRL progress must lie in [0, 1], got {progress}")));
    }
    Ok(2.0 / (1.0 + (-gamma * progress).exp()) - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grl {
    pub gamma: f64,
    pub progress: f64,
    pub weight: f64,
}

impl Grl {
    pub fn new(gamma: f64) -> Self {
        Self { gamma, progress: 0.0, weight: 0.0 }
    }

    pub fn set_progress(&mut self, progress: f64) -> Result<()> {
        self.weight = grl_schedule(progress, self.gamma)?;
        self.progress = progress;
        Ok(())
    }

    /// Identity on the forward pass; scales the backward gradient by `-weight`.
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.grl(x, self.weight)
    }
}
