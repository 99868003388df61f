//! Linear-mixture GRU forecaster.
//!
//! Each input row `x_t` (length `P`) is encoded as `B x_t` (length `r`), the
//! encoded window is run through a one-layer GRU, the final hidden state is
//! mapped back to the latent space by a linear head, and the latent forecast
//! is decoded with `B^T`. In quantile mode the head emits a base vector and
//! `Q - 1` increments that are accumulated through softplus, so latent
//! quantiles never cross.

mod adam;
mod checkpoint;
mod gru;
mod params;
mod rollout;
mod train;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gru::{forward, forward_point, forward_quantiles, loss_and_gradients, Objective, Sample, Workspace};
pub use params::{Mode, ModelShape, Params, Tensor};
pub use rollout::{rollout, rollout_path};
pub use train::{train, TrainConfig, TrainOutcome, TrainScope, WindowRef};

use crate::scalar::Real;

/// Level-major quantile forecast: `values[j * P + p]` is quantile `j` of
/// component `p`, and `latent[j * r + a]` the matching latent quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePrediction<T> {
    pub dim: usize,
    pub latent_dim: usize,
    pub values: Vec<T>,
    pub latent: Vec<T>,
    pub median: usize,
}

impl<T: Real> QuantilePrediction<T> {
    pub fn n_levels(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn level(&self, j: usize) -> &[T] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn latent_level(&self, j: usize) -> &[T] {
        &self.latent[j * self.latent_dim..(j + 1) * self.latent_dim]
    }

    pub fn median(&self) -> &[T] {
        self.level(self.median)
    }

    pub fn lower(&self) -> &[T] {
        self.level(0)
    }

    pub fn upper(&self) -> &[T] {
        self.level(self.n_levels() - 1)
    }

    /// Number of adjacent `(level, component)` pairs that cross in observation space.
    pub fn observation_crossings(&self) -> usize {
        (1..self.n_levels()).map(|j| self.level(j).iter().zip(self.level(j - 1)).filter(|(a, b)| a < b).count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Forecast<T> {
    Point(Vec<T>),
    Quantiles(QuantilePrediction<T>),
}

impl<T: Real> Forecast<T> {
    /// The point forecast, or the median in quantile mode.
    pub fn center(&self) -> &[T] {
        match self {
            Forecast::Point(v) => v,
            Forecast::Quantiles(q) => q.median(),
        }
    }

    pub fn quantiles(&self) -> Option<&QuantilePrediction<T>> {
        match self {
            Forecast::Quantiles(q) => Some(q),
            Forecast::Point(_) => None,
        }
    }
}
