use super::adam::Adam;
use super::gru::{loss_and_gradients, Objective, Sample};
use super::params::{ModelShape, Params};
use crate::dataset::DataView;
use crate::error::{Error, Result};
use crate::scalar::Real;
use log::debug;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Optimization and architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub window: usize,
    /// Latent size `r`; `None` means `min(16, P)`.
    pub latent: Option<usize>,
    pub hidden: usize,
    pub epochs_global: usize,
    pub epochs_proto: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub batch: usize,
    /// L2-SP weight toward the GLOBAL parameters.
    pub eta: f64,
    /// Huber transition.
    pub delta: f64,
    /// Quantile grid, used when `quantile` is set.
    pub levels: Vec<f64>,
    pub quantile: bool,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 12,
            latent: None,
            hidden: 32,
            epochs_global: 30,
            epochs_proto: 15,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            batch: 64,
            eta: 1e-3,
            delta: 1.0,
            levels: vec![0.1, 0.5, 0.9],
            quantile: false,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self, input: usize) -> ModelShape {
        let latent = self.latent.unwrap_or(input.min(16));
        if self.quantile {
            ModelShape::quantile(input, latent, self.hidden, self.window, self.levels.clone())
        } else {
            ModelShape::point(input, latent, self.hidden, self.window)
        }
    }

    pub fn objective(&self, shape: &ModelShape) -> Objective {
        Objective::for_shape(shape, self.delta)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.window == 0 || self.hidden == 0 || self.batch == 0 {
            return bad("window, hidden and batch must be positive");
        }
        if self.latent == Some(0) {
            return bad("latent size must be positive");
        }
        if self.eta < 0.0 || !self.eta.is_finite() {
            return bad("eta must be finite and >= 0");
        }
        if self.delta <= 0.0 || !self.delta.is_finite() {
            return bad("Huber delta must be > 0");
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return bad("learning rate and clip norm must be > 0");
        }
        if self.quantile
            && (self.levels.is_empty()
                || self.levels.iter().any(|&q| !(q > 0.0 && q < 1.0))
                || self.levels.windows(2).any(|w| w[0] >= w[1]))
        {
            return bad("quantile levels must be nonempty and strictly increasing inside (0, 1)");
        }
        Ok(())
    }
}

/// A training window of series `series` ending at time `end`, target `end + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRef {
    pub series: u32,
    pub end: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    All,
    /// GRU and heads only; the shared mixture stays frozen.
    Specialized,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: Params<T>,
    pub epoch_losses: Vec<f64>,
}

/// Adam on the one-step objective over shuffled mini-batches.
///
/// With an anchor, the objective gains `eta * ||theta - anchor||^2` and only
/// the specialized parameters move. Shuffling is seeded and batch gradients
/// are reduced in a fixed order, so results are reproducible bit for bit.
pub fn train<T: Real>(
    init: Params<T>,
    anchor: Option<&Params<T>>,
    data: DataView<'_, T>,
    windows: &[WindowRef],
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    if windows.is_empty() {
        return Err(Error::InvalidData("no training windows".into()));
    }
    let mut params = init;
    let scope = if anchor.is_some() { TrainScope::Specialized } else { TrainScope::All };
    let range = match scope {
        TrainScope::All => 0..params.len(),
        TrainScope::Specialized => params.layout().specialized(),
    };
    let w = params.shape().window;
    let objective = cfg.objective(params.shape());
    let mut adam = Adam::new(params.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<WindowRef> = windows.to_vec();
    let clip = T::lit(cfg.clip_norm);
    let mut epoch_losses = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            let samples: Vec<Sample<'_, T>> = batch
                .iter()
                .map(|r| Sample {
                    window: data.window(r.series as usize, r.end as usize, w),
                    target: data.target(r.series as usize, r.end as usize + 1),
                })
                .collect();
            let diverged = |loss: Option<f64>| Error::Divergence {
                epoch,
                last_finite_epoch: epoch.checked_sub(1),
                last_loss: loss.or(epoch_losses.last().copied()),
            };
            let (loss, mut grad) = match loss_and_gradients(&params, anchor.map(|a| (a, cfg.eta)), &samples, &objective)
            {
                Ok(v) => v,
                Err(Error::Divergence { .. }) => return Err(diverged(None)),
                Err(e) => return Err(e),
            };
            let norm = grad[range.clone()].iter().map(|&g| g * g).sum::<T>().sqrt();
            if !norm.is_finite() {
                return Err(diverged(None));
            }
            if norm > clip {
                let s = clip / norm;
                for g in &mut grad[range.clone()] {
                    *g *= s;
                }
            }
            adam.step(params.as_mut_slice(), &grad, range.clone());
            sum += loss.as_f64() * batch.len() as f64;
        }
        if !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                last_finite_epoch: epoch.checked_sub(1),
                last_loss: epoch_losses.last().copied(),
            });
        }
        let mean = sum / order.len() as f64;
        debug!("epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { params, epoch_losses })
}
