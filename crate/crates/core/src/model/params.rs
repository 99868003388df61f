use crate::error::{Error, Result};
use crate::scalar::Real;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Point,
    Quantile,
}

/// Dimensions of one forecaster.
///
/// `levels` holds the quantile grid in quantile mode and is empty in point mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input: usize,
    pub latent: usize,
    pub hidden: usize,
    pub window: usize,
    pub levels: Vec<f64>,
}

impl ModelShape {
    pub fn point(input: usize, latent: usize, hidden: usize, window: usize) -> Self {
        Self { input, latent, hidden, window, levels: Vec::new() }
    }

    pub fn quantile(input: usize, latent: usize, hidden: usize, window: usize, levels: Vec<f64>) -> Self {
        Self { input, latent, hidden, window, levels }
    }

    pub fn mode(&self) -> Mode {
        if self.levels.is_empty() {
            Mode::Point
        } else {
            Mode::Quantile
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Index of the level closest to 0.5 (lower one on ties).
    pub fn median_level(&self) -> usize {
        let mut best = 0;
        for (j, &q) in self.levels.iter().enumerate() {
            if (q - 0.5).abs() < (self.levels[best] - 0.5).abs() {
                best = j;
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.latent == 0 || self.hidden == 0 || self.window == 0 {
            return Err(Error::InvalidConfig(format!("degenerate model shape {self:?}")));
        }
        if self.levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) || self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "quantile levels must be strictly increasing inside (0, 1), got {:?}",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Parameter tensors in declared (checkpoint) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    Mixture,
    UpdateW,
    UpdateU,
    UpdateB,
    ResetW,
    ResetU,
    ResetB,
    CandW,
    CandU,
    CandB,
    PointW,
    PointB,
    QuantW,
    QuantB,
}

impl Tensor {
    pub const ALL: [Tensor; 14] = [
        Tensor::Mixture,
        Tensor::UpdateW,
        Tensor::UpdateU,
        Tensor::UpdateB,
        Tensor::ResetW,
        Tensor::ResetU,
        Tensor::ResetB,
        Tensor::CandW,
        Tensor::CandU,
        Tensor::CandB,
        Tensor::PointW,
        Tensor::PointB,
        Tensor::QuantW,
        Tensor::QuantB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::Mixture => "mixture",
            Tensor::UpdateW => "gru.update.w",
            Tensor::UpdateU => "gru.update.u",
            Tensor::UpdateB => "gru.update.b",
            Tensor::ResetW => "gru.reset.w",
            Tensor::ResetU => "gru.reset.u",
            Tensor::ResetB => "gru.reset.b",
            Tensor::CandW => "gru.cand.w",
            Tensor::CandU => "gru.cand.u",
            Tensor::CandB => "gru.cand.b",
            Tensor::PointW => "head.point.w",
            Tensor::PointB => "head.point.b",
            Tensor::QuantW => "head.quantile.w",
            Tensor::QuantB => "head.quantile.b",
        }
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    bounds: [usize; 15],
}

impl Layout {
    fn new(s: &ModelShape) -> Self {
        let (p, r, h, q) = (s.input, s.latent, s.hidden, s.n_levels());
        let sizes = [r * p, h * r, h * h, h, h * r, h * h, h, h * r, h * h, h, r * h, r, r * q * h, r * q];
        let mut bounds = [0; 15];
        for (k, sz) in sizes.iter().enumerate() {
            bounds[k + 1] = bounds[k] + sz;
        }
        Self { bounds }
    }

    pub fn range(&self, t: Tensor) -> Range<usize> {
        let k = t as usize;
        self.bounds[k]..self.bounds[k + 1]
    }

    pub fn total(&self) -> usize {
        self.bounds[14]
    }

    /// Parameters shared across clusters (the mixture `B`).
    pub fn shared(&self) -> Range<usize> {
        self.range(Tensor::Mixture)
    }

    /// Parameters specialized per cluster (GRU and heads).
    pub fn specialized(&self) -> Range<usize> {
        self.bounds[1]..self.bounds[14]
    }

    /// Splits a flat buffer into per-tensor slices.
    pub fn split<'a, T>(&self, buf: &'a [T]) -> [&'a [T]; 14] {
        std::array::from_fn(|k| &buf[self.bounds[k]..self.bounds[k + 1]])
    }

    pub fn split_mut<'a, T>(&self, mut buf: &'a mut [T]) -> [&'a mut [T]; 14] {
        let mut out: [&'a mut [T]; 14] = Default::default();
        for (k, slot) in out.iter_mut().enumerate() {
            let (head, tail) = buf.split_at_mut(self.bounds[k + 1] - self.bounds[k]);
            *slot = head;
            buf = tail;
        }
        out
    }
}

/// All learnable parameters of one forecaster, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    shape: ModelShape,
    layout: Layout,
    data: Vec<T>,
}

impl<T: Real> Params<T> {
    pub fn zeros(shape: ModelShape) -> Self {
        let layout = shape.layout();
        let data = vec![T::zero(); layout.total()];
        Self { shape, layout, data }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights; GRU biases start at zero.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut out = Self::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, r, h) = (out.shape.input, out.shape.latent, out.shape.hidden);
        for t in Tensor::ALL {
            let fan_in = match t {
                Tensor::Mixture => p,
                Tensor::UpdateW | Tensor::ResetW | Tensor::CandW => r,
                Tensor::UpdateU | Tensor::ResetU | Tensor::CandU => h,
                Tensor::PointW | Tensor::PointB | Tensor::QuantW | Tensor::QuantB => h,
                Tensor::UpdateB | Tensor::ResetB | Tensor::CandB => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut out.data[out.layout.range(t)] {
                *v = T::lit(rng.random_range(-bound..bound));
            }
        }
        out
    }

    pub fn from_vec(shape: ModelShape, data: Vec<T>) -> Result<Self> {
        let layout = shape.layout();
        if data.len() != layout.total() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has {} entries, shape needs {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(Self { shape, layout, data })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, t: Tensor) -> &[T] {
        &self.data[self.layout.range(t)]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [T] {
        let r = self.layout.range(t);
        &mut self.data[r]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the shared mixture from `other` (same shape required).
    pub fn set_shared_from(&mut self, other: &Params<T>) {
        let r = self.layout.shared();
        self.data[r.clone()].copy_from_slice(&other.data[r]);
    }

    /// Squared L2 distance over the specialized parameters.
    pub fn specialized_sq_dist(&self, other: &Params<T>) -> T {
        let r = self.layout.specialized();
        self.data[r.clone()].iter().zip(&other.data[r]).map(|(&a, &b)| (a - b) * (a - b)).sum()
    }

    /// Max-norm distance over the specialized parameters.
    pub fn specialized_max_dist(&self, other: &Params<T>) -> T {
        let r = self.layout.specialized();
        self.data[r.clone()].iter().zip(&other.data[r]).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            shape: self.shape.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
