//! Heterogeneous multivariate series with known regimes.
//!
//! Regime `k` follows `x_t = A_k x_{t-1} + a sin(2 pi t / period + phi_k + psi) + noise`,
//! where every `A_k` has spectral norm at most `rho < 0.95`. The strength
//! `alpha` interpolates each regime's map and phase toward the common one,
//! so `alpha = 0` gives a single shared dynamic.

use crate::baselines::features;
use crate::dataset::{DataView, Dataset};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub k_true: usize,
    /// Heterogeneity strength in `[0, 1]`.
    pub alpha: f64,
    /// Standard deviation of the Gaussian innovations.
    pub noise: f64,
    pub seed: u64,
    /// Spectral-norm bound of each transition map.
    pub rho: f64,
    pub season_amp: f64,
    pub season_period: f64,
    pub burn_in: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 30,
            t: 300,
            p: 8,
            k_true: 3,
            alpha: 1.0,
            noise: 0.1,
            seed: 0,
            rho: 0.9,
            season_amp: 0.1,
            season_period: 24.0,
            burn_in: 50,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n == 0 || self.t == 0 || self.p == 0 || self.k_true == 0 {
            return bad("N, T, P and K_true must be positive");
        }
        if self.k_true > self.n {
            return bad("K_true must not exceed N");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise must be finite and >= 0");
        }
        if !(self.rho > 0.0 && self.rho < 0.95) {
            return bad("rho must lie in (0, 0.95)");
        }
        if !(self.season_period > 0.0) || !self.season_amp.is_finite() {
            return bad("seasonal period must be > 0 and amplitude finite");
        }
        Ok(())
    }
}

/// Regime parameters: row-major `P x P` maps and seasonal phases.
#[derive(Debug, Clone, PartialEq)]
pub struct Regimes {
    pub maps: Vec<Vec<f64>>,
    pub phases: Vec<f64>,
    /// Per-component phase offsets shared by all regimes.
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset<f64>,
    pub labels: Vec<usize>,
    pub regimes: Regimes,
    /// Leave-one-out 1-NN accuracy on per-series summary features.
    pub separability: f64,
}

fn spectral_norm(a: &[f64], p: usize) -> f64 {
    let mut v = vec![1.0 / (p as f64).sqrt(); p];
    let mut s = 0.0;
    for _ in 0..500 {
        let av: Vec<f64> = (0..p).map(|r| (0..p).map(|c| a[r * p + c] * v[c]).sum()).collect();
        let atav: Vec<f64> = (0..p).map(|c| (0..p).map(|r| a[r * p + c] * av[r]).sum()).collect();
        let norm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = atav.iter().map(|x| x / norm).collect();
        s = norm.sqrt();
    }
    s
}

fn random_map(p: usize, rho: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut a: Vec<f64> = (0..p * p).map(|_| StandardNormal.sample(rng)).collect();
    // power iteration converges from below; a small margin keeps the bound strict
    let s = spectral_norm(&a, p) * 1.001;
    if s > 0.0 {
        a.iter_mut().for_each(|x| *x *= rho / s);
    }
    a
}

/// Draws the regime maps and phases for `spec`.
pub fn regimes(spec: &SyntheticSpec) -> Result<Regimes> {
    spec.validate()?;
    let p = spec.p;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let common = random_map(p, spec.rho, &mut rng);
    let offsets: Vec<f64> = (0..p).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    let mut maps = Vec::with_capacity(spec.k_true);
    let mut phases = Vec::with_capacity(spec.k_true);
    for k in 0..spec.k_true {
        let own = random_map(p, spec.rho, &mut rng);
        maps.push(if spec.alpha == 0.0 {
            common.clone()
        } else {
            common.iter().zip(&own).map(|(&c, &o)| (1.0 - spec.alpha) * c + spec.alpha * o).collect()
        });
        phases.push(spec.alpha * std::f64::consts::TAU * k as f64 / spec.k_true as f64);
    }
    Ok(Regimes { maps, phases, offsets })
}

/// Generates the dataset, balanced ground-truth labels and the separability score.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let reg = regimes(spec)?;
    let (n, t, p) = (spec.n, spec.t, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x005e_ed0f_da7a);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut labels = vec![0; n];
    for (j, &i) in perm.iter().enumerate() {
        labels[i] = j % spec.k_true;
    }
    let omega = std::f64::consts::TAU / spec.season_period;
    let mut values = Vec::with_capacity(n * t * p);
    for &k in &labels {
        let a = &reg.maps[k];
        let mut x: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        for step in 0..spec.burn_in + t {
            let time = step as f64 - spec.burn_in as f64;
            let next: Vec<f64> = (0..p)
                .map(|r| {
                    let ar: f64 = (0..p).map(|c| a[r * p + c] * x[c]).sum();
                    let season = spec.season_amp * (omega * time + reg.phases[k] + reg.offsets[r]).sin();
                    let e: f64 = StandardNormal.sample(&mut rng);
                    ar + season + spec.noise * e
                })
                .collect();
            x = next;
            if step >= spec.burn_in {
                values.extend_from_slice(&x);
            }
        }
    }
    let names = (0..n).map(|i| format!("synth_{i:04}")).collect();
    let dataset = Dataset::from_flat(names, t, p, values)?;
    let feats = features(DataView::unaudited(&dataset), 0..t);
    let separability = one_nn_accuracy(&feats, &labels);
    Ok(SyntheticData { dataset, labels, regimes: reg, separability })
}

/// Leave-one-out 1-nearest-neighbour accuracy (Euclidean; ties to the lower index).
pub fn one_nn_accuracy(x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 1.0;
    }
    let hits = (0..n)
        .filter(|&i| {
            let mut best = (usize::MAX, f64::INFINITY);
            for j in (0..n).filter(|&j| j != i) {
                let d: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.1 {
                    best = (j, d);
                }
            }
            labels[best.0] == labels[i]
        })
        .count();
    hits as f64 / n as f64
}

fn choose2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index from the pair-counting contingency table.
///
/// When both partitions are trivial in the same way (the chance-adjusted
/// denominator vanishes), returns 1 if they agree and 0 otherwise.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("label lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; ka * kb];
    let mut rows = vec![0usize; ka];
    let mut cols = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        rows[x] += 1;
        cols[y] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}
