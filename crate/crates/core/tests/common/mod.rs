#![allow(dead_code)]

use adapool::clustering::PipelineConfig;
use adapool::dataset::{fit_impute_standardize, Dataset, PrepConfig, SplitSpec};
use adapool::model::{ModelShape, Params};
use adapool::synthetic::{generate, SyntheticData, SyntheticSpec};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Seeded init plus Gaussian jitter on every entry, so no bias sits at zero.
pub fn random_params(shape: ModelShape, seed: u64, jitter: f64) -> Params<f64> {
    let mut p = Params::init(shape, seed);
    let mut r = rng(seed ^ 0xabcdef);
    for v in p.as_mut_slice() {
        *v += jitter * r.sample::<f64, _>(StandardNormal);
    }
    p
}

pub fn tiny_point() -> ModelShape {
    ModelShape::point(3, 2, 4, 5)
}

pub fn tiny_quantile() -> ModelShape {
    ModelShape::quantile(3, 2, 4, 5, vec![0.1, 0.5, 0.9])
}

/// Small synthetic problem with its standardized dataset.
pub fn small_synthetic(seed: u64, alpha: f64) -> (SyntheticData, SplitSpec, Dataset<f64>) {
    let spec = SyntheticSpec { n: 8, t: 120, p: 3, k_true: 2, alpha, seed, ..Default::default() };
    let syn = generate(&spec).unwrap();
    let split = SplitSpec::new(80, 20, 20);
    let (_, data) = fit_impute_standardize(&syn.dataset, &split, &PrepConfig::default()).unwrap();
    (syn, split, data)
}

/// A fast pipeline configuration for small end-to-end checks.
pub fn small_pipeline() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.train.window = 6;
    cfg.train.hidden = 6;
    cfg.train.epochs_global = 4;
    cfg.train.epochs_proto = 2;
    cfg.train.batch = 32;
    cfg.selection.candidates = vec![2, 3];
    cfg.selection.seeds = vec![0, 1];
    cfg.selection.max_iters = 2;
    cfg.selection.assign_horizons = vec![1, 3];
    cfg.horizons = vec![1, 3];
    cfg
}

/// Largest relative deviation between analytic and central-difference
/// gradients of `f` at `x`.
pub fn max_fd_rel_error(x: &[f64], grad: &[f64], step: f64, floor: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut buf = x.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        buf[k] = x[k] + step;
        let up = f(&buf);
        buf[k] = x[k] - step;
        let down = f(&buf);
        buf[k] = x[k];
        let fd = (up - down) / (2.0 * step);
        let denom = grad[k].abs().max(fd.abs()).max(floor);
        worst = worst.max((grad[k] - fd).abs() / denom);
    }
    worst
}
