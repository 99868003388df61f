//! TRAIN-only imputation and per-component standardization.

use super::{Dataset, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputeStrategy {
    #[default]
    Mean,
    Median,
}

impl std::str::FromStr for ImputeStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(Error::InvalidConfig(format!("unknown imputation strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub eps: f64,
    pub impute: ImputeStrategy,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { eps: 1e-8, impute: ImputeStrategy::Mean }
    }
}

/// Per-component TRAIN statistics.
///
/// `mu` and `sigma` come from observed TRAIN cells pooled over all series;
/// `fill` is the value substituted for missing cells (the mean, or the median
/// under [`ImputeStrategy::Median`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Standardizer<T: Real> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub fill: Vec<T>,
    pub eps: T,
    pub impute: ImputeStrategy,
}

impl<T: Real> Standardizer<T> {
    pub fn fit(ds: &Dataset<T>, spec: &SplitSpec, cfg: &PrepConfig) -> Result<Self> {
        let p_dim = ds.dim();
        let eps = T::lit(cfg.eps);
        let train = spec.range(Split::Train);
        let mut mu = Vec::with_capacity(p_dim);
        let mut sigma = Vec::with_capacity(p_dim);
        let mut fill = Vec::with_capacity(p_dim);
        for p in 0..p_dim {
            let mut obs = Vec::new();
            for i in 0..ds.n_series() {
                for t in train.clone() {
                    if ds.observed(i, t, p) {
                        obs.push(ds.value(i, t, p));
                    }
                }
            }
            if obs.is_empty() {
                return Err(Error::InvalidData(format!("component {p} has no observed TRAIN entries")));
            }
            let count = T::from_usize(obs.len()).unwrap();
            let m = obs.iter().copied().sum::<T>() / count;
            let var = obs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / count;
            mu.push(m);
            sigma.push((var + eps).sqrt());
            fill.push(match cfg.impute {
                ImputeStrategy::Mean => m,
                ImputeStrategy::Median => median(&mut obs),
            });
        }
        Ok(Self { mu, sigma, fill, eps, impute: cfg.impute })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Imputes missing cells and standardizes every split. The mask is kept.
    pub fn apply(&self, ds: &Dataset<T>) -> Result<Dataset<T>> {
        if ds.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer has P={}, dataset has P={}",
                self.dim(),
                ds.dim()
            )));
        }
        let mut out = ds.values().to_vec();
        self.transform_rows(&mut out);
        Ok(ds.with_values(out))
    }

    /// In-place transform of row-major `P`-wide rows; NaN cells are imputed first.
    pub fn transform_rows(&self, rows: &mut [T]) {
        let p_dim = self.dim();
        for row in rows.chunks_mut(p_dim) {
            for (p, v) in row.iter_mut().enumerate() {
                let x = if v.is_nan() { self.fill[p] } else { *v };
                *v = (x - self.mu[p]) / self.sigma[p];
            }
        }
    }

    pub fn inverse(&self, p: usize, z: T) -> T {
        z * self.sigma[p] + self.mu[p]
    }
}

fn median<T: Real>(xs: &mut [T]) -> T {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite observations"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / T::lit(2.0)
    }
}

/// Fits TRAIN statistics and returns them with the imputed, standardized data.
pub fn fit_impute_standardize<T: Real>(
    ds: &Dataset<T>,
    spec: &SplitSpec,
    cfg: &PrepConfig,
) -> Result<(Standardizer<T>, Dataset<T>)> {
    if spec.total() != ds.len_time() {
        return Err(Error::InvalidSplit(format!("split sums to {}, series length is {}", spec.total(), ds.len_time())));
    }
    let st = Standardizer::fit(ds, spec, cfg)?;
    let out = st.apply(ds)?;
    Ok((st, out))
}
