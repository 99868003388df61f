//! Comparison methods sharing the fallback safeguard and evaluation path.

pub mod kmeans;

use crate::clustering::{Experiment, InitStrategy, MethodPlan, SearchMode, Selection};
use crate::dataset::DataView;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::Params;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::str::FromStr;

/// Per-series feature vector: TRAIN mean of each component followed by its
/// (population) standard deviation, `2P` values.
pub fn features<T: Real>(view: DataView<'_, T>, train: Range<usize>) -> Vec<Vec<T>> {
    let p = view.dim();
    let len = T::from_usize(train.len()).unwrap();
    (0..view.data().n_series())
        .map(|i| {
            let rows = view.rows(i, train.clone());
            let mut mean = vec![T::zero(); p];
            for r in rows.chunks(p) {
                for (m, &v) in mean.iter_mut().zip(r) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= len);
            let mut var = vec![T::zero(); p];
            for r in rows.chunks(p) {
                for ((s, &v), &m) in var.iter_mut().zip(r).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            mean.extend(var.into_iter().map(|s| (s / len).sqrt()));
            mean
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OURS")]
    Ours,
    #[serde(rename = "GLOBAL")]
    Global,
    #[serde(rename = "INDIVIDUAL")]
    Individual,
    #[serde(rename = "FEAT-KMEANS")]
    FeatKmeans,
    #[serde(rename = "RANDOM-BALANCED")]
    RandomBalanced,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::Global, Method::Individual, Method::FeatKmeans, Method::RandomBalanced, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "OURS",
            Method::Global => "GLOBAL",
            Method::Individual => "INDIVIDUAL",
            Method::FeatKmeans => "FEAT-KMEANS",
            Method::RandomBalanced => "RANDOM-BALANCED",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "ours" => Ok(Method::Ours),
            "global" => Ok(Method::Global),
            "individual" => Ok(Method::Individual),
            "feat-kmeans" => Ok(Method::FeatKmeans),
            "random-balanced" => Ok(Method::RandomBalanced),
            _ => Err(Error::InvalidConfig(format!("unknown method '{s}'"))),
        }
    }
}

/// A method ready for refit and TEST, with its VAL selection if clustered.
#[derive(Debug, Clone)]
pub struct Planned<T> {
    pub method: Method,
    pub plan: MethodPlan<T>,
    pub selection: Option<Selection<T>>,
}

/// Runs the VAL-side work of `method` against a TRAIN-fitted GLOBAL.
///
/// Clustered baselines keep their initial labels (no reassignment) and pick
/// `K` and the seed by routed VAL MSE at h=1 with the same penalty.
pub fn run_baseline<T: Real>(method: Method, exp: &Experiment<'_, T>, global: &Params<T>) -> Result<Planned<T>> {
    let search = match method {
        Method::Global => return Ok(Planned { method, plan: MethodPlan::Global, selection: None }),
        Method::Individual => return Ok(Planned { method, plan: MethodPlan::Individual, selection: None }),
        Method::Ours => exp.ours_mode(),
        Method::FeatKmeans => SearchMode { kind: LossKind::Mse, init: InitStrategy::Feature, reassign: false },
        Method::RandomBalanced => {
            SearchMode { kind: LossKind::Mse, init: InitStrategy::RandomBalanced, reassign: false }
        }
    };
    let sel = exp.select_k(global, search)?;
    Ok(Planned { method, plan: MethodPlan::Clustered(sel.best.clone()), selection: Some(sel) })
}
