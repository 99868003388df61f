//! Forecastability-driven clustering: prototypes fitted on TRAIN, series
//! reassigned by VAL loss, clusters that fail to beat GLOBAL on VAL routed
//! back to GLOBAL, and `K` chosen by a penalized VAL criterion.
//!
//! Cluster ids are 0-based (`0..K`).

mod engine;
mod refit;
mod routing;

pub use engine::{
    derive_seed, ClusterRun, Experiment, IterationTrace, PipelineConfig, Prototype, SearchMode, Selection,
    SelectionConfig, SelectionRow, ValGrid,
};
pub use refit::{MethodPlan, MethodTest, RoutedModels, TestModels, TestReport};
pub use routing::{assign_new_series, RouteDecision, RoutedModel};

use crate::baselines::kmeans;
use crate::error::{Error, Result};
use crate::scalar::Real;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Cluster labels, one per series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
    pub k: usize,
    /// Outer iterations run to reach these labels.
    pub iterations: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidData(format!("label {bad} out of range for K={k}")));
        }
        Ok(Self { labels, k, iterations: 0 })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == k).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &c in &self.labels {
            s[c] += 1;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    #[default]
    RandomBalanced,
    Feature,
}

/// Initial labels: a seeded permutation dealt round-robin into `k` groups, or
/// k-means labels on per-series feature vectors.
pub fn init_assignments<T: Real>(
    n: usize,
    k: usize,
    seed: u64,
    strategy: InitStrategy,
    features: Option<&[Vec<T>]>,
) -> Result<Assignment> {
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("need 1 <= K <= N, got K={k}, N={n}")));
    }
    let labels = match strategy {
        InitStrategy::RandomBalanced => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut labels = vec![0; n];
            for (j, &i) in perm.iter().enumerate() {
                labels[i] = j % k;
            }
            labels
        }
        InitStrategy::Feature => {
            let f = features.ok_or_else(|| Error::InvalidConfig("feature init needs feature vectors".into()))?;
            if f.len() != n {
                return Err(Error::DimensionMismatch("one feature vector per series expected".into()));
            }
            kmeans::kmeans(&kmeans::standardize_columns(f), k, seed, 100)?.labels
        }
    };
    Assignment::new(labels, k)
}

/// `C[i][k]`: VAL loss of series `i` under prototype `k`, averaged over the
/// assignment horizons. `None` marks an undefined entry (no VAL windows).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    pub n: usize,
    pub k: usize,
    pub horizons: Vec<usize>,
    entries: Vec<Option<T>>,
}

impl<T: Real> CostMatrix<T> {
    pub fn new(n: usize, k: usize, horizons: Vec<usize>, entries: Vec<Option<T>>) -> Result<Self> {
        if entries.len() != n * k {
            return Err(Error::DimensionMismatch(format!("cost matrix needs {} entries", n * k)));
        }
        if entries.iter().flatten().any(|v| !(*v >= T::zero())) {
            return Err(Error::InvalidData("cost entries must be finite and nonnegative".into()));
        }
        Ok(Self { n, k, horizons, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, |r| r.len());
        let entries = rows.iter().flat_map(|r| r.iter().map(|&v| Some(T::lit(v)))).collect();
        Self::new(rows.len(), k, vec![1], entries)
    }

    pub fn get(&self, i: usize, k: usize) -> Option<T> {
        self.entries[i * self.k + k]
    }

    pub fn row(&self, i: usize) -> &[Option<T>] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    /// Rows with at least one defined entry.
    pub fn is_row_defined(&self, i: usize) -> bool {
        self.row(i).iter().any(Option::is_some)
    }

    /// `argmin_k C[i][k]` with ties to the smallest `k`; `None` for undefined rows.
    pub fn argmin(&self, i: usize) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for (k, v) in self.row(i).iter().enumerate() {
            if let Some(v) = *v {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((k, v));
                }
            }
        }
        best.map(|(k, _)| k)
    }

    /// `sum_i C[i][labels_i]` over defined rows.
    pub fn objective(&self, labels: &[usize]) -> T {
        (0..self.n).filter_map(|i| self.get(i, labels[i])).sum()
    }

    /// `sum_i min_k C[i][k]` over defined rows.
    pub fn lower_bound(&self) -> T {
        (0..self.n).filter_map(|i| self.argmin(i).and_then(|k| self.get(i, k))).sum()
    }
}

/// `c_i <- argmin_k C[i][k]`; rows without any defined entry keep their label.
pub fn reassign<T: Real>(cost: &CostMatrix<T>, prev: &Assignment) -> Result<Assignment> {
    if cost.n != prev.n() || cost.k != prev.k {
        return Err(Error::DimensionMismatch(format!(
            "cost is {}x{}, assignment has N={} K={}",
            cost.n,
            cost.k,
            prev.n(),
            prev.k
        )));
    }
    let labels = (0..cost.n).map(|i| cost.argmin(i).unwrap_or(prev.labels[i])).collect();
    Ok(Assignment { labels, k: prev.k, iterations: prev.iterations })
}

/// Per-cluster non-specializability flags, fixed on VAL before TEST.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackFlags {
    pub flagged: Vec<bool>,
    pub frozen: bool,
    /// Mean member VAL loss at h=1 under the prototype.
    pub cluster_loss: Vec<Option<f64>>,
    /// Mean member VAL loss at h=1 under GLOBAL.
    pub global_loss: Vec<Option<f64>>,
}

impl FallbackFlags {
    pub fn is_flagged(&self, k: usize) -> bool {
        self.flagged[k]
    }

    /// Per-series indicator: assigned to a flagged cluster.
    pub fn series_fallback(&self, labels: &[usize]) -> Vec<bool> {
        labels.iter().map(|&c| self.flagged[c]).collect()
    }
}

fn member_mean<T: Real>(labels: &[usize], k: usize, losses: &[Option<T>]) -> Option<T> {
    crate::metrics::mean_defined(labels.iter().zip(losses).filter(|(c, _)| **c == k).map(|(_, l)| *l))
}

/// Flags cluster `k` when its members' mean VAL loss under the prototype is
/// strictly above their mean under GLOBAL. Empty clusters, and clusters whose
/// prototype loss is undefined, are flagged.
///
/// `own_loss[i]` is series `i`'s h=1 VAL loss under its own prototype.
pub fn compute_fallback<T: Real>(
    assignment: &Assignment,
    own_loss: &[Option<T>],
    global_loss: &[Option<T>],
) -> FallbackFlags {
    let k = assignment.k;
    let mut flagged = vec![false; k];
    let mut cluster_loss = vec![None; k];
    let mut glob = vec![None; k];
    for c in 0..k {
        let lc = member_mean(&assignment.labels, c, own_loss);
        let lg = member_mean(&assignment.labels, c, global_loss);
        cluster_loss[c] = lc.map(Real::as_f64);
        glob[c] = lg.map(Real::as_f64);
        flagged[c] = match (lc, lg) {
            (Some(a), Some(b)) => a > b,
            (Some(_), None) => false,
            (None, _) => true,
        };
    }
    FallbackFlags { flagged, frozen: true, cluster_loss, global_loss: glob }
}

/// Per-series routed VAL loss: the prototype's loss for unflagged clusters,
/// GLOBAL's otherwise.
pub fn routed_losses<T: Real>(
    assignment: &Assignment,
    flags: &FallbackFlags,
    own_loss: &[Option<T>],
    global_loss: &[Option<T>],
) -> Vec<Option<T>> {
    assignment
        .labels
        .iter()
        .enumerate()
        .map(|(i, &c)| if flags.flagged[c] { global_loss[i] } else { own_loss[i] })
        .collect()
}

/// Mean routed VAL loss over series (SelAbs).
pub fn routed_val_risk<T: Real>(
    assignment: &Assignment,
    flags: &FallbackFlags,
    own_loss: &[Option<T>],
    global_loss: &[Option<T>],
) -> Option<T> {
    crate::metrics::mean_defined(routed_losses(assignment, flags, own_loss, global_loss))
}

/// `SelAbs + gamma * K / N`.
pub fn penalized(sel_abs: f64, k: usize, n: usize, gamma: f64) -> f64 {
    sel_abs + gamma * k as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_init_sizes() {
        let a = init_assignments::<f64>(6, 2, 1, InitStrategy::RandomBalanced, None).unwrap();
        assert_eq!(a.sizes(), vec![3, 3]);
        let b = init_assignments::<f64>(7, 3, 1, InitStrategy::RandomBalanced, None).unwrap();
        let mut s = b.sizes();
        s.sort();
        assert_eq!(s, vec![2, 2, 3]);
        let c = init_assignments::<f64>(7, 3, 1, InitStrategy::RandomBalanced, None).unwrap();
        assert_eq!(b, c);
        assert!(init_assignments::<f64>(3, 4, 1, InitStrategy::RandomBalanced, None).is_err());
    }

    #[test]
    fn reassign_takes_argmin_with_low_index_ties() {
        let cost = CostMatrix::<f64>::from_rows(&[vec![0.3, 0.1, 0.2], vec![0.1, 0.1, 0.5]]).unwrap();
        let prev = Assignment::new(vec![0, 2], 3).unwrap();
        let next = reassign(&cost, &prev).unwrap();
        assert_eq!(next.labels, vec![1, 0]);
        assert_eq!(cost.objective(&next.labels), cost.lower_bound());
    }

    #[test]
    fn undefined_rows_keep_previous_label() {
        let cost = CostMatrix::<f64>::new(2, 2, vec![1], vec![None, None, Some(0.5), Some(0.2)]).unwrap();
        let prev = Assignment::new(vec![1, 0], 2).unwrap();
        assert_eq!(reassign(&cost, &prev).unwrap().labels, vec![1, 1]);
    }

    #[test]
    fn single_column_reassign_is_identity() {
        let cost = CostMatrix::<f64>::from_rows(&[vec![0.4], vec![0.9]]).unwrap();
        let prev = Assignment::new(vec![0, 0], 1).unwrap();
        assert_eq!(reassign(&cost, &prev).unwrap(), prev);
    }

    #[test]
    fn fallback_uses_strict_inequality_and_flags_empty_clusters() {
        let a = Assignment::new(vec![0, 0, 1, 1], 3).unwrap();
        let own = [Some(0.1), Some(0.4), Some(0.9), Some(0.9)];
        let glob = [Some(0.3), Some(0.3), Some(0.5), Some(0.5)];
        let f = compute_fallback(&a, &own, &glob);
        assert_eq!(f.flagged, vec![false, true, true]);
        assert!(f.frozen);

        let equal = compute_fallback(&a, &glob, &glob);
        assert_eq!(equal.flagged, vec![false, false, true]);
    }

    #[test]
    fn routed_risk_extremes() {
        let a = Assignment::new(vec![0, 1, 1], 2).unwrap();
        let own = [Some(0.1), Some(0.2), Some(0.6)];
        let glob = [Some(0.3), Some(0.3), Some(0.3)];
        let all = FallbackFlags { flagged: vec![true, true], frozen: true, cluster_loss: vec![], global_loss: vec![] };
        assert_eq!(routed_val_risk(&a, &all, &own, &glob), Some(0.3 * 3.0 / 3.0));
        let none = FallbackFlags { flagged: vec![false, false], ..all.clone() };
        assert_eq!(routed_val_risk(&a, &none, &own, &glob), crate::metrics::mean_defined(own));
        let f = compute_fallback(&a, &own, &glob);
        let r = routed_val_risk(&a, &f, &own, &glob).unwrap();
        assert!(r <= crate::metrics::mean_defined(glob).unwrap());
    }

    #[test]
    fn penalty_formula() {
        assert!((penalized(0.12, 4, 180, 0.05) - 0.121_111_111_111_111_1).abs() < 1e-15);
        assert_eq!(penalized(0.12, 4, 180, 0.0), 0.12);
    }
}
