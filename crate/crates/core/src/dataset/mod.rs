//! Multivariate series storage, the chronological TRAIN/VAL/TEST split, and
//! window enumeration.
//!
//! Time indices are 0-based throughout: a split of `(200, 40, 48)` puts TRAIN
//! at `0..200`, VAL at `200..240` and TEST at `240..288`.

mod audit;
mod io;
mod prep;
mod windows;

pub use audit::{AccessAudit, DataView, Phase};
pub use io::{load_dataset, read_csv_series, write_csv_dir, write_packed, DataFormat};
pub use prep::{fit_impute_standardize, ImputeStrategy, PrepConfig, Standardizer};
pub use windows::{enumerate_windows, WindowIndex};

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// `N` series, each `T x P`, stored row-major as `[series][time][component]`.
///
/// Missing cells hold NaN in `values` and `false` in `mask` until imputation
/// replaces them; the mask keeps recording which cells were observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    n: usize,
    t: usize,
    p: usize,
    values: Vec<T>,
    mask: Vec<bool>,
    names: Vec<String>,
}

impl<T: Real> Dataset<T> {
    /// Builds a dataset from flat values; the mask is derived from NaN cells.
    pub fn from_flat(names: Vec<String>, t: usize, p: usize, values: Vec<T>) -> Result<Self> {
        let n = names.len();
        if n == 0 || t == 0 || p == 0 {
            return Err(Error::InvalidData(format!("dataset must be non-empty (N={n}, T={t}, P={p})")));
        }
        if values.len() != n * t * p {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for N={n}, T={t}, P={p}, got {}",
                n * t * p,
                values.len()
            )));
        }
        let mask = values.iter().map(|v| !v.is_nan()).collect();
        Ok(Self { n, t, p, values, mask, names })
    }

    /// Builds a dataset from per-series `T x P` row-major blocks.
    pub fn from_series(names: Vec<String>, series: Vec<Vec<T>>, t: usize, p: usize) -> Result<Self> {
        if names.len() != series.len() {
            return Err(Error::DimensionMismatch("names and series differ in count".into()));
        }
        for (name, s) in names.iter().zip(&series) {
            if s.len() != t * p {
                return Err(Error::DimensionMismatch(format!(
                    "series {name} has {} values, expected {}x{}",
                    s.len(),
                    t,
                    p
                )));
            }
        }
        Self::from_flat(names, t, p, series.concat())
    }

    pub fn n_series(&self) -> usize {
        self.n
    }

    pub fn len_time(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    fn offset(&self, i: usize, t: usize) -> usize {
        (i * self.t + t) * self.p
    }

    #[inline]
    pub fn value(&self, i: usize, t: usize, p: usize) -> T {
        self.values[self.offset(i, t) + p]
    }

    #[inline]
    pub fn observed(&self, i: usize, t: usize, p: usize) -> bool {
        self.mask[self.offset(i, t) + p]
    }

    /// Overwrites one cell; NaN marks it missing.
    pub fn set_value(&mut self, i: usize, t: usize, p: usize, v: T) {
        let o = self.offset(i, t) + p;
        self.values[o] = v;
        self.mask[o] = !v.is_nan();
    }

    /// One time step of series `i` (length `P`).
    #[inline]
    pub fn row(&self, i: usize, t: usize) -> &[T] {
        let o = self.offset(i, t);
        &self.values[o..o + self.p]
    }

    /// Contiguous rows `range` of series `i`, row-major.
    #[inline]
    pub fn rows(&self, i: usize, range: Range<usize>) -> &[T] {
        let a = self.offset(i, range.start);
        let b = self.offset(i, range.end);
        &self.values[a..b]
    }

    pub fn series(&self, i: usize) -> &[T] {
        self.rows(i, 0..self.t)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    /// True when every cell holds a finite value (e.g. after imputation).
    pub fn is_materialized(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Keeps only the series in `idx`, in that order.
    pub fn select_series(&self, idx: &[usize]) -> Result<Self> {
        let mut names = Vec::with_capacity(idx.len());
        let mut values = Vec::with_capacity(idx.len() * self.t * self.p);
        let mut mask = Vec::with_capacity(values.capacity());
        for &i in idx {
            if i >= self.n {
                return Err(Error::DimensionMismatch(format!("series index {i} out of range")));
            }
            names.push(self.names[i].clone());
            let r = self.offset(i, 0)..self.offset(i, self.t);
            values.extend_from_slice(&self.values[r.clone()]);
            mask.extend_from_slice(&self.mask[r]);
        }
        Ok(Self { n: idx.len(), t: self.t, p: self.p, values, mask, names })
    }

    pub(crate) fn with_values(&self, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }
}

/// Split tag. `TrainVal` names the union used by the final refit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    TrainVal,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "tr",
            Split::Val => "va",
            Split::Test => "te",
            Split::TrainVal => "trva",
        }
    }
}

/// Lengths of the three chronological segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Checks the lengths against `T` and the minimum segment length `w + max(h)`.
    pub fn validate(&self, t_total: usize, min_segment: usize) -> Result<()> {
        if self.total() != t_total {
            return Err(Error::InvalidSplit(format!(
                "split ({}, {}, {}) sums to {}, series length is {t_total}",
                self.train,
                self.val,
                self.test,
                self.total()
            )));
        }
        for (name, len) in [("TRAIN", self.train), ("VAL", self.val), ("TEST", self.test)] {
            if len < min_segment {
                return Err(Error::InvalidSplit(format!(
                    "{name} has length {len}, needs at least {min_segment} (w + max horizon)"
                )));
            }
        }
        Ok(())
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        let a = self.train;
        let b = a + self.val;
        match split {
            Split::Train => 0..a,
            Split::Val => a..b,
            Split::Test => b..b + self.test,
            Split::TrainVal => 0..b,
        }
    }

    /// Which of TRAIN/VAL/TEST contains time `t`.
    pub fn classify(&self, t: usize) -> Split {
        if t < self.train {
            Split::Train
        } else if t < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Read-only view of one segment of a dataset.
#[derive(Debug, Clone)]
pub struct SplitView<'a, T> {
    pub data: &'a Dataset<T>,
    pub split: Split,
    pub range: Range<usize>,
}

impl<'a, T: Real> SplitView<'a, T> {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    /// Rows of series `i` inside this segment.
    pub fn rows(&self, i: usize) -> &'a [T] {
        self.data.rows(i, self.range.clone())
    }
}

#[derive(Debug, Clone)]
pub struct SplitViews<'a, T> {
    pub train: SplitView<'a, T>,
    pub val: SplitView<'a, T>,
    pub test: SplitView<'a, T>,
}

/// Cuts `ds` into contiguous, non-overlapping chronological views.
pub fn split<'a, T: Real>(ds: &'a Dataset<T>, spec: &SplitSpec, min_segment: usize) -> Result<SplitViews<'a, T>> {
    spec.validate(ds.len_time(), min_segment)?;
    let view = |s| SplitView { data: ds, split: s, range: spec.range(s) };
    Ok(SplitViews { train: view(Split::Train), val: view(Split::Val), test: view(Split::Test) })
}
