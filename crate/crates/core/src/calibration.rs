//! Per-horizon scalar interval inflation chosen on VAL.

use crate::error::{Error, Result};
use crate::scalar::Real;
use log::warn;
use serde::{Deserialize, Serialize};

/// Candidate factors `0.5 * 1.05^j`, `j = 0..=60`.
pub fn scale_grid() -> Vec<f64> {
    (0..=60).map(|j| 0.5 * 1.05f64.powi(j)).collect()
}

/// `(m - s (m - l), m + s (u - m))`.
#[inline]
pub fn apply<T: Real>(median: T, lower: T, upper: T, s: T) -> (T, T) {
    (median - s * (median - lower), median + s * (upper - median))
}

/// VAL median and interval bounds with realized targets, one horizon, flattened
/// over series, windows and components.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalStream {
    pub horizon: usize,
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub target: Vec<f64>,
}

impl IntervalStream {
    pub fn new(horizon: usize) -> Self {
        Self { horizon, ..Default::default() }
    }

    pub fn push(&mut self, median: f64, lower: f64, upper: f64, target: f64) {
        self.median.push(median);
        self.lower.push(lower);
        self.upper.push(upper);
        self.target.push(target);
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Fraction of targets inside the interval inflated by `s`.
    pub fn coverage_at(&self, s: f64) -> f64 {
        let inside = (0..self.len())
            .filter(|&k| {
                let (l, u) = apply(self.median[k], self.lower[k], self.upper[k], s);
                l <= self.target[k] && self.target[k] <= u
            })
            .count();
        inside as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub horizon: usize,
    pub scale: f64,
    pub val_coverage: f64,
    /// False when even the largest grid factor misses the target.
    pub attained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub target: f64,
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationTable {
    pub fn scale(&self, h: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.horizon == h).map(|e| e.scale)
    }
}

/// Picks, per horizon, the smallest grid factor whose VAL coverage reaches
/// `target`; falls back to the largest factor with a warning.
pub fn calibrate(streams: &[IntervalStream], target: f64) -> Result<CalibrationTable> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidConfig(format!("target coverage {target} outside [0, 1]")));
    }
    let grid = scale_grid();
    let mut entries = Vec::with_capacity(streams.len());
    for st in streams {
        if st.is_empty() {
            return Err(Error::InvalidData(format!("no VAL windows for horizon {}", st.horizon)));
        }
        let hit = grid.iter().map(|&s| (s, st.coverage_at(s))).find(|&(_, c)| c >= target);
        let entry = match hit {
            Some((s, c)) => CalibrationEntry { horizon: st.horizon, scale: s, val_coverage: c, attained: true },
            None => {
                let s = *grid.last().unwrap();
                let c = st.coverage_at(s);
                warn!(
                    "horizon {}: VAL coverage {c:.4} at the largest factor {s:.3} is below target {target}",
                    st.horizon
                );
                CalibrationEntry { horizon: st.horizon, scale: s, val_coverage: c, attained: false }
            }
        };
        entries.push(entry);
    }
    Ok(CalibrationTable { target, entries })
}
