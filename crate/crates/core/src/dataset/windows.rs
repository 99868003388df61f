use super::{Split, SplitView};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Valid window end-times per horizon for one split.
///
/// Every series shares the same time axis, so one list per horizon serves all
/// series. A window ending at `t` covers `t + 1 - w ..= t` and is scored
/// against the target at `t + h`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowIndex {
    pub split: Split,
    pub window: usize,
    horizons: Vec<usize>,
    ends: Vec<Vec<usize>>,
}

impl WindowIndex {
    /// Builds the index for a target range.
    ///
    /// TRAIN (and TRAIN+VAL) windows stay inside the range. VAL and TEST windows
    /// may reach back into earlier data for context; their forecast origin is
    /// inside the split or on the last step before it, and the target is inside.
    pub fn build(split: Split, range: Range<usize>, w: usize, horizons: &[usize]) -> Self {
        assert!(w >= 1, "window length must be positive");
        let ends = horizons
            .iter()
            .map(|&h| {
                assert!(h >= 1, "horizons must be positive");
                let lo = match split {
                    Split::Train | Split::TrainVal => range.start + w - 1,
                    Split::Val | Split::Test => (w - 1).max(range.start.saturating_sub(1)),
                };
                let hi = range.end.saturating_sub(h);
                (lo..hi.max(lo)).collect()
            })
            .collect();
        Self { split, window: w, horizons: horizons.to_vec(), ends }
    }

    pub fn horizons(&self) -> &[usize] {
        &self.horizons
    }

    /// End-times for horizon `h`; empty when `h` was not indexed.
    pub fn ends(&self, h: usize) -> &[usize] {
        self.horizons.iter().position(|&x| x == h).map(|k| self.ends[k].as_slice()).unwrap_or(&[])
    }

    pub fn is_empty(&self, h: usize) -> bool {
        self.ends(h).is_empty()
    }

    /// Union of end-times over all horizons, ascending.
    pub fn all_ends(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.ends.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Index limited to `hs`; horizons not indexed here come back empty.
    pub fn restrict(&self, hs: &[usize]) -> Self {
        Self {
            split: self.split,
            window: self.window,
            horizons: hs.to_vec(),
            ends: hs.iter().map(|&h| self.ends(h).to_vec()).collect(),
        }
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }
}

pub fn enumerate_windows<T: Real>(view: &SplitView<'_, T>, w: usize, horizons: &[usize]) -> WindowIndex {
    WindowIndex::build(view.split, view.range.clone(), w, horizons)
}
