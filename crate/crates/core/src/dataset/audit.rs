//! Split-access audit: records which `(series, time)` cells were read during
//! each pipeline phase so that TEST isolation can be checked after the fact.

use super::{Dataset, Split, SplitSpec};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prepare = 0,
    Fit = 1,
    Select = 2,
    Calibrate = 3,
    Refit = 4,
    Evaluate = 5,
    Route = 6,
}

impl Phase {
    pub const ALL: [Phase; 7] =
        [Phase::Prepare, Phase::Fit, Phase::Select, Phase::Calibrate, Phase::Refit, Phase::Evaluate, Phase::Route];

    fn from_u8(v: u8) -> Phase {
        Phase::ALL[v as usize]
    }
}

/// Lock-free per-phase bitmap over `N x T` cells.
#[derive(Debug)]
pub struct AccessAudit {
    n: usize,
    t: usize,
    spec: SplitSpec,
    phase: AtomicU8,
    seen: Vec<AtomicBool>,
}

impl AccessAudit {
    pub fn new(n: usize, t: usize, spec: SplitSpec) -> Self {
        let seen = (0..Phase::ALL.len() * n * t).map(|_| AtomicBool::new(false)).collect();
        Self { n, t, spec, phase: AtomicU8::new(Phase::Prepare as u8), seen }
    }

    pub fn set_phase(&self, phase: Phase) {
        self.phase.store(phase as u8, Ordering::SeqCst);
    }

    pub fn phase(&self) -> Phase {
        Phase::from_u8(self.phase.load(Ordering::SeqCst))
    }

    #[inline]
    pub fn record(&self, series: usize, times: std::ops::Range<usize>) {
        let ph = self.phase.load(Ordering::Relaxed) as usize;
        let base = (ph * self.n + series) * self.t;
        for t in times {
            self.seen[base + t].store(true, Ordering::Relaxed);
        }
    }

    /// Number of distinct cells of `split` read during `phase`.
    pub fn reads(&self, phase: Phase, split: Split) -> usize {
        let range = self.spec.range(split);
        let ph = phase as usize;
        (0..self.n)
            .map(|i| {
                let base = (ph * self.n + i) * self.t;
                range.clone().filter(|&t| self.seen[base + t].load(Ordering::Relaxed)).count()
            })
            .sum()
    }

    /// Distinct reads of `split` summed over every phase strictly before `phase`.
    pub fn reads_before(&self, phase: Phase, split: Split) -> usize {
        Phase::ALL.iter().filter(|p| **p < phase).map(|&p| self.reads(p, split)).sum()
    }

    /// `(phase, split, count)` triples with nonzero counts.
    pub fn summary(&self) -> Vec<(Phase, Split, usize)> {
        let mut out = Vec::new();
        for &ph in &Phase::ALL {
            for s in [Split::Train, Split::Val, Split::Test] {
                let c = self.reads(ph, s);
                if c > 0 {
                    out.push((ph, s, c));
                }
            }
        }
        out
    }
}

/// Read path into a dataset; every window or target read is recorded when an
/// audit is attached.
#[derive(Debug, Clone, Copy)]
pub struct DataView<'a, T> {
    data: &'a Dataset<T>,
    audit: Option<&'a AccessAudit>,
}

impl<'a, T: Real> DataView<'a, T> {
    pub fn new(data: &'a Dataset<T>, audit: Option<&'a AccessAudit>) -> Self {
        Self { data, audit }
    }

    pub fn unaudited(data: &'a Dataset<T>) -> Self {
        Self { data, audit: None }
    }

    pub fn data(&self) -> &'a Dataset<T> {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Rows `end + 1 - w ..= end` of series `i`, row-major `w x P`.
    #[inline]
    pub fn window(&self, i: usize, end: usize, w: usize) -> &'a [T] {
        let r = end + 1 - w..end + 1;
        if let Some(a) = self.audit {
            a.record(i, r.clone());
        }
        self.data.rows(i, r)
    }

    #[inline]
    pub fn target(&self, i: usize, t: usize) -> &'a [T] {
        if let Some(a) = self.audit {
            a.record(i, t..t + 1);
        }
        self.data.row(i, t)
    }

    /// Contiguous rows of series `i`.
    pub fn rows(&self, i: usize, range: std::ops::Range<usize>) -> &'a [T] {
        if let Some(a) = self.audit {
            a.record(i, range.clone());
        }
        self.data.rows(i, range)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_reads_per_phase_and_split() {
        let spec = SplitSpec::new(10, 5, 5);
        let ds = Dataset::from_flat(vec!["a".into(), "b".into()], 20, 1, vec![0.0f64; 40]).unwrap();
        let audit = AccessAudit::new(2, 20, spec);
        let view = DataView::new(&ds, Some(&audit));
        audit.set_phase(Phase::Fit);
        let _ = view.window(0, 9, 3);
        let _ = view.target(0, 10);
        assert_eq!(audit.reads(Phase::Fit, Split::Train), 3);
        assert_eq!(audit.reads(Phase::Fit, Split::Val), 1);
        assert_eq!(audit.reads(Phase::Fit, Split::Test), 0);
        audit.set_phase(Phase::Evaluate);
        let _ = view.target(1, 19);
        assert_eq!(audit.reads_before(Phase::Evaluate, Split::Test), 0);
        assert_eq!(audit.reads(Phase::Evaluate, Split::Test), 1);
    }
}
