//! Split-level losses and TEST metrics.

use crate::calibration;
use crate::dataset::{DataView, WindowIndex};
use crate::error::{Error, Result};
use crate::losses::{self, LossKind};
use crate::model::{rollout_path, Forecast, Mode, Params, Workspace};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Per-horizon sums over the windows of one series.
///
/// Loss sums add the per-window (component-averaged) losses; interval sums
/// run over individual `(window, component)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonStats<T> {
    pub horizon: usize,
    pub windows: usize,
    pub huber: T,
    pub se: T,
    pub ae: T,
    pub pinball: T,
    pub cells: usize,
    pub covered: usize,
    pub width: T,
    pub crossings: usize,
}

impl<T: Real> HorizonStats<T> {
    fn new(horizon: usize) -> Self {
        Self {
            horizon,
            windows: 0,
            huber: T::zero(),
            se: T::zero(),
            ae: T::zero(),
            pinball: T::zero(),
            cells: 0,
            covered: 0,
            width: T::zero(),
            crossings: 0,
        }
    }

    fn mean(&self, sum: T) -> Option<T> {
        (self.windows > 0).then(|| sum / T::from_usize(self.windows).unwrap())
    }

    /// Mean loss of `kind`; `None` (undefined) when there are no windows.
    pub fn loss(&self, kind: LossKind) -> Option<T> {
        match kind {
            LossKind::Huber => self.mean(self.huber),
            LossKind::Mse => self.mean(self.se),
            LossKind::Pinball => self.mean(self.pinball),
        }
    }

    pub fn mae(&self) -> Option<T> {
        self.mean(self.ae)
    }

    pub fn coverage(&self) -> Option<f64> {
        (self.cells > 0).then(|| self.covered as f64 / self.cells as f64)
    }

    pub fn mean_width(&self) -> Option<f64> {
        (self.cells > 0).then(|| self.width.as_f64() / self.cells as f64)
    }
}

/// Evaluation options shared by every series.
#[derive(Debug, Clone)]
pub struct EvalOptions<T> {
    pub delta: T,
    /// Quantile levels of the model (empty in point mode).
    pub levels: Vec<T>,
    /// Optional interval inflation factor per evaluated horizon.
    pub scale: Option<Vec<T>>,
}

impl<T: Real> EvalOptions<T> {
    pub fn for_model(params: &Params<T>, delta: f64) -> Self {
        Self { delta: T::lit(delta), levels: params.shape().levels.iter().map(|&q| T::lit(q)).collect(), scale: None }
    }
}

/// Scores series `i` at every horizon of `idx`, reusing one rollout per window.
pub fn eval_series<T: Real>(
    params: &Params<T>,
    view: DataView<'_, T>,
    idx: &WindowIndex,
    i: usize,
    opts: &EvalOptions<T>,
    ws: &mut Workspace<T>,
) -> Result<Vec<HorizonStats<T>>> {
    let horizons = idx.horizons();
    let mut stats: Vec<HorizonStats<T>> = horizons.iter().map(|&h| HorizonStats::new(h)).collect();
    let w = idx.window;
    for t in idx.all_ends() {
        let active: Vec<usize> =
            (0..horizons.len()).filter(|&k| idx.ends(horizons[k]).binary_search(&t).is_ok()).collect();
        let steps = active.iter().map(|&k| horizons[k]).max().unwrap_or(0);
        if steps == 0 {
            continue;
        }
        let window = view.window(i, t, w);
        let path = rollout_path(params, window, steps, ws)?;
        for &k in &active {
            let h = horizons[k];
            let target = view.target(i, t + h);
            let scale = opts.scale.as_ref().map(|s| s[k]);
            accumulate(&mut stats[k], &path[h - 1], target, opts, scale);
        }
    }
    Ok(stats)
}

fn accumulate<T: Real>(st: &mut HorizonStats<T>, f: &Forecast<T>, y: &[T], opts: &EvalOptions<T>, scale: Option<T>) {
    let c = f.center();
    st.windows += 1;
    st.huber += losses::huber(c, y, opts.delta);
    st.se += losses::squared_error(c, y);
    st.ae += losses::absolute_error(c, y);
    if let Forecast::Quantiles(q) = f {
        st.pinball += losses::pinball_multi(&q.values, y, &opts.levels);
        st.crossings += q.observation_crossings();
        let (m, lo, up) = (q.median(), q.lower(), q.upper());
        for p in 0..y.len() {
            let (l, u) = match scale {
                Some(s) => calibration::apply(m[p], lo[p], up[p], s),
                None => (lo[p], up[p]),
            };
            st.cells += 1;
            if l <= y[p] && y[p] <= u {
                st.covered += 1;
            }
            st.width += u - l;
        }
    }
}

/// Mean loss of series `i` at horizon `h` over the windows of `idx`.
///
/// Returns `Ok(None)`, the undefined sentinel, when `idx` has no windows for `h`.
pub fn split_mean_loss<T: Real>(
    params: &Params<T>,
    view: DataView<'_, T>,
    idx: &WindowIndex,
    i: usize,
    h: usize,
    kind: LossKind,
    delta: f64,
) -> Result<Option<T>> {
    if kind == LossKind::Pinball && params.shape().mode() != Mode::Quantile {
        return Err(Error::InvalidConfig("pinball loss needs a quantile-mode model".into()));
    }
    let sub = idx.restrict(&[h]);
    let mut ws = Workspace::new(params, idx.window);
    let st = eval_series(params, view, &sub, i, &EvalOptions::for_model(params, delta), &mut ws)?;
    Ok(st[0].loss(kind))
}

/// Mean of the defined entries; `None` when all are undefined.
pub fn mean_defined<T: Real>(xs: impl IntoIterator<Item = Option<T>>) -> Option<T> {
    let mut s = T::zero();
    let mut n = 0usize;
    for x in xs.into_iter().flatten() {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / T::from_usize(n).unwrap())
}

/// One row of the metric table: a method at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub horizon: usize,
    pub k: Option<usize>,
    pub mse: f64,
    pub mae: f64,
    pub pinball: Option<f64>,
    pub coverage: Option<f64>,
    pub width: Option<f64>,
    pub coverage_cal: Option<f64>,
    pub width_cal: Option<f64>,
    pub crossing_rate: Option<f64>,
    /// Relative MSE gain over GLOBAL, percent.
    pub delta_pct: f64,
    /// Share of series whose TEST MSE is strictly below GLOBAL's, percent.
    pub ben_pct: f64,
    /// Share of series routed through fallback, percent.
    pub fb_pct: Option<f64>,
}

/// Per-series TEST results of one method at one horizon.
#[derive(Debug, Clone)]
pub struct MethodEval<'a> {
    pub method: &'a str,
    pub horizon: usize,
    pub k: Option<usize>,
    pub series_mse: &'a [f64],
    pub series_mae: &'a [f64],
    pub series_pinball: Option<&'a [f64]>,
    pub coverage: Option<(usize, usize, f64)>,
    pub coverage_cal: Option<(usize, usize, f64)>,
    pub crossings: Option<(usize, usize)>,
    /// Per-series fallback indicator (series assigned to a flagged cluster).
    pub fallback: Option<&'a [bool]>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Builds one metric row, comparing against GLOBAL's per-series MSE.
pub fn test_metrics(m: &MethodEval<'_>, global_series_mse: &[f64]) -> Result<MetricRow> {
    let n = global_series_mse.len();
    if m.series_mse.len() != n || m.series_mae.len() != n || m.fallback.is_some_and(|f| f.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "method {} has {} series, GLOBAL has {n}",
            m.method,
            m.series_mse.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidData("no series to score".into()));
    }
    let mu = mean(m.series_mse);
    let mu_g = mean(global_series_mse);
    let benefited = m.series_mse.iter().zip(global_series_mse).filter(|(a, b)| a < b).count();
    let interval = |c: Option<(usize, usize, f64)>| match c {
        Some((cov, cells, wsum)) if cells > 0 => (Some(cov as f64 / cells as f64), Some(wsum / cells as f64)),
        _ => (None, None),
    };
    let (coverage, width) = interval(m.coverage);
    let (coverage_cal, width_cal) = interval(m.coverage_cal);
    Ok(MetricRow {
        method: m.method.to_string(),
        horizon: m.horizon,
        k: m.k,
        mse: mu,
        mae: mean(m.series_mae),
        pinball: m.series_pinball.map(mean),
        coverage,
        width,
        coverage_cal,
        width_cal,
        crossing_rate: m.crossings.and_then(|(c, pairs)| (pairs > 0).then(|| c as f64 / pairs as f64)),
        delta_pct: relative_gain(mu_g, mu),
        ben_pct: 100.0 * benefited as f64 / n as f64,
        fb_pct: m.fallback.map(|f| 100.0 * f.iter().filter(|&&x| x).count() as f64 / n as f64),
    })
}

/// `100 * (global - method) / global`.
pub fn relative_gain(global: f64, method: f64) -> f64 {
    100.0 * (global - method) / global
}

/// Per-method, per-horizon TEST metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn row(&self, method: &str, horizon: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.horizon == horizon)
    }

    /// Copy with losses (MSE, MAE, pinball) multiplied by 100.
    pub fn paper_scaled(&self) -> Self {
        let mut t = self.clone();
        for r in &mut t.rows {
            r.mse *= 100.0;
            r.mae *= 100.0;
            r.pinball = r.pinball.map(|p| p * 100.0);
        }
        t
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "method,horizon,k,mse,mae,pinball,coverage,width,coverage_cal,width_cal,crossing_rate,delta_pct,ben_pct,fb_pct"
        )?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.horizon,
                r.k.map(|k| k.to_string()).unwrap_or_default(),
                r.mse,
                r.mae,
                opt(r.pinball),
                opt(r.coverage),
                opt(r.width),
                opt(r.coverage_cal),
                opt(r.width_cal),
                opt(r.crossing_rate),
                r.delta_pct,
                r.ben_pct,
                opt(r.fb_pct)
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval<'a>(mse: &'a [f64], fb: Option<&'a [bool]>) -> MethodEval<'a> {
        MethodEval {
            method: "m",
            horizon: 1,
            k: None,
            series_mse: mse,
            series_mae: mse,
            series_pinball: None,
            coverage: None,
            coverage_cal: None,
            crossings: None,
            fallback: fb,
        }
    }

    #[test]
    fn relative_gain_formula() {
        assert_eq!(relative_gain(10.0, 8.0), 20.0);
    }

    #[test]
    fn fallback_fraction_counts_flagged_series() {
        let mse = [1.0; 10];
        let mut fb = [false; 10];
        fb[0] = true;
        fb[4] = true;
        fb[9] = true;
        let row = test_metrics(&eval(&mse, Some(&fb)), &[1.0; 10]).unwrap();
        assert_eq!(row.fb_pct, Some(30.0));
        // exact ties do not count as benefit
        assert_eq!(row.ben_pct, 0.0);
        assert_eq!(row.delta_pct, 0.0);
    }

    #[test]
    fn benefit_requires_strict_improvement() {
        let row = test_metrics(&eval(&[0.5, 1.0, 2.0, 0.9], None), &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(row.ben_pct, 50.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(test_metrics(&eval(&[1.0, 2.0], None), &[1.0]).is_err());
    }

    #[test]
    fn mean_defined_skips_undefined() {
        assert_eq!(mean_defined([Some(0.2f64), None, Some(0.4)]), Some(0.30000000000000004));
        assert_eq!(mean_defined::<f64>([None, None]), None);
    }
}
