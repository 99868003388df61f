use super::engine::{derive_seed, ClusterRun, Experiment};
use super::FallbackFlags;
use crate::calibration::{calibrate, CalibrationTable, IntervalStream};
use crate::dataset::{Phase, WindowIndex};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{eval_series, test_metrics, EvalOptions, HorizonStats, MethodEval, MetricRow, MetricTable};
use crate::model::{rollout_path, train, Mode, Params, Workspace};
use crate::scalar::Real;
use log::info;
use rayon::prelude::*;

/// Refit models with the frozen routing: flagged clusters have no prototype.
#[derive(Debug, Clone)]
pub struct RoutedModels<T> {
    pub global: Params<T>,
    pub prototypes: Vec<Option<Params<T>>>,
    pub labels: Vec<usize>,
    pub flags: FallbackFlags,
}

impl<T> RoutedModels<T> {
    pub fn model_for(&self, i: usize) -> &Params<T> {
        match &self.prototypes[self.labels[i]] {
            Some(p) if !self.flags.flagged[self.labels[i]] => p,
            _ => &self.global,
        }
    }

    pub fn fallback(&self) -> Vec<bool> {
        self.flags.series_fallback(&self.labels)
    }
}

/// What to refit and score for one method.
#[derive(Debug, Clone)]
pub enum MethodPlan<T> {
    Global,
    /// One fresh model per series.
    Individual,
    /// A selected clustered run (the proposed method or a clustered baseline).
    Clustered(ClusterRun<T>),
}

#[derive(Debug, Clone)]
pub enum TestModels<T> {
    Global(Params<T>),
    Individual(Vec<Params<T>>),
    Routed(RoutedModels<T>),
}

impl<T> TestModels<T> {
    pub fn model_for(&self, i: usize) -> &Params<T> {
        match self {
            TestModels::Global(p) => p,
            TestModels::Individual(v) => &v[i],
            TestModels::Routed(r) => r.model_for(i),
        }
    }
}

/// TEST results of one method; `stats[i][j]` is series `i` at horizon `j`.
#[derive(Debug, Clone)]
pub struct MethodTest<T> {
    pub method: String,
    pub k: Option<usize>,
    pub models: TestModels<T>,
    pub stats: Vec<Vec<HorizonStats<T>>>,
    pub stats_cal: Option<Vec<Vec<HorizonStats<T>>>>,
    pub calibration: Option<CalibrationTable>,
    pub fallback: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct TestReport<T> {
    pub horizons: Vec<usize>,
    pub global_refit: Params<T>,
    pub methods: Vec<MethodTest<T>>,
    pub table: MetricTable,
}

impl<T: Real> TestReport<T> {
    pub fn method(&self, name: &str) -> Option<&MethodTest<T>> {
        self.methods.iter().find(|m| m.method == name)
    }
}

fn per_series(
    stats: &[Vec<HorizonStats<f64>>],
    j: usize,
    f: impl Fn(&HorizonStats<f64>) -> Option<f64>,
) -> Result<Vec<f64>> {
    stats
        .iter()
        .map(|s| f(&s[j]).ok_or_else(|| Error::InvalidData(format!("no TEST windows at h={}", s[j].horizon))))
        .collect()
}

fn to_f64<T: Real>(stats: &[Vec<HorizonStats<T>>]) -> Vec<Vec<HorizonStats<f64>>> {
    stats
        .iter()
        .map(|row| {
            row.iter()
                .map(|s| HorizonStats {
                    horizon: s.horizon,
                    windows: s.windows,
                    huber: s.huber.as_f64(),
                    se: s.se.as_f64(),
                    ae: s.ae.as_f64(),
                    pinball: s.pinball.as_f64(),
                    cells: s.cells,
                    covered: s.covered,
                    width: s.width.as_f64(),
                    crossings: s.crossings,
                })
                .collect()
        })
        .collect()
}

fn interval_sums(stats: &[Vec<HorizonStats<f64>>], j: usize) -> (usize, usize, f64) {
    stats.iter().fold((0, 0, 0.0), |(c, n, w), s| (c + s[j].covered, n + s[j].cells, w + s[j].width))
}

impl<T: Real> Experiment<'_, T> {
    /// VAL interval streams of the routed TRAIN-fitted models, then the
    /// smallest grid factor reaching the target per horizon.
    pub fn calibrate_with<'m>(&self, model_for: impl Fn(usize) -> &'m Params<T> + Sync) -> Result<CalibrationTable>
    where
        T: 'm,
    {
        let hs = self.config().horizons.clone();
        let idx = self.val_index().restrict(&hs);
        let view = self.view();
        let per: Vec<Vec<IntervalStream>> = (0..self.n())
            .into_par_iter()
            .map(|i| {
                let m = model_for(i);
                let mut ws = Workspace::new(m, idx.window);
                let mut streams: Vec<IntervalStream> = hs.iter().map(|&h| IntervalStream::new(h)).collect();
                for t in idx.all_ends() {
                    let active: Vec<usize> =
                        (0..hs.len()).filter(|&j| idx.ends(hs[j]).binary_search(&t).is_ok()).collect();
                    let steps = active.iter().map(|&j| hs[j]).max().unwrap_or(0);
                    let path = rollout_path(m, view.window(i, t, idx.window), steps, &mut ws)?;
                    for &j in &active {
                        let q = path[hs[j] - 1]
                            .quantiles()
                            .ok_or_else(|| Error::InvalidConfig("calibration needs quantile mode".into()))?;
                        let y = view.target(i, t + hs[j]);
                        for (p, yp) in y.iter().enumerate() {
                            streams[j].push(
                                q.median()[p].as_f64(),
                                q.lower()[p].as_f64(),
                                q.upper()[p].as_f64(),
                                yp.as_f64(),
                            );
                        }
                    }
                }
                Ok(streams)
            })
            .collect::<Result<_>>()?;
        let mut merged: Vec<IntervalStream> = hs.iter().map(|&h| IntervalStream::new(h)).collect();
        for s in per {
            for (m, s) in merged.iter_mut().zip(s) {
                m.median.extend(s.median);
                m.lower.extend(s.lower);
                m.upper.extend(s.upper);
                m.target.extend(s.target);
            }
        }
        calibrate(&merged, self.config().target_coverage)
    }

    /// GLOBAL warm-started from its TRAIN fit and refit on TRAIN+VAL for half
    /// the GLOBAL epoch budget.
    pub fn refit_global(&self, global: &Params<T>) -> Result<Params<T>> {
        let cfg = &self.config().train;
        let all: Vec<usize> = (0..self.n()).collect();
        let windows = self.windows(&self.trainval_idx, &all);
        let epochs = (cfg.epochs_global / 2).max(1);
        Ok(train(global.clone(), None, self.view(), &windows, cfg, epochs, derive_seed(cfg.seed, &[0x72]))?.params)
    }

    /// Unflagged prototypes warm-started from their pre-refit parameters, with
    /// the refit GLOBAL's mixture and the refit GLOBAL as anchor.
    pub fn refit_routed(&self, run: &ClusterRun<T>, global_refit: &Params<T>) -> Result<RoutedModels<T>> {
        assert!(run.flags.frozen, "fallback flags must be frozen before refit");
        let cfg = &self.config().train;
        let epochs = (cfg.epochs_global / 2).max(1);
        let prototypes = (0..run.k)
            .into_par_iter()
            .map(|c| {
                let members = run.assignment.members(c);
                if run.flags.flagged[c] || members.is_empty() {
                    return Ok(None);
                }
                let mut init = run.prototypes[c].params.clone();
                init.set_shared_from(global_refit);
                let windows = self.windows(&self.trainval_idx, &members);
                let seed = derive_seed(cfg.seed, &[0x70, run.k as u64, run.seed, c as u64]);
                Ok(Some(train(init, Some(global_refit), self.view(), &windows, cfg, epochs, seed)?.params))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RoutedModels {
            global: global_refit.clone(),
            prototypes,
            labels: run.assignment.labels.clone(),
            flags: run.flags.clone(),
        })
    }

    fn fit_individual(&self) -> Result<Vec<Params<T>>> {
        let cfg = &self.config().train;
        (0..self.n())
            .into_par_iter()
            .map(|i| {
                let init = Params::init(self.shape().clone(), derive_seed(cfg.seed, &[0x49, i as u64]));
                let windows = self.windows(&self.trainval_idx, &[i]);
                let seed = derive_seed(cfg.seed, &[0x4a, i as u64]);
                Ok(train(init, None, self.view(), &windows, cfg, cfg.epochs_global, seed)?.params)
            })
            .collect()
    }

    /// Scores each series on TEST with its model at every configured horizon.
    pub fn evaluate_test(
        &self,
        models: &TestModels<T>,
        calibration: Option<&CalibrationTable>,
    ) -> Result<Vec<Vec<HorizonStats<T>>>> {
        let idx: &WindowIndex = self.test_index();
        let view = self.view();
        let delta = self.config().train.delta;
        (0..self.n())
            .into_par_iter()
            .map(|i| {
                let m = models.model_for(i);
                let mut opts = EvalOptions::for_model(m, delta);
                if let Some(cal) = calibration {
                    let s = idx.horizons().iter().map(|&h| cal.scale(h).map(T::lit).unwrap_or(T::one())).collect();
                    opts.scale = Some(s);
                }
                let mut ws = Workspace::new(m, idx.window);
                eval_series(m, view, idx, i, &opts, &mut ws)
            })
            .collect()
    }

    /// Calibrates on VAL, refits on TRAIN+VAL and evaluates every plan on
    /// TEST, once. GLOBAL's refit model is the reference for relative metrics.
    pub fn final_refit_and_test(
        &self,
        global_train: &Params<T>,
        plans: &[(String, MethodPlan<T>)],
    ) -> Result<TestReport<T>> {
        let quantile = self.shape().mode() == Mode::Quantile;
        let calibrating = quantile && self.config().calibrate;

        self.set_phase(Phase::Calibrate);
        let mut tables = Vec::with_capacity(plans.len());
        for (_, plan) in plans {
            let t = match plan {
                _ if !calibrating => None,
                MethodPlan::Global => Some(self.calibrate_with(|_| global_train)?),
                MethodPlan::Clustered(run) => Some(self.calibrate_with(|i| {
                    let c = run.assignment.labels[i];
                    if run.flags.flagged[c] {
                        global_train
                    } else {
                        &run.prototypes[c].params
                    }
                })?),
                MethodPlan::Individual => None,
            };
            tables.push(t);
        }

        self.set_phase(Phase::Refit);
        info!("refitting GLOBAL on TRAIN+VAL");
        let global_refit = self.refit_global(global_train)?;
        let mut models = Vec::with_capacity(plans.len());
        for (name, plan) in plans {
            info!("refitting {name}");
            models.push(match plan {
                MethodPlan::Global => TestModels::Global(global_refit.clone()),
                MethodPlan::Individual => TestModels::Individual(self.fit_individual()?),
                MethodPlan::Clustered(run) => TestModels::Routed(self.refit_routed(run, &global_refit)?),
            });
        }

        self.set_phase(Phase::Evaluate);
        let reference = to_f64(&self.evaluate_test(&TestModels::Global(global_refit.clone()), None)?);
        let horizons = self.config().horizons.clone();
        let mut methods = Vec::with_capacity(plans.len());
        let mut table = MetricTable::default();
        for (((name, plan), models), calibration) in plans.iter().zip(models).zip(tables) {
            let stats = self.evaluate_test(&models, None)?;
            let stats_cal = calibration.as_ref().map(|c| self.evaluate_test(&models, Some(c))).transpose()?;
            let (k, fallback) = match (plan, &models) {
                (MethodPlan::Clustered(run), TestModels::Routed(r)) => (Some(run.k), Some(r.fallback())),
                _ => (None, None),
            };
            let s64 = to_f64(&stats);
            let c64 = stats_cal.as_deref().map(to_f64);
            for (j, &h) in horizons.iter().enumerate() {
                let g = per_series(&reference, j, |s| s.loss(LossKind::Mse))?;
                let mse = per_series(&s64, j, |s| s.loss(LossKind::Mse))?;
                let mae = per_series(&s64, j, |s| s.mae())?;
                let pin = if quantile { Some(per_series(&s64, j, |s| s.loss(LossKind::Pinball))?) } else { None };
                let crossings = quantile.then(|| {
                    let c: usize = s64.iter().map(|s| s[j].crossings).sum();
                    let w: usize = s64.iter().map(|s| s[j].windows).sum();
                    let q = self.shape().n_levels();
                    (c, w * self.data().dim() * (q - 1))
                });
                let row: MetricRow = test_metrics(
                    &MethodEval {
                        method: name,
                        horizon: h,
                        k,
                        series_mse: &mse,
                        series_mae: &mae,
                        series_pinball: pin.as_deref(),
                        coverage: quantile.then(|| interval_sums(&s64, j)),
                        coverage_cal: c64.as_ref().map(|c| interval_sums(c, j)),
                        crossings,
                        fallback: fallback.as_deref(),
                    },
                    &g,
                )?;
                table.rows.push(row);
            }
            methods.push(MethodTest { method: name.clone(), k, models, stats, stats_cal, calibration, fallback });
        }
        Ok(TestReport { horizons, global_refit, methods, table })
    }
}
