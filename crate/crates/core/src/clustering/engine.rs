use super::{
    compute_fallback, init_assignments, penalized, reassign, routed_val_risk, Assignment, CostMatrix, FallbackFlags,
    InitStrategy,
};
use crate::baselines::features;
use crate::dataset::{AccessAudit, DataView, Dataset, Phase, Split, SplitSpec, WindowIndex};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{eval_series, mean_defined, EvalOptions};
use crate::model::{train, Mode, ModelShape, Params, TrainConfig, WindowRef, Workspace};
use crate::scalar::Real;
use log::{debug, info};
use rayon::prelude::*;

type OuterLoop<T> = (Assignment, Vec<Prototype<T>>, ValGrid<T>, Vec<IterationTrace>);
use serde::{Deserialize, Serialize};

/// Candidate `K`s, seeds and outer-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub candidates: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Penalty weight in `SelAbs + gamma K / N`.
    pub gamma: f64,
    /// Outer iteration cap `L`.
    pub max_iters: usize,
    /// Horizons averaged in the reassignment cost.
    pub assign_horizons: Vec<usize>,
    pub init: InitStrategy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            candidates: (2..=9).collect(),
            seeds: (0..5).collect(),
            gamma: 0.05,
            max_iters: 10,
            assign_horizons: vec![1, 3, 6],
            init: InitStrategy::RandomBalanced,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.candidates.is_empty() || self.candidates.contains(&0) {
            return bad("candidate K set must be nonempty and positive");
        }
        if self.seeds.is_empty() {
            return bad("seed set must be nonempty");
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be finite and >= 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if self.assign_horizons.is_empty() || self.assign_horizons.contains(&0) {
            return bad("assignment horizons must be nonempty and positive");
        }
        Ok(())
    }
}

/// Everything that drives one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    /// TEST (and calibration) horizons.
    pub horizons: Vec<usize>,
    /// Nominal interval coverage for calibration.
    pub target_coverage: f64,
    pub calibrate: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            horizons: vec![1, 3, 6],
            target_coverage: 0.8,
            calibrate: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.selection.validate()?;
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::InvalidConfig("horizons must be nonempty and positive".into()));
        }
        if !(self.target_coverage > 0.0 && self.target_coverage < 1.0) {
            return Err(Error::InvalidConfig("target coverage must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Longest horizon used anywhere in the run.
    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().chain(&self.selection.assign_horizons).copied().max().unwrap_or(1)
    }
}

/// Mixes a base seed with a path of integers (splitmix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// A cluster prototype; `inert` prototypes are untrained GLOBAL copies.
#[derive(Debug, Clone)]
pub struct Prototype<T> {
    pub params: Params<T>,
    pub inert: bool,
}

/// VAL losses indexed by series, model and horizon; `None` is undefined.
#[derive(Debug, Clone)]
pub struct ValGrid<T> {
    pub n: usize,
    pub models: usize,
    pub horizons: Vec<usize>,
    losses: Vec<Option<T>>,
}

impl<T: Real> ValGrid<T> {
    pub fn get(&self, i: usize, m: usize, h: usize) -> Option<T> {
        let hk = self.horizons.iter().position(|&x| x == h)?;
        self.losses[(i * self.models + m) * self.horizons.len() + hk]
    }

    /// Losses of model `m` at horizon `h`, one per series.
    pub fn column(&self, m: usize, h: usize) -> Vec<Option<T>> {
        (0..self.n).map(|i| self.get(i, m, h)).collect()
    }

    /// Cost matrix over all models, averaging the defined horizons in `hs`.
    pub fn cost_matrix(&self, hs: &[usize]) -> Result<CostMatrix<T>> {
        let entries = (0..self.n)
            .flat_map(|i| (0..self.models).map(move |m| mean_defined(hs.iter().map(|&h| self.get(i, m, h)))))
            .collect();
        CostMatrix::new(self.n, self.models, hs.to_vec(), entries)
    }
}

/// Labels and objective after one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub labels: Vec<usize>,
    /// `sum_i C[i][c_i]` after reassignment.
    pub objective: f64,
    pub changed: bool,
}

/// Outcome of one `(K, seed)` TRAIN/VAL run.
#[derive(Debug, Clone)]
pub struct ClusterRun<T> {
    pub k: usize,
    /// Selection seed (the `s` of the `(K, s)` grid).
    pub seed: u64,
    pub assignment: Assignment,
    pub prototypes: Vec<Prototype<T>>,
    pub flags: FallbackFlags,
    /// Routed VAL loss at h=1.
    pub sel_abs: f64,
    pub trace: Vec<IterationTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub k: usize,
    pub seed: u64,
    pub sel_abs: f64,
    pub sel_pen: f64,
    pub iterations: usize,
    pub flagged: usize,
}

/// The full SelAbs/SelPen table and the winning run.
#[derive(Debug, Clone)]
pub struct Selection<T> {
    pub table: Vec<SelectionRow>,
    pub best: ClusterRun<T>,
}

impl<T> Selection<T> {
    pub fn k_star(&self) -> usize {
        self.best.k
    }

    pub fn seed_star(&self) -> u64 {
        self.best.seed
    }
}

/// How a clustered method searches: loss, initialization, and whether the
/// reassignment loop runs (fixed-label baselines skip it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchMode {
    pub kind: LossKind,
    pub init: InitStrategy,
    pub reassign: bool,
}

/// A prepared dataset bound to a split, a configuration and an optional audit.
pub struct Experiment<'a, T: Real> {
    data: &'a Dataset<T>,
    spec: SplitSpec,
    cfg: PipelineConfig,
    audit: Option<&'a AccessAudit>,
    shape: ModelShape,
    pub(super) train_idx: WindowIndex,
    pub(super) trainval_idx: WindowIndex,
    pub(super) val_idx: WindowIndex,
    pub(super) test_idx: WindowIndex,
}

impl<'a, T: Real> Experiment<'a, T> {
    pub fn new(
        data: &'a Dataset<T>,
        spec: SplitSpec,
        cfg: PipelineConfig,
        audit: Option<&'a AccessAudit>,
    ) -> Result<Self> {
        cfg.validate()?;
        if !data.is_materialized() {
            return Err(Error::InvalidData("dataset still has missing values; prepare it first".into()));
        }
        let w = cfg.train.window;
        spec.validate(data.len_time(), w + cfg.max_horizon())?;
        let shape = cfg.train.shape(data.dim());
        shape.validate()?;
        let mut val_hs = cfg.selection.assign_horizons.clone();
        val_hs.extend(&cfg.horizons);
        val_hs.push(1);
        val_hs.sort_unstable();
        val_hs.dedup();
        Ok(Self {
            data,
            train_idx: WindowIndex::build(Split::Train, spec.range(Split::Train), w, &[1]),
            trainval_idx: WindowIndex::build(Split::TrainVal, spec.range(Split::TrainVal), w, &[1]),
            val_idx: WindowIndex::build(Split::Val, spec.range(Split::Val), w, &val_hs),
            test_idx: WindowIndex::build(Split::Test, spec.range(Split::Test), w, &cfg.horizons),
            spec,
            cfg,
            audit,
            shape,
        })
    }

    pub fn data(&self) -> &'a Dataset<T> {
        self.data
    }

    pub fn spec(&self) -> SplitSpec {
        self.spec
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.data.n_series()
    }

    pub fn view(&self) -> DataView<'a, T> {
        DataView::new(self.data, self.audit)
    }

    pub fn test_index(&self) -> &WindowIndex {
        &self.test_idx
    }

    pub fn val_index(&self) -> &WindowIndex {
        &self.val_idx
    }

    pub(super) fn set_phase(&self, phase: Phase) {
        if let Some(a) = self.audit {
            a.set_phase(phase);
        }
    }

    /// The natural loss of the model mode: Huber for point, pinball for quantile.
    pub fn model_loss(&self) -> LossKind {
        match self.shape.mode() {
            Mode::Point => LossKind::Huber,
            Mode::Quantile => LossKind::Pinball,
        }
    }

    /// The search used by the proposed method.
    pub fn ours_mode(&self) -> SearchMode {
        SearchMode { kind: self.model_loss(), init: self.cfg.selection.init, reassign: true }
    }

    /// One-step training windows of `members` from `idx`.
    pub(super) fn windows(&self, idx: &WindowIndex, members: &[usize]) -> Vec<WindowRef> {
        members
            .iter()
            .flat_map(|&i| idx.ends(1).iter().map(move |&t| WindowRef { series: i as u32, end: t as u32 }))
            .collect()
    }

    /// Per-series TRAIN summary features.
    pub fn features(&self) -> Vec<Vec<T>> {
        features(self.view(), self.spec.range(Split::Train))
    }

    /// Fits GLOBAL on every series' TRAIN windows from a seeded initialization.
    pub fn fit_global(&self) -> Result<Params<T>> {
        self.set_phase(Phase::Fit);
        let seed = self.cfg.train.seed;
        let init = Params::init(self.shape.clone(), derive_seed(seed, &[0x61]));
        let all: Vec<usize> = (0..self.n()).collect();
        let windows = self.windows(&self.train_idx, &all);
        info!("fitting GLOBAL on {} windows", windows.len());
        let out = train(
            init,
            None,
            self.view(),
            &windows,
            &self.cfg.train,
            self.cfg.train.epochs_global,
            derive_seed(seed, &[0x62]),
        )?;
        Ok(out.params)
    }

    /// Prototypes warm-started at `global` and pulled toward it, one per
    /// cluster, trained on the members' TRAIN windows. Empty clusters get an
    /// inert copy of `global`.
    pub fn fit_prototypes(&self, a: &Assignment, global: &Params<T>, seed: u64) -> Result<Vec<Prototype<T>>> {
        (0..a.k)
            .into_par_iter()
            .map(|c| {
                let members = a.members(c);
                if members.is_empty() {
                    return Ok(Prototype { params: global.clone(), inert: true });
                }
                let windows = self.windows(&self.train_idx, &members);
                let out = train(
                    global.clone(),
                    Some(global),
                    self.view(),
                    &windows,
                    &self.cfg.train,
                    self.cfg.train.epochs_proto,
                    derive_seed(seed, &[c as u64]),
                )?;
                Ok(Prototype { params: out.params, inert: false })
            })
            .collect()
    }

    /// VAL losses of every model on every series at `horizons`.
    pub fn val_grid(&self, models: &[&Params<T>], horizons: &[usize], kind: LossKind) -> Result<ValGrid<T>> {
        if kind == LossKind::Pinball && self.shape.mode() != Mode::Quantile {
            return Err(Error::InvalidConfig("pinball loss needs quantile mode".into()));
        }
        let idx = self.val_idx.restrict(horizons);
        let view = self.view();
        let delta = self.cfg.train.delta;
        let rows: Vec<Vec<Option<T>>> = (0..self.n())
            .into_par_iter()
            .map(|i| {
                let mut row = Vec::with_capacity(models.len() * horizons.len());
                for m in models {
                    let mut ws = Workspace::new(*m, idx.window);
                    let st = eval_series(*m, view, &idx, i, &EvalOptions::for_model(m, delta), &mut ws)?;
                    row.extend(st.iter().map(|s| s.loss(kind)));
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(ValGrid { n: self.n(), models: models.len(), horizons: horizons.to_vec(), losses: rows.concat() })
    }

    /// GLOBAL's h=1 VAL loss per series.
    pub fn global_val_loss(&self, global: &Params<T>, kind: LossKind) -> Result<Vec<Option<T>>> {
        Ok(self.val_grid(&[global], &[1], kind)?.column(0, 1))
    }

    /// Alternates TRAIN prototype fits with VAL reassignment until the labels
    /// stop changing or the iteration cap is reached.
    pub fn outer_loop(&self, global: &Params<T>, init: Assignment, seed: u64, kind: LossKind) -> Result<OuterLoop<T>> {
        let ha = &self.cfg.selection.assign_horizons;
        let mut hs = ha.clone();
        hs.push(1);
        hs.sort_unstable();
        hs.dedup();
        let mut a = init;
        let mut trace = Vec::new();
        for it in 1..=self.cfg.selection.max_iters {
            let protos = self.fit_prototypes(&a, global, derive_seed(seed, &[it as u64]))?;
            let refs: Vec<&Params<T>> = protos.iter().map(|p| &p.params).collect();
            let grid = self.val_grid(&refs, &hs, kind)?;
            let cost = grid.cost_matrix(ha)?;
            let mut next = reassign(&cost, &a)?;
            next.iterations = it;
            let changed = next.labels != a.labels;
            trace.push(IterationTrace {
                iteration: it,
                labels: next.labels.clone(),
                objective: cost.objective(&next.labels).as_f64(),
                changed,
            });
            debug!("iteration {it}: objective {:.6}, changed {changed}", trace[it - 1].objective);
            a = next;
            if !changed || it == self.cfg.selection.max_iters {
                return Ok((a, protos, grid, trace));
            }
        }
        unreachable!("max_iters >= 1 is validated")
    }

    /// One `(K, seed)` run: prototypes (with or without reassignment), frozen
    /// fallback flags and the routed VAL risk.
    pub fn cluster_run(
        &self,
        global: &Params<T>,
        global_h1: &[Option<T>],
        init: Assignment,
        seed: u64,
        mode: SearchMode,
    ) -> Result<ClusterRun<T>> {
        let k = init.k;
        let (a, prototypes, grid, trace) = if mode.reassign {
            self.outer_loop(global, init, seed, mode.kind)?
        } else {
            let protos = self.fit_prototypes(&init, global, derive_seed(seed, &[1]))?;
            let refs: Vec<&Params<T>> = protos.iter().map(|p| &p.params).collect();
            let grid = self.val_grid(&refs, &[1], mode.kind)?;
            (init, protos, grid, Vec::new())
        };
        let own: Vec<Option<T>> = (0..self.n()).map(|i| grid.get(i, a.labels[i], 1)).collect();
        let mut flags = compute_fallback(&a, &own, global_h1);
        for (c, p) in prototypes.iter().enumerate() {
            flags.flagged[c] |= p.inert;
        }
        let sel_abs = routed_val_risk(&a, &flags, &own, global_h1)
            .ok_or_else(|| Error::InvalidData("no VAL windows at h=1".into()))?
            .as_f64();
        Ok(ClusterRun { k, seed, assignment: a, prototypes, flags, sel_abs, trace })
    }

    /// Runs every `(K, seed)` pair and keeps the minimizer of
    /// `SelAbs + gamma K / N` (ties: smaller `K`, then smaller seed).
    pub fn select_k(&self, global: &Params<T>, mode: SearchMode) -> Result<Selection<T>> {
        self.set_phase(Phase::Select);
        let sel = &self.cfg.selection;
        let n = self.n();
        let mut ks: Vec<usize> = sel.candidates.iter().copied().filter(|&k| k <= n).collect();
        ks.sort_unstable();
        ks.dedup();
        if ks.is_empty() {
            return Err(Error::InvalidConfig(format!("no candidate K is <= N={n}")));
        }
        let mut seeds = sel.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        let global_h1 = self.global_val_loss(global, mode.kind)?;
        let feats = (mode.init == InitStrategy::Feature).then(|| self.features());
        let mut table = Vec::new();
        let mut best: Option<(f64, ClusterRun<T>)> = None;
        for &k in &ks {
            for &s in &seeds {
                let init = init_assignments(n, k, derive_seed(s, &[k as u64]), mode.init, feats.as_deref())?;
                let mut run =
                    self.cluster_run(global, &global_h1, init, derive_seed(self.cfg.train.seed, &[k as u64, s]), mode)?;
                run.seed = s;
                let pen = penalized(run.sel_abs, k, n, sel.gamma);
                info!("K={k} seed={s}: SelAbs {:.6} SelPen {pen:.6}", run.sel_abs);
                table.push(SelectionRow {
                    k,
                    seed: s,
                    sel_abs: run.sel_abs,
                    sel_pen: pen,
                    iterations: run.assignment.iterations,
                    flagged: run.flags.flagged.iter().filter(|&&f| f).count(),
                });
                if best.as_ref().is_none_or(|(b, _)| pen < *b) {
                    best = Some((pen, run));
                }
            }
        }
        let (_, best) = best.expect("at least one candidate ran");
        Ok(Selection { table, best })
    }
}
