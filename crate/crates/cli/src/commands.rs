use crate::config::RunConfig;
use adapool::baselines::{run_baseline, Method};
use adapool::clustering::{
    assign_new_series, Assignment, ClusterRun, Experiment, MethodPlan, Prototype, RoutedModel, RoutedModels,
    TestModels, TestReport,
};
use adapool::dataset::{
    fit_impute_standardize, load_dataset, read_csv_series, write_csv_dir, write_packed, AccessAudit, DataFormat,
    DataView, Dataset, PrepConfig, Standardizer,
};
use adapool::losses::LossKind;
use adapool::manifest::{AuditRecord, MethodRecord, RunManifest};
use adapool::metrics::MetricTable;
use adapool::model::{read_checkpoint, rollout, rollout_path, write_checkpoint, Params, Workspace};
use adapool::synthetic::{generate, SyntheticSpec};
use adapool::{Error, Result};
use log::info;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

const STANDARDIZER: &str = "standardizer.json";
const PREPARED: &str = "prepared.mts";
const GLOBAL: &str = "global.pcm";
const GLOBAL_REFIT: &str = "global_refit.pcm";
const REPORT: &str = "report.json";
const METRICS_CSV: &str = "metrics.csv";
/// Series and components written to the trajectory plot data.
const TRAJ_SERIES: usize = 3;
const TRAJ_COMPONENTS: usize = 4;

/// Sizes the worker pool; `ADAPOOL_THREADS` wins over the config.
pub fn init_threads(cfg_threads: Option<usize>) {
    let n = std::env::var("ADAPOOL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).or(cfg_threads);
    if let Some(n) = n.filter(|&n| n > 0) {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn audit_records(command: &str, audit: &AccessAudit) -> Vec<AuditRecord> {
    audit
        .summary()
        .into_iter()
        .map(|(phase, split, reads)| AuditRecord { command: command.to_string(), phase, split, reads })
        .collect()
}

fn rel(p: &Path, base: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned()
}

fn slug(m: Method) -> String {
    m.name().to_ascii_lowercase()
}

fn open_run(cfg: &RunConfig) -> Result<(PathBuf, RunManifest)> {
    let dir = cfg.run_dir();
    let man = RunManifest::load(&dir)?;
    Ok((dir, man))
}

fn load_prepared(dir: &Path, man: &RunManifest) -> Result<Dataset<f64>> {
    let p = man.prepared.as_ref().ok_or_else(|| Error::Protocol("run is not prepared; run `prepare` first".into()))?;
    load_dataset(&dir.join(p), DataFormat::Packed)
}

fn load_params(dir: &Path, rel_path: &str, levels: &[f64]) -> Result<Params<f64>> {
    read_checkpoint(&dir.join(rel_path), levels)
}

/// Split, TRAIN-only imputation and standardization.
pub fn prepare(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.run_dir();
    if let Ok(old) = RunManifest::load(&dir) {
        if old.test_evaluated {
            return Err(Error::Protocol(format!("run '{}' already evaluated TEST; choose a new run_id", cfg.run_id)));
        }
    }
    fs::create_dir_all(&dir)?;
    let raw: Dataset<f64> = load_dataset(&cfg.data, cfg.data_format())?;
    info!("loaded {} series x {} steps x {} components", raw.n_series(), raw.len_time(), raw.dim());
    let prep = PrepConfig { impute: cfg.impute_strategy(), ..PrepConfig::default() };
    let (st, data) = fit_impute_standardize(&raw, &cfg.split, &prep)?;
    fs::write(dir.join(STANDARDIZER), serde_json::to_string_pretty(&st)?)?;
    write_packed(&data, &dir.join(PREPARED))?;
    let snapshot = serde_json::to_value(cfg)?;
    let mut man =
        RunManifest::new(&cfg.run_id, snapshot, cfg.pipeline.train.seed, cfg.split, &cfg.data.to_string_lossy());
    man.standardizer = Some(STANDARDIZER.into());
    man.prepared = Some(PREPARED.into());
    man.save(&dir)?;
    println!("prepared {} series into {}", data.n_series(), dir.display());
    Ok(())
}

fn write_selection_csv(path: &Path, rows: &[adapool::clustering::SelectionRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "k,seed,sel_abs,sel_pen,iterations,flagged")?;
    for r in rows {
        writeln!(f, "{},{},{},{},{},{}", r.k, r.seed, r.sel_abs, r.sel_pen, r.iterations, r.flagged)?;
    }
    f.flush()?;
    Ok(())
}

/// GLOBAL plus every configured method on TRAIN/VAL; `k` fixes the cluster
/// count, otherwise every candidate is swept.
pub fn fit_methods(cfg: &RunConfig, k: Option<usize>, command: &str) -> Result<()> {
    let (dir, mut man) = open_run(cfg)?;
    if man.test_evaluated {
        return Err(Error::Protocol(format!("run '{}' already evaluated TEST; choose a new run_id", cfg.run_id)));
    }
    let data = load_prepared(&dir, &man)?;
    let audit = AccessAudit::new(data.n_series(), data.len_time(), man.split);
    let mut pc = cfg.pipeline.clone();
    if let Some(k) = k {
        pc.selection.candidates = vec![k];
    }
    let levels = pc.train.levels.clone();
    let exp = Experiment::new(&data, man.split, pc, Some(&audit))?;

    let global = match &man.global {
        Some(p) if dir.join(p).exists() => load_params(&dir, p, &levels)?,
        _ => {
            let g = exp.fit_global()?;
            write_checkpoint(&g, &dir.join(GLOBAL))?;
            man.global = Some(GLOBAL.into());
            g
        }
    };
    if global.shape() != exp.shape() {
        return Err(Error::InvalidConfig("stored GLOBAL checkpoint does not match the configured model".into()));
    }

    let proto_dir = dir.join("prototypes");
    for &m in &cfg.methods {
        info!("{command}: {m}");
        let planned = run_baseline(m, &exp, &global)?;
        let rec = match planned.selection {
            None => MethodRecord {
                method: m,
                k: None,
                seed: None,
                sel_abs: None,
                labels: None,
                iterations: Vec::new(),
                selection: Vec::new(),
                flags: None,
                prototypes: Vec::new(),
                refit_prototypes: Vec::new(),
                calibration: None,
            },
            Some(sel) => {
                fs::create_dir_all(&proto_dir)?;
                let best = &sel.best;
                let mut paths = Vec::with_capacity(best.k);
                for (c, p) in best.prototypes.iter().enumerate() {
                    let path = proto_dir.join(format!("{}_c{c}.pcm", slug(m)));
                    write_checkpoint(&p.params, &path)?;
                    paths.push(rel(&path, &dir));
                }
                write_selection_csv(&dir.join(format!("selection_{}.csv", slug(m))), &sel.table)?;
                println!("{m}: K*={} seed*={} SelAbs={:.6}", best.k, best.seed, best.sel_abs);
                println!(
                    "  {:>3} {:>5} {:>12} {:>12} {:>5} {:>7}",
                    "K", "seed", "SelAbs", "SelPen", "iters", "flagged"
                );
                for r in &sel.table {
                    println!(
                        "  {:>3} {:>5} {:>12.6} {:>12.6} {:>5} {:>7}",
                        r.k, r.seed, r.sel_abs, r.sel_pen, r.iterations, r.flagged
                    );
                }
                MethodRecord {
                    method: m,
                    k: Some(best.k),
                    seed: Some(best.seed),
                    sel_abs: Some(best.sel_abs),
                    labels: Some(best.assignment.labels.clone()),
                    iterations: best.trace.clone(),
                    selection: sel.table.clone(),
                    flags: Some(best.flags.clone()),
                    prototypes: paths,
                    refit_prototypes: Vec::new(),
                    calibration: None,
                }
            }
        };
        man.upsert(rec);
    }
    man.audit.extend(audit_records(command, &audit));
    man.save(&dir)?;
    Ok(())
}

fn plan_from_record(rec: &MethodRecord, dir: &Path, levels: &[f64]) -> Result<MethodPlan<f64>> {
    Ok(match rec.method {
        Method::Global => MethodPlan::Global,
        Method::Individual => MethodPlan::Individual,
        _ => {
            let missing =
                || Error::Protocol(format!("{} has no stored selection; run `train` or `select-k`", rec.method));
            let k = rec.k.ok_or_else(missing)?;
            let labels = rec.labels.clone().ok_or_else(missing)?;
            let flags = rec.flags.clone().ok_or_else(missing)?;
            let prototypes = rec
                .prototypes
                .iter()
                .map(|p| Ok(Prototype { params: load_params(dir, p, levels)?, inert: false }))
                .collect::<Result<Vec<_>>>()?;
            MethodPlan::Clustered(ClusterRun {
                k,
                seed: rec.seed.unwrap_or(0),
                assignment: Assignment::new(labels, k)?,
                prototypes,
                flags,
                sel_abs: rec.sel_abs.unwrap_or(f64::NAN),
                trace: rec.iterations.clone(),
            })
        }
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportFile {
    run_id: String,
    table: MetricTable,
}

fn write_error_csv(path: &Path, report: &TestReport<f64>, names: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "method,horizon,series,name,mse,mae")?;
    for m in &report.methods {
        for (i, row) in m.stats.iter().enumerate() {
            for s in row {
                let mse = s.loss(LossKind::Mse).map(|v| v.to_string()).unwrap_or_default();
                let mae = s.mae().map(|v| v.to_string()).unwrap_or_default();
                writeln!(f, "{},{},{},{},{mse},{mae}", m.method, s.horizon, i, names[i])?;
            }
        }
    }
    f.flush()?;
    Ok(())
}

/// TEST forecasts and targets, in original units, for a few series.
fn write_trajectories(
    path: &Path,
    report: &TestReport<f64>,
    exp: &Experiment<'_, f64>,
    st: &Standardizer<f64>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "method,series,horizon,time,component,target,forecast,lower,upper")?;
    let view = DataView::unaudited(exp.data());
    let idx = exp.test_index();
    let w = idx.window;
    let comps = exp.data().dim().min(TRAJ_COMPONENTS);
    for m in &report.methods {
        for i in 0..exp.n().min(TRAJ_SERIES) {
            let model = m.models.model_for(i);
            for &h in idx.horizons() {
                for &t in idx.ends(h) {
                    let fc = rollout(model, view.window(i, t, w), h)?;
                    let y = view.target(i, t + h);
                    for (p, &yp) in y.iter().enumerate().take(comps) {
                        let c = st.inverse(p, fc.center()[p]);
                        let (lo, up) = match fc.quantiles() {
                            Some(q) => {
                                (st.inverse(p, q.lower()[p]).to_string(), st.inverse(p, q.upper()[p]).to_string())
                            }
                            None => (String::new(), String::new()),
                        };
                        writeln!(f, "{},{i},{h},{},{p},{},{c},{lo},{up}", m.method, t + h, st.inverse(p, yp))?;
                    }
                }
            }
        }
    }
    f.flush()?;
    Ok(())
}

fn load_standardizer(dir: &Path, man: &RunManifest) -> Result<Standardizer<f64>> {
    let p = man.standardizer.as_deref().unwrap_or(STANDARDIZER);
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(p))?)?)
}

/// Refit on TRAIN+VAL and the single TEST evaluation of this run.
pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let (dir, mut man) = open_run(cfg)?;
    if man.test_evaluated {
        return Err(Error::Protocol(format!("TEST was already evaluated for run '{}'", cfg.run_id)));
    }
    let levels = cfg.pipeline.train.levels.clone();
    let global_path =
        man.global.clone().ok_or_else(|| Error::Protocol("no GLOBAL checkpoint; run `train` first".into()))?;
    let records: Vec<MethodRecord> = cfg.methods.iter().filter_map(|&m| man.method(m).cloned()).collect();
    if records.is_empty() {
        return Err(Error::Protocol("no fitted methods recorded; run `train` or `select-k` first".into()));
    }
    let plans = records
        .iter()
        .map(|r| Ok((r.method.name().to_string(), plan_from_record(r, &dir, &levels)?)))
        .collect::<Result<Vec<_>>>()?;
    let global = load_params(&dir, &global_path, &levels)?;
    let data = load_prepared(&dir, &man)?;
    let st = load_standardizer(&dir, &man)?;

    man.claim_test(&dir)?;
    let audit = AccessAudit::new(data.n_series(), data.len_time(), man.split);
    let exp = Experiment::new(&data, man.split, cfg.pipeline.clone(), Some(&audit))?;
    let report = exp.final_refit_and_test(&global, &plans)?;

    write_checkpoint(&report.global_refit, &dir.join(GLOBAL_REFIT))?;
    man.global_refit = Some(GLOBAL_REFIT.into());
    let refit_dir = dir.join("refit");
    for mt in &report.methods {
        let Some(rec) = man.methods.iter_mut().find(|r| r.method.name() == mt.method) else { continue };
        rec.calibration = mt.calibration.clone();
        if let TestModels::Routed(r) = &mt.models {
            fs::create_dir_all(&refit_dir)?;
            rec.refit_prototypes = r
                .prototypes
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    p.as_ref()
                        .map(|p| {
                            let path = refit_dir.join(format!("{}_c{c}.pcm", slug(rec.method)));
                            write_checkpoint(p, &path).map(|_| rel(&path, &dir))
                        })
                        .transpose()
                })
                .collect::<Result<_>>()?;
        }
    }
    report.table.write_csv(&dir.join(METRICS_CSV))?;
    let file = ReportFile { run_id: cfg.run_id.clone(), table: report.table.clone() };
    fs::write(dir.join(REPORT), serde_json::to_string_pretty(&file)?)?;
    write_error_csv(&dir.join("errors.csv"), &report, data.names())?;
    write_trajectories(&dir.join("trajectories.csv"), &report, &exp, &st)?;
    man.audit.extend(audit_records("evaluate", &audit));
    man.report = Some(REPORT.into());
    man.save(&dir)?;
    print_table(&[file], false);
    Ok(())
}

#[derive(Debug, Serialize)]
struct ForecastOutput {
    method: String,
    route: RoutedModel,
    global_loss: f64,
    prototype_losses: Vec<Option<f64>>,
    /// `forecast[s][p]`: step `s + 1` ahead, component `p`, original units.
    forecast: Vec<Vec<f64>>,
}

/// Routes a new series by its initial segment and forecasts ahead.
pub fn forecast_new(cfg: &RunConfig, segment: &Path, method: Method, horizon: usize, has_header: bool) -> Result<()> {
    let (dir, man) = open_run(cfg)?;
    let levels = cfg.pipeline.train.levels.clone();
    let refit =
        man.global_refit.as_ref().ok_or_else(|| Error::Protocol("no refit models yet; run `evaluate` first".into()))?;
    let global = load_params(&dir, refit, &levels)?;
    let rec = man.method(method).ok_or_else(|| Error::Protocol(format!("{method} was not evaluated in this run")))?;
    let st = load_standardizer(&dir, &man)?;
    let (mut vals, _len, p) = read_csv_series::<f64>(segment, has_header)?;
    if p != st.dim() {
        return Err(Error::DimensionMismatch(format!("segment has {p} components, model expects {}", st.dim())));
    }
    st.transform_rows(&mut vals);

    let (prototypes, labels, flags) = match (&rec.flags, &rec.labels) {
        (Some(flags), Some(labels)) => {
            let protos = rec
                .refit_prototypes
                .iter()
                .map(|p| p.as_ref().map(|p| load_params(&dir, p, &levels)).transpose())
                .collect::<Result<Vec<_>>>()?;
            (protos, labels.clone(), flags.clone())
        }
        _ => (
            Vec::new(),
            Vec::new(),
            adapool::clustering::FallbackFlags {
                flagged: Vec::new(),
                frozen: true,
                cluster_loss: Vec::new(),
                global_loss: Vec::new(),
            },
        ),
    };
    let models = RoutedModels { global, prototypes, labels, flags };
    let kind = match method {
        Method::Ours if cfg.pipeline.train.quantile => LossKind::Pinball,
        Method::Ours => LossKind::Huber,
        _ => LossKind::Mse,
    };
    let decision = assign_new_series(&vals, &models, kind, cfg.pipeline.train.delta)?;
    let model = match decision.model {
        RoutedModel::Global => &models.global,
        RoutedModel::Prototype(c) => models.prototypes[c].as_ref().expect("routed prototypes exist"),
    };
    let w = model.shape().window;
    let len = vals.len() / p;
    let mut ws = Workspace::new(model, w);
    let path = rollout_path(model, &vals[(len - w) * p..], horizon.max(1), &mut ws)?;
    let forecast =
        path.iter().map(|f| f.center().iter().enumerate().map(|(c, &z)| st.inverse(c, z)).collect()).collect();
    let out = ForecastOutput {
        method: method.name().into(),
        route: decision.model,
        global_loss: decision.global_loss,
        prototype_losses: decision.prototype_losses,
        forecast,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

/// Writes a synthetic dataset, its true labels and the generator summary.
pub fn synth(spec: &SyntheticSpec, out: &Path, packed: bool) -> Result<()> {
    let data = generate(spec)?;
    fs::create_dir_all(out)?;
    if packed {
        write_packed(&data.dataset, &out.join("data.mts"))?;
    } else {
        write_csv_dir(&data.dataset, &out.join("data"))?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(out.join("labels.csv"))?);
    writeln!(f, "series,label")?;
    for (name, l) in data.dataset.names().iter().zip(&data.labels) {
        writeln!(f, "{name},{l}")?;
    }
    f.flush()?;
    let summary = serde_json::json!({ "spec": spec, "separability": data.separability });
    fs::write(out.join("synth.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("wrote {} series to {} (1-NN separability {:.3})", spec.n, out.display(), data.separability);
    Ok(())
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

fn print_table(files: &[ReportFile], quantile_cols: bool) {
    let mut out = String::new();
    out.push_str("| run | method | h | K | MSE | MAE | dMSE% | Ben% | Fb% |");
    if quantile_cols {
        out.push_str(" pinball | cov | width | cov(cal) | width(cal) |");
    }
    out.push('\n');
    out.push_str("|---|---|---|---|---|---|---|---|---|");
    if quantile_cols {
        out.push_str("---|---|---|---|---|");
    }
    out.push('\n');
    for f in files {
        for r in &f.table.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {:.4} | {:.4} | {:+.2} | {:.1} | {} |",
                f.run_id,
                r.method,
                r.horizon,
                r.k.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
                r.mse,
                r.mae,
                r.delta_pct,
                r.ben_pct,
                fmt_opt(r.fb_pct, 1)
            ));
            if quantile_cols {
                out.push_str(&format!(
                    " {} | {} | {} | {} | {} |",
                    fmt_opt(r.pinball, 4),
                    fmt_opt(r.coverage, 3),
                    fmt_opt(r.width, 3),
                    fmt_opt(r.coverage_cal, 3),
                    fmt_opt(r.width_cal, 3)
                ));
            }
            out.push('\n');
        }
    }
    print!("{out}");
}

/// Merges the metric tables of several runs.
pub fn report(runs: &[PathBuf], paper_scale: bool, out: Option<&Path>) -> Result<()> {
    let mut files = Vec::with_capacity(runs.len());
    for dir in runs {
        let text = fs::read_to_string(dir.join(REPORT))
            .map_err(|e| Error::Format { path: dir.join(REPORT), reason: format!("cannot read report: {e}") })?;
        let mut f: ReportFile = serde_json::from_str(&text)?;
        if paper_scale {
            f.table = f.table.paper_scaled();
        }
        files.push(f);
    }
    let quantile = files.iter().flat_map(|f| &f.table.rows).any(|r| r.pinball.is_some());
    print_table(&files, quantile);
    if let Some(out) = out {
        let mut merged = MetricTable::default();
        for f in &files {
            for r in &f.table.rows {
                let mut r = r.clone();
                if files.len() > 1 {
                    r.method = format!("{}/{}", f.run_id, r.method);
                }
                merged.rows.push(r);
            }
        }
        merged.write_csv(out)?;
    }
    Ok(())
}
