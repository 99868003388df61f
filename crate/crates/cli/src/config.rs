//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are rejected.

use adapool::baselines::Method;
use adapool::clustering::{InitStrategy, PipelineConfig};
use adapool::dataset::{DataFormat, ImputeStrategy, SplitSpec};
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Res<T> = Result<T, ConfigError>;

/// Every recognized key, its default and meaning (rendered into `--help`).
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data", "(required)", "dataset: CSV directory (one file per series) or packed .mts file"),
    ("format", "csv", "csv | csv-noheader | packed"),
    ("split", "(required)", "TRAIN,VAL,TEST lengths, e.g. 200,50,50"),
    ("impute", "mean", "mean | median (TRAIN statistics per component)"),
    ("methods", "GLOBAL,OURS", "comma list of GLOBAL, INDIVIDUAL, FEAT-KMEANS, RANDOM-BALANCED, OURS"),
    ("out_dir", "runs", "parent directory of run directories"),
    ("run_id", "run", "run directory name; TEST is evaluated once per run id"),
    ("threads", "all cores", "worker threads (ADAPOOL_THREADS overrides)"),
    ("seed", "0", "base seed for initialization and shuffling"),
    ("window", "12", "input window length w"),
    ("latent", "min(16, P)", "mixture latent size r"),
    ("hidden", "32", "GRU hidden size"),
    ("epochs_global", "30", "GLOBAL epochs (refit uses half)"),
    ("epochs_proto", "15", "prototype epochs per outer iteration"),
    ("lr", "0.001", "Adam learning rate"),
    ("beta1", "0.9", "Adam beta1"),
    ("beta2", "0.999", "Adam beta2"),
    ("eps_adam", "1e-8", "Adam epsilon"),
    ("batch", "64", "mini-batch size"),
    ("eta", "0.001", "L2-SP weight toward GLOBAL"),
    ("delta", "1", "Huber transition"),
    ("quantile", "false", "probabilistic mode (pinball loss)"),
    ("levels", "0.1,0.5,0.9", "quantile levels, strictly increasing in (0,1)"),
    ("clip_norm", "5", "gradient-norm clipping threshold"),
    ("candidates", "2..9", "candidate K values: comma list or inclusive range a..b"),
    ("seeds", "0..4", "initialization seeds: comma list or inclusive range"),
    ("gamma", "0.05", "K penalty weight in SelAbs + gamma K / N"),
    ("max_iters", "10", "outer iteration cap L"),
    ("assign_horizons", "1,3,6", "horizons averaged in the reassignment cost"),
    ("init", "random_balanced", "random_balanced | feature"),
    ("horizons", "1,3,6", "TEST horizons"),
    ("target_coverage", "0.8", "calibration coverage target"),
    ("calibrate", "true", "calibrate intervals on VAL in quantile mode"),
];

pub fn keys_help() -> String {
    let mut s = String::from("Config keys (key = value):\n");
    for (k, d, desc) in KEYS {
        s.push_str(&format!("  {k:<16} {desc} [default: {d}]\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub format: String,
    pub split: SplitSpec,
    pub impute: String,
    pub methods: Vec<Method>,
    pub out_dir: PathBuf,
    pub run_id: String,
    pub threads: Option<usize>,
    pub pipeline: PipelineConfig,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Res<T> {
    v.parse().map_err(|_| ConfigError(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Res<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

/// `a..b` (inclusive) or a comma list.
fn parse_range(key: &str, v: &str) -> Res<Vec<u64>> {
    match v.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (parse(key, a.trim())?, parse(key, b.trim().trim_start_matches('='))?);
            if a > b {
                return Err(ConfigError(format!("{key}: empty range {v}")));
            }
            Ok((a..=b).collect())
        }
        None => parse_list(key, v),
    }
}

fn parse_bool(key: &str, v: &str) -> Res<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError(format!("{key}: expected true/false, got '{v}'"))),
    }
}

#[derive(Debug, Default)]
pub struct Builder {
    data: Option<PathBuf>,
    split: Option<SplitSpec>,
    cfg: Option<RunConfig>,
}

impl RunConfig {
    fn blank() -> Self {
        Self {
            data: PathBuf::new(),
            format: "csv".into(),
            split: SplitSpec::new(0, 0, 0),
            impute: "mean".into(),
            methods: vec![Method::Global, Method::Ours],
            out_dir: PathBuf::from("runs"),
            run_id: "run".into(),
            threads: None,
            pipeline: PipelineConfig::default(),
        }
    }

    /// Parses a config file body, then applies `overrides` (`key=value`).
    pub fn parse(text: &str, overrides: &[String]) -> Res<Self> {
        let mut b = Builder { cfg: Some(Self::blank()), ..Default::default() };
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| ConfigError(format!("line {}: expected key = value", n + 1)))?;
            b.set(k.trim(), v.trim())?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError(format!("override '{o}': expected key=value")))?;
            b.set(k.trim(), v.trim())?;
        }
        b.finish()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Res<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }

    pub fn data_format(&self) -> DataFormat {
        match self.format.as_str() {
            "packed" => DataFormat::Packed,
            "csv-noheader" => DataFormat::Csv { has_header: false },
            _ => DataFormat::Csv { has_header: true },
        }
    }

    pub fn impute_strategy(&self) -> ImputeStrategy {
        self.impute.parse().unwrap_or(ImputeStrategy::Mean)
    }
}

impl Builder {
    fn set(&mut self, key: &str, v: &str) -> Res<()> {
        let c = self.cfg.as_mut().expect("builder initialized");
        let t = &mut c.pipeline.train;
        let s = &mut c.pipeline.selection;
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "format" => {
                if !matches!(v, "csv" | "csv-noheader" | "packed") {
                    return Err(ConfigError(format!("format: unknown '{v}'")));
                }
                c.format = v.into();
            }
            "split" => {
                let p: Vec<usize> = parse_list(key, v)?;
                if p.len() != 3 {
                    return Err(ConfigError("split: expected TRAIN,VAL,TEST".into()));
                }
                self.split = Some(SplitSpec::new(p[0], p[1], p[2]));
            }
            "impute" => {
                v.parse::<ImputeStrategy>().map_err(|e| ConfigError(e.to_string()))?;
                c.impute = v.into();
            }
            "methods" => {
                c.methods = v
                    .split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(|x| x.parse::<Method>().map_err(|e| ConfigError(e.to_string())))
                    .collect::<Res<_>>()?;
            }
            "out_dir" => c.out_dir = PathBuf::from(v),
            "run_id" => {
                if v.is_empty() || v.contains(['/', '\\']) {
                    return Err(ConfigError("run_id must be a plain name".into()));
                }
                c.run_id = v.into();
            }
            "threads" => c.threads = Some(parse(key, v)?),
            "seed" => t.seed = parse(key, v)?,
            "window" => t.window = parse(key, v)?,
            "latent" => t.latent = Some(parse(key, v)?),
            "hidden" => t.hidden = parse(key, v)?,
            "epochs_global" => t.epochs_global = parse(key, v)?,
            "epochs_proto" => t.epochs_proto = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "beta1" => t.beta1 = parse(key, v)?,
            "beta2" => t.beta2 = parse(key, v)?,
            "eps_adam" => t.eps_adam = parse(key, v)?,
            "batch" => t.batch = parse(key, v)?,
            "eta" => t.eta = parse(key, v)?,
            "delta" => t.delta = parse(key, v)?,
            "quantile" => t.quantile = parse_bool(key, v)?,
            "levels" => t.levels = parse_list(key, v)?,
            "clip_norm" => t.clip_norm = parse(key, v)?,
            "candidates" => s.candidates = parse_range(key, v)?.into_iter().map(|k| k as usize).collect(),
            "seeds" => s.seeds = parse_range(key, v)?,
            "gamma" => s.gamma = parse(key, v)?,
            "max_iters" => s.max_iters = parse(key, v)?,
            "assign_horizons" => s.assign_horizons = parse_list(key, v)?,
            "init" => {
                s.init = match v {
                    "random_balanced" | "random-balanced" => InitStrategy::RandomBalanced,
                    "feature" => InitStrategy::Feature,
                    _ => return Err(ConfigError(format!("init: unknown '{v}'"))),
                }
            }
            "horizons" => c.pipeline.horizons = parse_list(key, v)?,
            "target_coverage" => c.pipeline.target_coverage = parse(key, v)?,
            "calibrate" => c.pipeline.calibrate = parse_bool(key, v)?,
            _ => return Err(ConfigError(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn finish(mut self) -> Res<RunConfig> {
        let mut c = self.cfg.take().expect("builder initialized");
        c.data = self.data.ok_or_else(|| ConfigError("missing required key 'data'".into()))?;
        c.split = self.split.ok_or_else(|| ConfigError("missing required key 'split'".into()))?;
        if c.methods.is_empty() {
            return Err(ConfigError("methods must not be empty".into()));
        }
        c.pipeline.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(c)
    }
}
