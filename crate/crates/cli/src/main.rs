//! `adapool`: prepare data, fit and select clustered forecasters, evaluate
//! TEST once, route new series and merge reports.

mod commands;
mod config;

use adapool::baselines::Method;
use adapool::synthetic::SyntheticSpec;
use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use config::{ConfigError, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "adapool", version, about = "Validation-driven adaptive pooling for multivariate forecasting")]
#[command(after_long_help = config::keys_help())]
#[command(
    after_help = "Exit codes: 0 ok, 2 config error, 3 data error, 4 divergence, 5 protocol violation.\nRun `adapool help <command>` or `--help` for config keys."
)]
struct Cli {
    /// More logging (repeatable); RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (key = value).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. --set hidden=16 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let cfg = RunConfig::load(&self.config, &self.set)?;
        commands::init_threads(cfg.threads);
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Split, impute and standardize with TRAIN statistics.
    Prepare(ConfigArgs),
    /// Fit GLOBAL and the configured methods at a fixed K.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        k: usize,
    },
    /// Sweep the candidate K values and seeds; print the SelAbs/SelPen table.
    SelectK(ConfigArgs),
    /// Refit on TRAIN+VAL and evaluate TEST (once per run id).
    Evaluate(ConfigArgs),
    /// Route a new series by its initial segment and forecast ahead.
    ForecastNew {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// CSV file with the segment (rows = time, columns = components).
        #[arg(long)]
        segment: PathBuf,
        #[arg(long, default_value = "OURS")]
        method: Method,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        /// The segment file has no header row.
        #[arg(long)]
        no_header: bool,
    },
    /// Generate a synthetic heterogeneous dataset with known regimes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 300)]
        t: usize,
        #[arg(long, default_value_t = 8)]
        p: usize,
        #[arg(long, default_value_t = 3)]
        k_true: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write one packed file instead of a CSV directory.
        #[arg(long)]
        packed: bool,
    },
    /// Merge the metric tables of finished runs.
    Report {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Multiply MSE, MAE and pinball by 100.
        #[arg(long)]
        paper_scale: bool,
        /// Also write the merged table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<adapool::Error>() {
        Some(adapool::Error::InvalidConfig(_)) => 2,
        Some(adapool::Error::Divergence { .. }) => 4,
        Some(adapool::Error::Protocol(_)) => 5,
        _ => 3,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Prepare(c) => commands::prepare(&c.load()?).context("prepare failed")?,
        Cmd::Train { cfg, k } => commands::fit_methods(&cfg.load()?, Some(k), "train").context("train failed")?,
        Cmd::SelectK(c) => commands::fit_methods(&c.load()?, None, "select-k").context("select-k failed")?,
        Cmd::Evaluate(c) => commands::evaluate(&c.load()?).context("evaluate failed")?,
        Cmd::ForecastNew { cfg, segment, method, horizon, no_header } => {
            commands::forecast_new(&cfg.load()?, &segment, method, horizon, !no_header)
                .context("forecast-new failed")?
        }
        Cmd::Synth { out, n, t, p, k_true, alpha, noise, seed, packed } => {
            let spec = SyntheticSpec { n, t, p, k_true, alpha, noise, seed, ..SyntheticSpec::default() };
            commands::synth(&spec, &out, packed).context("synth failed")?
        }
        Cmd::Report { runs, paper_scale, out } => commands::report(&runs, paper_scale, out.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
