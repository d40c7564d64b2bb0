use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nowcast_cli::config::{check_keys, experiment_from, KeyValues};
use nowcast_cli::manifest::{execute, BaselineMode, ClusterOptions, Outcome, PrepareRun, Run, RunManifest};
use nowcast_cli::{exit_code, UsageError};
use nowcast_core::synth::SynthSpec;
use nowcast_core::{ExperimentConfig, Granularity};

#[derive(Parser)]
#[command(name = "nowcast", version, about = "Windowed GP nowcasting of a slow survey index from fast covariates")]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads (default: NOWCAST_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn post-level features into a covariate frame.
    Prepare(PrepareArgs),
    /// Rolling predictions over a frame.
    Monitor(ExperimentArgs),
    /// Impute targets after thinning the survey to one period in `step`.
    Reduce(ReduceArgs),
    /// Time-only or single-feature baseline predictions.
    Baseline(BaselineArgs),
    /// Generate a synthetic frame.
    Synth(SynthArgs),
    /// Rerun a command from its manifest.json.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// CSV of posts: time_index,user_id,f0,f1,...
    #[arg(long)]
    posts: PathBuf,
    /// CSV of users: user_id,label,f0,f1,... (label 1, 0 or empty)
    #[arg(long)]
    users: Option<PathBuf>,
    /// CSV of survey values: time_index,target
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long, default_value = "monthly")]
    granularity: Granularity,
    /// Weight posts by author trust (needs --users).
    #[arg(long, overrides_with = "no_trust")]
    trust: bool,
    #[arg(long)]
    no_trust: bool,
    /// Cluster posts into K groups before aggregation.
    #[arg(long, value_name = "K", overrides_with = "no_clusters")]
    clusters: Option<usize>,
    #[arg(long)]
    no_clusters: bool,
    /// Comma-separated cluster ids to discard.
    #[arg(long, value_delimiter = ',')]
    drop_clusters: Vec<usize>,
    /// Trailing smoothing window in rows.
    #[arg(long, default_value_t = 1)]
    smooth: usize,
    /// Project onto the principal components explaining this fraction of variance.
    #[arg(long, value_name = "FRACTION")]
    pca: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    frame: PathBuf,
    /// key=value file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    granularity: Option<Granularity>,
    /// Training window length.
    #[arg(long)]
    w: Option<usize>,
    /// Prediction step.
    #[arg(long)]
    delta: Option<usize>,
    /// Lag of the covariate window relative to the target window.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<i64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    box_len: Option<usize>,
    /// Recorded in the manifest; training is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReduceArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Rows per survey period.
    #[arg(long)]
    period: Option<usize>,
    /// Keep one period in every `step`.
    #[arg(long)]
    step: Option<usize>,
    /// Leading rows that stay observed (default w + delta).
    #[arg(long)]
    warmup: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Time,
    Feature,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Covariate column used by --mode feature.
    #[arg(long)]
    column: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// key=value generator spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override one spec key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn usage<T>(r: nowcast_core::Result<T>) -> Result<T> {
    r.map_err(|e| UsageError(e.to_string()).into())
}

struct Resolved {
    kv: KeyValues,
    frame: PathBuf,
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

fn resolve(a: &ExperimentArgs, command_keys: &[&str]) -> Result<Resolved> {
    let kv = KeyValues::load(a.config.as_deref())?;
    check_keys(&kv, &[&["seed"], command_keys].concat())?;
    let mut config = experiment_from(&kv, a.granularity)?;
    if let Some(w) = a.w {
        config.window_w = w;
    }
    if let Some(d) = a.delta {
        config.prediction_step_delta = d;
    }
    if let Some(al) = a.alpha {
        config.correspondence_lag_alpha = al;
    }
    if let Some(r) = a.restarts {
        config.train.restarts = r;
    }
    if let Some(b) = a.box_len {
        config.dcca_box_len = Some(b);
    }
    let seed = match a.seed {
        Some(s) => s,
        None => kv.parsed(&["seed"])?.unwrap_or(0),
    };
    Ok(Resolved { frame: absolute(&a.frame)?, config, seed, out: absolute(&a.out)?, kv })
}

fn build(command: Command) -> Result<RunManifest> {
    Ok(match command {
        Command::Prepare(a) => {
            let trust = a.trust && !a.no_trust;
            if trust && a.users.is_none() {
                bail!(UsageError("--trust needs --users".into()));
            }
            let clusters = match (a.clusters, a.no_clusters) {
                (Some(k), false) => Some(ClusterOptions { k, drop: a.drop_clusters.clone() }),
                _ if !a.drop_clusters.is_empty() => bail!(UsageError("--drop-clusters needs --clusters K".into())),
                _ => None,
            };
            if let Some(f) = a.pca {
                if !(f > 0.0 && f <= 1.0) {
                    bail!(UsageError(format!("--pca {f} must lie in (0, 1]")));
                }
            }
            let run = PrepareRun {
                posts: absolute(&a.posts)?,
                users: a.users.as_deref().map(absolute).transpose()?,
                targets: a.targets.as_deref().map(absolute).transpose()?,
                granularity: a.granularity,
                trust,
                clusters,
                smooth: a.smooth,
                pca: a.pca,
                folds: a.folds,
            };
            RunManifest::new(Run::Prepare(run), a.seed, absolute(&a.out)?)
        }
        Command::Monitor(a) => {
            let r = resolve(&a, &[])?;
            RunManifest::new(Run::Monitor { frame: r.frame, config: r.config }, r.seed, r.out)
        }
        Command::Reduce(a) => {
            let r = resolve(&a.common, &["period", "warmup"])?;
            let period = match a.period {
                Some(p) => p,
                None => r.kv.parsed(&["period"])?.unwrap_or(28),
            };
            let step = a.step.unwrap_or(r.config.survey_cadence);
            let warmup = match a.warmup {
                Some(w) => Some(w),
                None => r.kv.parsed(&["warmup"])?,
            };
            let mut config = r.config;
            config.survey_cadence = step;
            RunManifest::new(Run::Reduce { frame: r.frame, config, period, step, warmup }, r.seed, r.out)
        }
        Command::Baseline(a) => {
            let r = resolve(&a.common, &["mode", "column"])?;
            let mode = match (a.mode, r.kv.get(&["mode"])) {
                (Some(Mode::Time), _) => BaselineMode::Time,
                (Some(Mode::Feature), _) => BaselineMode::Feature,
                (None, Some("time")) | (None, None) => BaselineMode::Time,
                (None, Some("feature")) => BaselineMode::Feature,
                (None, Some(other)) => bail!(UsageError(format!("unknown baseline mode '{other}'"))),
            };
            let column = match a.column {
                Some(c) => Some(c),
                None => r.kv.parsed(&["column"])?,
            };
            if mode == BaselineMode::Feature && column.is_none() {
                bail!(UsageError("--mode feature needs --column".into()));
            }
            RunManifest::new(Run::Baseline { frame: r.frame, config: r.config, mode, column }, r.seed, r.out)
        }
        Command::Synth(a) => {
            let mut spec = SynthSpec::default();
            let kv = KeyValues::load(a.spec.as_deref())?;
            for k in kv.keys() {
                usage(spec.set(k, kv.get(&[k]).expect("key present")))?;
            }
            for s in &a.sets {
                let Some((k, v)) = s.split_once('=') else {
                    bail!(UsageError(format!("--set expects KEY=VALUE, got '{s}'")));
                };
                usage(spec.set(k, v))?;
            }
            if let Some(seed) = a.seed {
                spec.seed = seed;
            }
            usage(spec.validate())?;
            let seed = spec.seed;
            RunManifest::new(Run::Synth { spec }, seed, absolute(&a.out)?)
        }
        Command::Replay(a) => {
            let mut m = RunManifest::load(&a.manifest)?;
            if let Some(out) = a.out {
                m.output_dir = absolute(&out)?;
            }
            m
        }
    })
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("NOWCAST_THREADS") {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse() {
            Ok(n) => Ok(Some(n)),
            Err(_) => bail!(UsageError(format!("NOWCAST_THREADS='{v}' is not a thread count"))),
        },
        _ => Ok(None),
    }
}

fn report(m: &RunManifest, o: &Outcome) {
    println!("{} finished: {} file(s) in {}", m.run.name(), o.files.len(), m.output_dir.display());
    if o.n_predictions > 0 {
        println!("predictions: {}", o.n_predictions);
    }
    if let Some(mr) = &o.metrics {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        println!(
            "rmse {:.4}  mae {:.4}  pearson {}  dcca {}  (n = {})",
            mr.rmse,
            mr.mae,
            fmt(mr.pearson),
            fmt(mr.dcca),
            mr.n_points
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = threads(cli.threads)? {
        if n == 0 {
            bail!(UsageError("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting worker pool")?;
    }
    let manifest = build(cli.command)?;
    let outcome = execute(&manifest)?;
    report(&manifest, &outcome);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
