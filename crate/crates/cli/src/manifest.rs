//! Run manifests and command execution.
//!
//! A manifest holds the fully resolved settings of one command. Running a
//! manifest writes every output of that command plus `manifest.json` into
//! its output directory, so `nowcast replay` can reproduce a run exactly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nowcast_core::io::{read_frame, to_json, write_frame, write_plot, write_predictions, PlotRow, PredictionRow};
use nowcast_core::monitor::{baseline_single_feature, baseline_time_only, run_monitor, run_survey_reduction, MonitorResult};
use nowcast_core::synth::{generate, SynthSpec};
use nowcast_core::{Error, ExperimentConfig, Frame, Granularity, MetricsRecord};
use serde::{Deserialize, Serialize};

use crate::prepare::run_prepare;
use crate::UsageError;

pub const TOOL: &str = "nowcast";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub k: usize,
    /// Cluster ids whose posts are discarded.
    pub drop: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareRun {
    pub posts: PathBuf,
    pub users: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub granularity: Granularity,
    pub trust: bool,
    pub clusters: Option<ClusterOptions>,
    pub smooth: usize,
    /// Explained-variance fraction kept by PCA, if PCA is applied.
    pub pca: Option<f64>,
    /// Cross-validation folds for the trust classifier.
    pub folds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Time,
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Run {
    Prepare(PrepareRun),
    Monitor { frame: PathBuf, config: ExperimentConfig },
    Reduce { frame: PathBuf, config: ExperimentConfig, period: usize, step: usize, warmup: Option<usize> },
    Baseline { frame: PathBuf, config: ExperimentConfig, mode: BaselineMode, column: Option<usize> },
    Synth { spec: SynthSpec },
}

impl Run {
    pub fn name(&self) -> &'static str {
        match self {
            Run::Prepare(_) => "prepare",
            Run::Monitor { .. } => "monitor",
            Run::Reduce { .. } => "reduce",
            Run::Baseline { .. } => "baseline",
            Run::Synth { .. } => "synth",
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Run::Prepare(p) => std::iter::once(p.posts.clone()).chain(p.users.clone()).chain(p.targets.clone()).collect(),
            Run::Monitor { frame, .. } | Run::Reduce { frame, .. } | Run::Baseline { frame, .. } => vec![frame.clone()],
            Run::Synth { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Seeds k-means in `prepare` and the generator in `synth`. GP training
    /// itself is deterministic.
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub run: Run,
}

impl RunManifest {
    pub fn new(run: Run, seed: u64, output_dir: PathBuf) -> Self {
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            inputs: run.inputs(),
            output_dir,
            run,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Self = nowcast_core::io::from_json(&text, &path.display().to_string())?;
        if m.tool != TOOL {
            bail!(UsageError(format!("{} was not written by {TOOL}", path.display())));
        }
        Ok(m)
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub command: String,
    pub n_predictions: usize,
    /// Absent when no prediction has an observed target to compare with.
    pub metrics: Option<MetricsRecord>,
}

/// What a run produced, for the terminal summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub metrics: Option<MetricsRecord>,
    pub n_predictions: usize,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    fn frame(&mut self, name: &str, frame: &Frame) -> Result<()> {
        let mut buf = Vec::new();
        write_frame(&mut buf, frame)?;
        self.put(name, buf)
    }
}

fn load_frame(path: &Path) -> Result<Frame> {
    let file = fs::File::open(path).with_context(|| format!("opening frame {}", path.display()))?;
    Ok(read_frame(file, &path.display().to_string())?)
}

fn optional_metrics(r: nowcast_core::Result<MetricsRecord>) -> Result<Option<MetricsRecord>> {
    match r {
        Ok(m) => Ok(Some(m)),
        Err(Error::EmptyEvaluation) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn hyperparams_csv(result: &MonitorResult<f64>) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["time_index", "log_lengthscale", "log_signal_var", "log_noise_var"])?;
    for (p, hp) in result.predictions.iter().zip(&result.hyperparams) {
        wtr.write_record([
            p.time_index.to_string(),
            hp.log_lengthscale.to_string(),
            hp.log_signal_var.to_string(),
            hp.log_noise_var.to_string(),
        ])?;
    }
    wtr.into_inner().map_err(|e| anyhow::anyhow!("hyperparams: {e}"))
}

fn write_monitor_outputs(out: &mut Writer, command: &str, result: &MonitorResult<f64>) -> Result<Outcome> {
    let rows: Vec<PredictionRow> = result
        .predictions
        .iter()
        .zip(&result.actuals)
        .map(|(p, &a)| PredictionRow::from_prediction(p, a, false))
        .collect();
    let plot: Vec<PlotRow> =
        result.predictions.iter().zip(&result.actuals).map(|(p, &a)| PlotRow::from_prediction(p, a, false)).collect();
    let metrics = optional_metrics(result.metrics())?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &rows)?;
    out.put("predictions.csv", buf)?;
    let mut buf = Vec::new();
    write_plot(&mut buf, &plot)?;
    out.put("plot.csv", buf)?;
    out.put("hyperparams.csv", hyperparams_csv(result)?)?;
    let file = MetricsFile { command: command.into(), n_predictions: rows.len(), metrics: metrics.clone() };
    out.put("metrics.json", to_json(&file)?.into_bytes())?;
    Ok(Outcome { files: Vec::new(), metrics, n_predictions: rows.len() })
}

/// Runs the manifest and writes its outputs, `manifest.json` last.
pub fn execute(manifest: &RunManifest) -> Result<Outcome> {
    let dir = &manifest.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    let mut out = Writer { dir: dir.clone(), files: Vec::new() };
    let mut outcome = match &manifest.run {
        Run::Prepare(p) => {
            let prepared = run_prepare(p, manifest.seed)?;
            out.frame("frame.csv", &prepared.frame)?;
            out.put("report.json", to_json(&prepared.report)?.into_bytes())?;
            if let Some(pca) = &prepared.pca {
                out.put("pca.json", to_json(pca)?.into_bytes())?;
            }
            Outcome { files: Vec::new(), metrics: None, n_predictions: 0 }
        }
        Run::Monitor { frame, config } => {
            let frame = load_frame(frame)?;
            write_monitor_outputs(&mut out, "monitor", &run_monitor(&frame, config)?)?
        }
        Run::Baseline { frame, config, mode, column } => {
            let frame = load_frame(frame)?;
            let result = match (mode, column) {
                (BaselineMode::Time, _) => baseline_time_only(&frame, config)?,
                (BaselineMode::Feature, None) => bail!(UsageError("--mode feature needs --column".into())),
                (BaselineMode::Feature, Some(c)) if *c >= frame.n_features() => {
                    bail!(UsageError(format!("--column {c} but the frame has {} features", frame.n_features())))
                }
                (BaselineMode::Feature, Some(c)) => baseline_single_feature(&frame, config, *c)?,
            };
            write_monitor_outputs(&mut out, "baseline", &result)?
        }
        Run::Reduce { frame, config, period, step, warmup } => {
            let frame = load_frame(frame)?;
            if *step < 2 {
                bail!(UsageError(format!("--step {step}: at least 2 is needed for anything to be missing")));
            }
            if *period == 0 {
                bail!(UsageError("--period must be positive".into()));
            }
            let r = run_survey_reduction(&frame, config, *period, *step, *warmup)?;
            let imputed_rows: Vec<usize> = (0..frame.len()).filter(|&i| r.imputed_mask[i]).collect();
            let truth = frame.targets();
            let mut rows = Vec::with_capacity(imputed_rows.len());
            for (p, &i) in r.imputations.iter().zip(&imputed_rows) {
                rows.push(PredictionRow::from_prediction(p, truth[i], true));
            }
            let mut imputed = r.imputations.iter().zip(&imputed_rows).peekable();
            let mut plot = Vec::with_capacity(frame.len());
            for (i, &ts) in frame.timestamps().iter().enumerate() {
                match imputed.peek() {
                    Some((p, &j)) if j == i => {
                        plot.push(PlotRow::from_prediction(p, truth[i], true));
                        imputed.next();
                    }
                    _ => {
                        let y = r.filled_targets[i];
                        plot.push(PlotRow { time_index: ts, target: truth[i], mean: y, lower: y, upper: y, imputed: false });
                    }
                }
            }
            let filled = Frame::new(
                frame.timestamps().to_vec(),
                frame.covariates().clone(),
                r.filled_targets.iter().map(|&y| Some(y)).collect(),
                r.imputed_mask.iter().map(|&m| !m).collect(),
            )?;
            out.frame("filled.csv", &filled)?;
            let mut buf = Vec::new();
            write_predictions(&mut buf, &rows)?;
            out.put("predictions.csv", buf)?;
            let mut buf = Vec::new();
            write_plot(&mut buf, &plot)?;
            out.put("plot.csv", buf)?;
            let file = MetricsFile {
                command: "reduce".into(),
                n_predictions: rows.len(),
                metrics: r.metrics_on_imputed.clone(),
            };
            out.put("metrics.json", to_json(&file)?.into_bytes())?;
            Outcome { files: Vec::new(), metrics: r.metrics_on_imputed, n_predictions: rows.len() }
        }
        Run::Synth { spec } => {
            let mut spec = spec.clone();
            spec.seed = manifest.seed;
            let frame = generate::<f64>(&spec).map_err(|e| match e {
                Error::InvalidConfig(m) | Error::Parse(m) => anyhow::Error::new(UsageError(format!("synth spec: {m}"))),
                e => e.into(),
            })?;
            out.frame("frame.csv", &frame)?;
            Outcome { files: Vec::new(), metrics: None, n_predictions: 0 }
        }
    };
    out.put(MANIFEST_FILE, to_json(manifest)?.into_bytes())?;
    outcome.files = out.files;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_json_round_trip() {
        let mut cfg = ExperimentConfig::monthly().with_window(12);
        cfg.dcca_box_len = Some(5);
        let runs = [
            Run::Monitor { frame: "f.csv".into(), config: cfg.clone() },
            Run::Reduce { frame: "f.csv".into(), config: cfg.clone(), period: 3, step: 2, warmup: None },
            Run::Baseline { frame: "f.csv".into(), config: cfg, mode: BaselineMode::Feature, column: Some(1) },
            Run::Synth { spec: SynthSpec::default() },
            Run::Prepare(PrepareRun {
                posts: "p.csv".into(),
                users: Some("u.csv".into()),
                targets: None,
                granularity: Granularity::Daily,
                trust: true,
                clusters: Some(ClusterOptions { k: 4, drop: vec![1] }),
                smooth: 7,
                pca: Some(0.9),
                folds: 5,
            }),
        ];
        for run in runs {
            let m = RunManifest::new(run, 7, "out".into());
            let back: RunManifest = nowcast_core::io::from_json(&to_json(&m).unwrap(), "m").unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn inputs_list_every_file() {
        let run = Run::Prepare(PrepareRun {
            posts: "p.csv".into(),
            users: None,
            targets: Some("t.csv".into()),
            granularity: Granularity::Monthly,
            trust: false,
            clusters: None,
            smooth: 1,
            pca: None,
            folds: 5,
        });
        assert_eq!(run.inputs(), vec![PathBuf::from("p.csv"), PathBuf::from("t.csv")]);
    }
}
