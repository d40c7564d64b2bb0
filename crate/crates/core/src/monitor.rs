//! Rolling windowed GP prediction, imputation of missing survey values with
//! estimate feedback, and the time-only / single-feature baselines.
//!
//! Time indices follow the 1-based convention: a frame of length `T` holds
//! `x_1 … x_T`. Predicting `y_t` trains on covariates `x_{t−Δ−w+α+1} …
//! x_{t−Δ+α}` paired with targets `y_{t−Δ−w+1} … y_{t−Δ}` and queries
//! `x_{t+α}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ExperimentConfig, Prediction, TimeSeriesFrame};
use crate::gpr::{train_with, GprModel};
use crate::kernel::KernelHyperparams;
use crate::linalg::Matrix;
use crate::metrics::{evaluate, MetricsRecord};
use crate::pipeline::{pca_fit, pca_transform};
use crate::scalar::Scalar;

/// Steps per parallel work unit in [`run_monitor`]. Steps inside a chunk run
/// in order and warm-start from each other; chunk boundaries are fixed, so
/// the output does not depend on the thread count.
pub const MONITOR_CHUNK: usize = 16;

/// Outcome of one windowed fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GprmOutput<T: Scalar> {
    pub prediction: Prediction<T>,
    pub hyperparams: KernelHyperparams<T>,
    pub lml: T,
}

/// Column-wise centering and scaling fixed on a training window.
fn standardizer<T: Scalar>(x: &Matrix<T>) -> (Vec<T>, Vec<T>) {
    (0..x.ncols())
        .map(|j| {
            let col = x.column(j);
            let m = crate::scalar::mean(&col).expect("non-empty window");
            let sd = crate::scalar::variance(&col).expect("non-empty window").sqrt();
            (m, if sd > T::of(1e-12) { sd } else { T::one() })
        })
        .unzip()
}

fn apply_standardizer<T: Scalar>(x: &Matrix<T>, mean: &[T], scale: &[T]) -> Matrix<T> {
    Matrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - mean[j]) / scale[j])
}

/// Trains on one window and predicts at `x_query`. Covariates are
/// standardized with window statistics (and optionally projected with a PCA
/// fitted on the window) per `cfg`.
pub fn gprm<T: Scalar>(
    x_query: &[T],
    x_train: &Matrix<T>,
    y_train: &[T],
    cfg: &ExperimentConfig,
    warm: Option<&KernelHyperparams<T>>,
) -> Result<GprmOutput<T>> {
    if x_train.nrows() < 2 {
        return Err(Error::Precondition(format!("window of {} rows, need at least 2", x_train.nrows())));
    }
    if x_query.len() != x_train.ncols() {
        return Err(Error::shape(format!("query has {} features, window has {}", x_query.len(), x_train.ncols())));
    }
    let q = Matrix::from_row_major(1, x_query.len(), x_query.to_vec())?;
    let (mut xt, mut xq) = (x_train.clone(), q);
    if cfg.standardize {
        let (m, s) = standardizer(&xt);
        xt = apply_standardizer(&xt, &m, &s);
        xq = apply_standardizer(&xq, &m, &s);
    }
    if let Some(frac) = cfg.per_window_pca {
        match pca_fit(&xt, T::of(frac)) {
            Ok(p) => {
                xt = pca_transform(&p, &xt)?;
                xq = pca_transform(&p, &xq)?;
            }
            // a window with constant covariates carries no geometry to project
            Err(Error::DegenerateData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let report = train_with(&xt, y_train, &cfg.train, warm)?;
    let model = GprModel::fit(&xt, y_train, report.hyperparams)?;
    let prediction = model.predict(xq.row(0))?;
    Ok(GprmOutput { prediction, hyperparams: report.hyperparams, lml: report.lml })
}

/// Rows one window fit read, as 1-based time indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowAccess {
    pub t: usize,
    pub covariate_rows: Vec<usize>,
    pub target_rows: Vec<usize>,
    pub query_row: usize,
}

/// Read-only window accessor that records every row it hands out.
struct FrameView<'a, T: Scalar> {
    covariates: &'a Matrix<T>,
    targets: &'a [Option<T>],
    log: WindowAccess,
}

impl<'a, T: Scalar> FrameView<'a, T> {
    fn new(covariates: &'a Matrix<T>, targets: &'a [Option<T>], t: usize) -> Self {
        let log = WindowAccess { t, covariate_rows: Vec::new(), target_rows: Vec::new(), query_row: 0 };
        Self { covariates, targets, log }
    }

    /// Covariate rows `lo+1 ..= hi`.
    fn covariate_window(&mut self, lo: usize, hi: usize) -> Matrix<T> {
        self.log.covariate_rows.extend(lo + 1..=hi);
        self.covariates.row_range(lo, hi)
    }

    /// Targets `lo+1 ..= hi`; every one must be present.
    fn target_window(&mut self, lo: usize, hi: usize) -> Result<Vec<T>> {
        self.log.target_rows.extend(lo + 1..=hi);
        (lo..hi)
            .map(|i| self.targets[i].ok_or(Error::MissingData { index: i + 1 }))
            .collect()
    }

    fn query(&mut self, i: usize) -> &'a [T] {
        self.log.query_row = i;
        self.covariates.row(i - 1)
    }
}

/// Window bounds `(cov_lo, cov_hi, tgt_lo, tgt_hi, query)` for step `t`.
fn window_bounds(t: usize, cfg: &ExperimentConfig) -> (usize, usize, usize, usize, usize) {
    let (w, delta, alpha) = (cfg.window_w as i64, cfg.prediction_step_delta as i64, cfg.correspondence_lag_alpha);
    let t = t as i64;
    let cov_hi = t - delta + alpha;
    let tgt_hi = t - delta;
    let b = [cov_hi - w, cov_hi, tgt_hi - w, tgt_hi, t + alpha];
    debug_assert!(b.iter().all(|&v| v >= 0));
    (b[0] as usize, b[1] as usize, b[2] as usize, b[3] as usize, b[4] as usize)
}

/// First (inclusive) and last (exclusive) prediction index for a series of length `len`.
pub fn monitor_range(len: usize, cfg: &ExperimentConfig) -> (usize, usize) {
    let a = cfg.correspondence_lag_alpha;
    let first = cfg.prediction_step_delta + cfg.window_w + (-a).max(0) as usize;
    let end = len.saturating_sub(a.max(0) as usize);
    (first, end.max(first))
}

fn fit_step<T: Scalar>(
    covariates: &Matrix<T>,
    targets: &[Option<T>],
    t: usize,
    cfg: &ExperimentConfig,
    warm: Option<&KernelHyperparams<T>>,
    timestamp: i64,
) -> Result<(GprmOutput<T>, WindowAccess)> {
    let (cl, ch, tl, th, q) = window_bounds(t, cfg);
    let mut view = FrameView::new(covariates, targets, t);
    let x = view.covariate_window(cl, ch);
    let y = view.target_window(tl, th)?;
    let xq = view.query(q);
    let mut out = gprm(xq, &x, &y, cfg, warm)?;
    out.prediction.time_index = timestamp;
    Ok((out, view.log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorResult<T: Scalar> {
    /// One prediction per step, stamped with the frame timestamp of `y_t`.
    pub predictions: Vec<Prediction<T>>,
    /// Observed `y_t` for each prediction, where available.
    pub actuals: Vec<Option<T>>,
    pub config_used: ExperimentConfig,
    /// Hyperparameters chosen at each step.
    pub hyperparams: Vec<KernelHyperparams<T>>,
    /// Data-access log of each step.
    pub accesses: Vec<WindowAccess>,
}

impl<T: Scalar> MonitorResult<T> {
    /// Metrics over the steps with an observed target.
    pub fn metrics(&self) -> Result<MetricsRecord> {
        let mask: Vec<bool> = self.actuals.iter().map(Option::is_some).collect();
        let targets: Vec<T> = self.actuals.iter().map(|a| a.unwrap_or_else(T::zero)).collect();
        evaluate(&self.predictions, &targets, Some(&mask), self.config_used.box_len())
    }

    /// Human-readable descriptions of every window that read too far ahead
    /// or did not contain exactly `w` rows.
    pub fn causality_violations(&self) -> Vec<String> {
        let cfg = &self.config_used;
        let w = cfg.window_w;
        let mut out = Vec::new();
        for a in &self.accesses {
            let t = a.t as i64;
            let cov_limit = t + cfg.correspondence_lag_alpha;
            let tgt_limit = t - cfg.prediction_step_delta as i64;
            if a.covariate_rows.len() != w || a.target_rows.len() != w {
                out.push(format!(
                    "t={}: window has {} covariate and {} target rows, expected {w}",
                    a.t,
                    a.covariate_rows.len(),
                    a.target_rows.len()
                ));
            }
            if let Some(&r) = a.covariate_rows.iter().find(|&&r| r as i64 > cov_limit) {
                out.push(format!("t={}: covariate row {r} read past t+α = {cov_limit}", a.t));
            }
            if a.query_row as i64 > cov_limit {
                out.push(format!("t={}: query row {} past t+α = {cov_limit}", a.t, a.query_row));
            }
            if let Some(&r) = a.target_rows.iter().find(|&&r| r as i64 > tgt_limit) {
                out.push(format!("t={}: target row {r} read past t−Δ = {tgt_limit}", a.t));
            }
        }
        out
    }
}

/// Rolling prediction: one windowed fit per step `t`, the window sliding
/// right by one each step.
pub fn run_monitor<T: Scalar>(frame: &TimeSeriesFrame<T>, cfg: &ExperimentConfig) -> Result<MonitorResult<T>> {
    cfg.validate(frame.len())?;
    let (first, end) = monitor_range(frame.len(), cfg);
    let steps: Vec<usize> = (first..end).collect();
    let covariates = frame.covariates();
    let targets = frame.targets();
    let stamps = frame.timestamps();
    let chunks: Vec<Vec<(GprmOutput<T>, WindowAccess)>> = steps
        .par_chunks(MONITOR_CHUNK)
        .map(|chunk| {
            let mut warm: Option<KernelHyperparams<T>> = None;
            chunk
                .iter()
                .map(|&t| {
                    let w = if cfg.warm_start { warm.as_ref() } else { None };
                    let r = fit_step(covariates, targets, t, cfg, w, stamps[t - 1])?;
                    warm = Some(r.0.hyperparams);
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut result = MonitorResult {
        predictions: Vec::with_capacity(steps.len()),
        actuals: Vec::with_capacity(steps.len()),
        config_used: cfg.clone(),
        hyperparams: Vec::with_capacity(steps.len()),
        accesses: Vec::with_capacity(steps.len()),
    };
    for ((out, access), &t) in chunks.into_iter().flatten().zip(&steps) {
        result.predictions.push(out.prediction);
        result.actuals.push(targets[t - 1]);
        result.hyperparams.push(out.hyperparams);
        result.accesses.push(access);
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionResult<T: Scalar> {
    /// Observed targets with imputed estimates written into the gaps.
    pub filled_targets: Vec<T>,
    /// True where the value in `filled_targets` is a model estimate.
    pub imputed_mask: Vec<bool>,
    /// Predictive distribution at each imputed point, in time order.
    pub imputations: Vec<Prediction<T>>,
    /// Imputation error against held-back truth, when the frame has any.
    pub metrics_on_imputed: Option<MetricsRecord>,
}

/// Fills every target whose `observed` flag is false by a windowed fit on
/// the preceding data, feeding each estimate back into the working series so
/// later windows train on it. Runs strictly in time order.
pub fn run_with_missing<T: Scalar>(
    frame: &TimeSeriesFrame<T>,
    cfg: &ExperimentConfig,
    observed: &[bool],
) -> Result<ReductionResult<T>> {
    let n = frame.len();
    if observed.len() != n {
        return Err(Error::shape(format!("mask has {} entries for {n} rows", observed.len())));
    }
    cfg.validate(n)?;
    let alpha = cfg.correspondence_lag_alpha;
    let first = cfg.prediction_step_delta + cfg.window_w + (-alpha).max(0) as usize;
    let mut working: Vec<Option<T>> = Vec::with_capacity(n);
    for (i, (&obs, &y)) in observed.iter().zip(frame.targets()).enumerate() {
        if obs {
            working.push(Some(y.ok_or(Error::MissingData { index: i + 1 })?));
        } else if i + 1 < first {
            return Err(Error::InsufficientHistory { index: i + 1 });
        } else {
            working.push(None);
        }
    }
    let mut imputations = Vec::new();
    let mut warm: Option<KernelHyperparams<T>> = None;
    for t in first..=n {
        if working[t - 1].is_some() {
            continue;
        }
        if t as i64 + alpha > n as i64 {
            return Err(Error::Range(format!("imputing y_{t} needs covariate x_{} beyond the series", t as i64 + alpha)));
        }
        let w = if cfg.warm_start { warm.as_ref() } else { None };
        let (out, _) = fit_step(frame.covariates(), &working, t, cfg, w, frame.timestamps()[t - 1])?;
        warm = Some(out.hyperparams);
        working[t - 1] = Some(out.prediction.mean);
        imputations.push(out.prediction);
    }
    let filled_targets: Vec<T> = working.into_iter().map(|v| v.expect("every gap is filled")).collect();
    let imputed_mask: Vec<bool> = observed.iter().map(|&o| !o).collect();

    let truth: Vec<(Prediction<T>, T)> = imputations
        .iter()
        .filter_map(|p| {
            let i = frame.timestamps().iter().position(|&s| s == p.time_index)?;
            frame.targets()[i].map(|y| (*p, y))
        })
        .collect();
    let metrics_on_imputed = if truth.is_empty() {
        None
    } else {
        let (p, y): (Vec<_>, Vec<_>) = truth.into_iter().unzip();
        Some(evaluate(&p, &y, None, cfg.box_len())?)
    };
    Ok(ReductionResult { filled_targets, imputed_mask, imputations, metrics_on_imputed })
}

/// Observation mask for reduced survey frequency: the first `warmup` points
/// are observed, then each cycle of `step` periods has `step − 1` periods
/// missing followed by one observed period.
pub fn reduction_mask(len: usize, warmup: usize, period: usize, step: usize) -> Result<Vec<bool>> {
    if step < 2 {
        return Err(Error::InvalidConfig(format!("cadence step {step} leaves nothing missing; need at least 2")));
    }
    if period == 0 {
        return Err(Error::InvalidConfig("period must be positive".into()));
    }
    Ok((0..len)
        .map(|i| {
            if i < warmup {
                return true;
            }
            let block = (i - warmup) / period;
            block % step == step - 1
        })
        .collect())
}

/// Survey-frequency reduction experiment: masks targets per
/// [`reduction_mask`] (warm-up = `warmup` or the window length) and imputes
/// them. Metrics cover imputed points only.
pub fn run_survey_reduction<T: Scalar>(
    frame: &TimeSeriesFrame<T>,
    cfg: &ExperimentConfig,
    period: usize,
    step: usize,
    warmup: Option<usize>,
) -> Result<ReductionResult<T>> {
    let warmup = warmup.unwrap_or(cfg.window_w + cfg.prediction_step_delta);
    if warmup < cfg.window_w {
        return Err(Error::InvalidConfig(format!("warm-up {warmup} is shorter than the window {}", cfg.window_w)));
    }
    let mask = reduction_mask(frame.len(), warmup, period, step)?;
    let observed: Vec<bool> = mask.iter().zip(frame.availability()).map(|(&m, &a)| m && a).collect();
    run_with_missing(frame, cfg, &observed)
}

/// [`run_monitor`] with the time index as the only covariate.
pub fn baseline_time_only<T: Scalar>(frame: &TimeSeriesFrame<T>, cfg: &ExperimentConfig) -> Result<MonitorResult<T>> {
    let stamps = frame.timestamps();
    let x = Matrix::from_fn(frame.len(), 1, |i, _| T::of(stamps[i] as f64));
    run_monitor(&frame.with_covariates(x)?, cfg)
}

/// [`run_monitor`] restricted to one covariate column.
pub fn baseline_single_feature<T: Scalar>(
    frame: &TimeSeriesFrame<T>,
    cfg: &ExperimentConfig,
    column: usize,
) -> Result<MonitorResult<T>> {
    run_monitor(&frame.with_columns(&[column])?, cfg)
}
