//! Time-indexed covariates and survey targets, plus experiment configuration.
//!
//! Index convention: a frame of length `T` holds the series `x_1 … x_T`,
//! stored at positions `0 … T-1`. A slice `(t1, t2]` contains indices
//! `t1+1 … t2`, i.e. positions `t1 … t2-1`, and always has `t2 - t1` rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::TrainOptions;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimeSeriesFrame<T: Scalar> {
    timestamps: Vec<i64>,
    covariates: Matrix<T>,
    targets: Vec<Option<T>>,
    available: Vec<bool>,
}

impl<T: Scalar> TimeSeriesFrame<T> {
    /// Validates and builds a frame. `available[i]` marks an observed survey
    /// value; a target may be present where it is not available (e.g. an
    /// imputed value), but never absent where it is.
    pub fn new(
        timestamps: Vec<i64>,
        covariates: Matrix<T>,
        targets: Vec<Option<T>>,
        available: Vec<bool>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if covariates.nrows() != n || targets.len() != n || available.len() != n {
            return Err(Error::shape(format!(
                "frame columns disagree: {n} timestamps, {} covariate rows, {} targets, {} mask entries",
                covariates.nrows(),
                targets.len(),
                available.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Precondition(format!(
                "timestamps must be strictly increasing (row {})",
                i + 1
            )));
        }
        if !covariates.all_finite() {
            return Err(Error::Precondition("covariates contain non-finite values".into()));
        }
        for (i, (t, &obs)) in targets.iter().zip(&available).enumerate() {
            match t {
                None if obs => {
                    return Err(Error::Precondition(format!("row {i} is marked observed but has no target")))
                }
                Some(v) if !v.is_finite() => {
                    return Err(Error::Precondition(format!("row {i} has a non-finite target")))
                }
                _ => {}
            }
        }
        Ok(Self { timestamps, covariates, targets, available })
    }

    /// Frame with every target observed and timestamps `1..=T`.
    pub fn fully_observed(covariates: Matrix<T>, targets: Vec<T>) -> Result<Self> {
        let n = targets.len();
        let ts = (1..=n as i64).collect();
        Self::new(ts, covariates, targets.into_iter().map(Some).collect(), vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn covariates(&self) -> &Matrix<T> {
        &self.covariates
    }

    pub fn targets(&self) -> &[Option<T>] {
        &self.targets
    }

    pub fn availability(&self) -> &[bool] {
        &self.available
    }

    /// True when timestamps advance by exactly one everywhere.
    pub fn is_unit_spaced(&self) -> bool {
        self.timestamps.windows(2).all(|w| w[1] - w[0] == 1)
    }

    /// Target values, failing on the first missing one.
    pub fn observed_targets(&self) -> Result<Vec<T>> {
        self.targets
            .iter()
            .zip(&self.available)
            .enumerate()
            .map(|(i, (t, &obs))| match (t, obs) {
                (Some(v), true) => Ok(*v),
                _ => Err(Error::MissingData { index: i + 1 }),
            })
            .collect()
    }

    /// Rows with indices `t1+1 ..= t2`.
    pub fn slice(&self, t1: usize, t2: usize) -> Result<Self> {
        if t1 >= t2 || t2 > self.len() {
            return Err(Error::Range(format!(
                "slice ({t1}, {t2}] of a frame with {} rows",
                self.len()
            )));
        }
        Ok(Self {
            timestamps: self.timestamps[t1..t2].to_vec(),
            covariates: self.covariates.row_range(t1, t2),
            targets: self.targets[t1..t2].to_vec(),
            available: self.available[t1..t2].to_vec(),
        })
    }

    /// Appends `other` after `self`; timestamps must keep increasing.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut ts = self.timestamps.clone();
        ts.extend_from_slice(&other.timestamps);
        let mut targets = self.targets.clone();
        targets.extend_from_slice(&other.targets);
        let mut avail = self.available.clone();
        avail.extend_from_slice(&other.available);
        Self::new(ts, self.covariates.vstack(&other.covariates)?, targets, avail)
    }

    /// Same frame restricted to the listed covariate columns.
    pub fn with_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.n_features()) {
            return Err(Error::Range(format!("column {c} of {} features", self.n_features())));
        }
        Ok(Self { covariates: self.covariates.select_columns(cols), ..self.clone() })
    }

    /// Same frame with covariates replaced.
    pub fn with_covariates(&self, covariates: Matrix<T>) -> Result<Self> {
        Self::new(self.timestamps.clone(), covariates, self.targets.clone(), self.available.clone())
    }

    /// Same frame with a new availability mask; targets are kept as-is.
    pub fn with_availability(&self, available: Vec<bool>) -> Result<Self> {
        Self::new(self.timestamps.clone(), self.covariates.clone(), self.targets.clone(), available)
    }
}

/// Posterior of the observed target at one time index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Prediction<T: Scalar> {
    pub time_index: i64,
    pub mean: T,
    pub variance: T,
}

impl<T: Scalar> Prediction<T> {
    pub fn std_dev(&self) -> T {
        self.variance.max(T::zero()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Daily,
    Monthly,
}

impl Granularity {
    /// Training window used when none is given: two years of daily data or
    /// four years of monthly data.
    pub fn default_window(self) -> usize {
        match self {
            Granularity::Daily => 730,
            Granularity::Monthly => 48,
        }
    }

    /// Default DCCA box length, tied to the customary smoothing window.
    pub fn default_box_len(self) -> usize {
        match self {
            Granularity::Daily => 28,
            Granularity::Monthly => 4,
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "daily" | "day" | "d" => Ok(Granularity::Daily),
            "monthly" | "month" | "m" => Ok(Granularity::Monthly),
            other => Err(Error::Parse(format!("unknown granularity '{other}'"))),
        }
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Granularity::Daily => "daily",
            Granularity::Monthly => "monthly",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Training window length `w`.
    pub window_w: usize,
    /// Prediction step `Δ`: how far past the end of the target window the query lies.
    pub prediction_step_delta: usize,
    /// Correspondence lag `α` between the covariate and target windows.
    pub correspondence_lag_alpha: i64,
    pub smoothing_len: usize,
    pub granularity: Granularity,
    /// Survey cadence step for reduction experiments (observed one period in `step`).
    pub survey_cadence: usize,
    /// Standardize covariates with training-window statistics before the kernel sees them.
    pub standardize: bool,
    /// Fit PCA on each training window instead of once up front.
    pub per_window_pca: Option<f64>,
    /// Reuse the previous window's hyperparameters as an extra optimizer start.
    pub warm_start: bool,
    /// DCCA box length; defaults to the smoothing window when that is at
    /// least 4, otherwise to the granularity default.
    #[serde(default)]
    pub dcca_box_len: Option<usize>,
    pub train: TrainOptions,
}

impl ExperimentConfig {
    pub fn new(granularity: Granularity) -> Self {
        Self {
            window_w: granularity.default_window(),
            prediction_step_delta: 1,
            correspondence_lag_alpha: 0,
            smoothing_len: 1,
            granularity,
            survey_cadence: 2,
            standardize: true,
            per_window_pca: None,
            warm_start: true,
            dcca_box_len: None,
            train: TrainOptions::default(),
        }
    }

    pub fn monthly() -> Self {
        Self::new(Granularity::Monthly)
    }

    pub fn daily() -> Self {
        Self::new(Granularity::Daily)
    }

    pub fn with_window(mut self, w: usize) -> Self {
        self.window_w = w;
        self
    }

    pub fn with_delta(mut self, delta: usize) -> Self {
        self.prediction_step_delta = delta;
        self
    }

    pub fn with_alpha(mut self, alpha: i64) -> Self {
        self.correspondence_lag_alpha = alpha;
        self
    }

    pub fn box_len(&self) -> usize {
        match self.dcca_box_len {
            Some(b) => b,
            None if self.smoothing_len >= 4 => self.smoothing_len,
            None => self.granularity.default_box_len(),
        }
    }

    /// Checks the config against a series of length `len`.
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.window_w < 2 {
            return Err(Error::InvalidConfig(format!("window w = {} must be at least 2", self.window_w)));
        }
        let span = self.window_w + self.prediction_step_delta + self.correspondence_lag_alpha.unsigned_abs() as usize;
        if span >= len {
            return Err(Error::InvalidConfig(format!(
                "w + Δ + |α| = {span} must be smaller than the series length {len}"
            )));
        }
        if self.smoothing_len == 0 {
            return Err(Error::InvalidConfig("smoothing length must be positive".into()));
        }
        if self.box_len() < 4 {
            return Err(Error::InvalidConfig(format!("DCCA box length {} is below 4", self.box_len())));
        }
        if self.train.restarts == 0 {
            return Err(Error::InvalidConfig("at least one optimizer restart is required".into()));
        }
        if let Some(f) = self.per_window_pca {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!("PCA variance fraction {f} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::monthly()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(n: usize) -> TimeSeriesFrame<f64> {
        let x = Matrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64);
        let y = (0..n).map(|i| i as f64 * 0.5).collect();
        TimeSeriesFrame::fully_observed(x, y).unwrap()
    }

    #[test]
    fn slice_identity() {
        let f = frame(10);
        assert_eq!(f.slice(0, 10).unwrap(), f);
    }

    #[test]
    fn slice_follows_exclusive_start_convention() {
        let f = frame(60);
        let s = f.slice(1, 49).unwrap();
        assert_eq!(s.len(), 48);
        // timestamps equal the 1-based index here
        assert_eq!(s.timestamps().first(), Some(&2));
        assert_eq!(s.timestamps().last(), Some(&49));
    }

    #[test]
    fn slice_rejects_empty_and_out_of_range() {
        let f = frame(10);
        assert!(matches!(f.slice(5, 5), Err(Error::Range(_))));
        assert!(matches!(f.slice(3, 11), Err(Error::Range(_))));
        assert!(matches!(f.slice(7, 2), Err(Error::Range(_))));
    }

    #[test]
    fn construction_checks_invariants() {
        let x = Matrix::<f64>::zeros(3, 1);
        assert!(TimeSeriesFrame::new(vec![1, 2, 2], x.clone(), vec![Some(0.0); 3], vec![true; 3]).is_err());
        assert!(TimeSeriesFrame::new(vec![1, 2, 3], x.clone(), vec![Some(0.0), None, Some(1.0)], vec![true; 3]).is_err());
        assert!(TimeSeriesFrame::new(vec![1, 2, 3], x.clone(), vec![Some(0.0); 2], vec![true; 3]).is_err());
        let mut bad = x.clone();
        bad[(1, 0)] = f64::NAN;
        assert!(TimeSeriesFrame::new(vec![1, 2, 3], bad, vec![Some(0.0); 3], vec![true; 3]).is_err());
        let ok = TimeSeriesFrame::new(vec![1, 2, 3], x, vec![Some(0.0), None, Some(1.0)], vec![true, false, true]).unwrap();
        assert!(matches!(ok.observed_targets(), Err(Error::MissingData { index: 2 })));
    }

    #[test]
    fn config_validation() {
        let cfg = ExperimentConfig::monthly();
        assert_eq!(cfg.window_w, 48);
        assert_eq!(ExperimentConfig::daily().window_w, 730);
        assert!(cfg.validate(50).is_ok());
        assert!(cfg.validate(49).is_err());
        assert!(cfg.clone().with_alpha(-3).validate(52).is_err());
        assert!(cfg.clone().with_window(1).validate(100).is_err());
    }

    proptest! {
        #[test]
        fn nested_slices_compose(n in 4usize..40, a_frac in 0.0f64..1.0, b_frac in 0.0f64..1.0, k_frac in 0.0f64..1.0) {
            let f = frame(n);
            let a = ((n - 1) as f64 * a_frac) as usize;
            let b = a + 1 + ((n - a - 1) as f64 * b_frac) as usize;
            let k = 1 + ((b - a - 1) as f64 * k_frac) as usize;
            let lhs = f.slice(a, b).unwrap().slice(0, k).unwrap();
            prop_assert_eq!(lhs, f.slice(a, a + k).unwrap());
        }

        #[test]
        fn split_and_concat_round_trip(n in 2usize..40, k_frac in 0.0f64..1.0) {
            let f = frame(n);
            let k = 1 + ((n - 2) as f64 * k_frac) as usize;
            let joined = f.slice(0, k).unwrap().concat(&f.slice(k, n).unwrap()).unwrap();
            prop_assert_eq!(joined, f);
        }
    }
}
