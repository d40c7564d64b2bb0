//! Exact Gaussian process regression with the Matérn-3/2 kernel.
//!
//! Inference goes through a Cholesky factor of `K + σ_n² I`; hyperparameters
//! are fit by maximizing the log marginal likelihood with multi-start
//! conjugate-gradient ascent in log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Prediction;
use crate::kernel::{gram_matrix, kernel_matrix, matern32_grad, KernelHyperparams};
use crate::linalg::{squared_distance, Cholesky, Matrix};
use crate::optim::{maximize, Bounds, CgOptions};
use crate::scalar::{mean, variance, Scalar};

/// Relative diagonal increments tried, in order, until factorization succeeds.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone, PartialEq)]
pub struct JitteredCholesky<T: Scalar> {
    pub factor: Cholesky<T>,
    /// Absolute amount added to the diagonal.
    pub jitter: T,
}

/// Cholesky of a symmetric PSD matrix, escalating diagonal jitter through
/// [`JITTER_LADDER`] (scaled by the mean diagonal) as needed.
pub fn cholesky_psd<T: Scalar>(a: &Matrix<T>) -> Result<JitteredCholesky<T>> {
    if !a.is_square() {
        return Err(Error::shape(format!("Cholesky of a {}x{} matrix", a.nrows(), a.ncols())));
    }
    let diag = a.diagonal();
    let scale = mean(&diag).unwrap_or(T::one()).abs().max(T::min_positive_value());
    let mut last = 0.0;
    for &rel in &JITTER_LADDER {
        let jitter = T::of(rel) * scale;
        let mut m = a.clone();
        m.add_diagonal(jitter);
        if let Ok(factor) = Cholesky::factor(&m) {
            return Ok(JitteredCholesky { factor, jitter });
        }
        last = jitter.to_f64_lossy();
    }
    Err(Error::Singular { jitter: last })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LmlReport<T: Scalar> {
    pub value: T,
    /// Derivatives with respect to `[log ℓ, log σ_f², log σ_n²]`.
    pub grad: [T; 3],
}

/// Log marginal likelihood of `y` under the GP prior and its gradient in log
/// hyperparameters. `y` is used as given (no centering).
pub fn log_marginal_likelihood<T: Scalar>(x: &Matrix<T>, y: &[T], hp: &KernelHyperparams<T>) -> Result<LmlReport<T>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Precondition(format!("marginal likelihood needs at least 2 points, got {n}")));
    }
    if y.len() != n {
        return Err(Error::shape(format!("{n} inputs but {} targets", y.len())));
    }
    if !hp.is_valid() {
        return Err(Error::Precondition("hyperparameters are not finite".into()));
    }
    let (d_ell, mut k) = matern32_grad(x, hp)?;
    let noise = hp.noise_var();
    let d_sf = k.clone();
    k.add_diagonal(noise);
    let chol = cholesky_psd(&k)?;
    let alpha = chol.factor.solve(y);
    let half = T::of(0.5);
    let data_fit = crate::linalg::dot(y, &alpha);
    let value = -half * data_fit
        - half * chol.factor.log_det()
        - half * T::from_count(n) * (T::of(2.0) * T::PI()).ln();

    // ½ tr((α αᵀ - K⁻¹) ∂K)
    let kinv = chol.factor.inverse();
    let mut g_ell = T::zero();
    let mut g_sf = T::zero();
    let mut trace_w = T::zero();
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            g_ell = g_ell + w * d_ell[(i, j)];
            g_sf = g_sf + w * d_sf[(i, j)];
        }
        trace_w = trace_w + alpha[i] * alpha[i] - kinv[(i, i)];
    }
    let grad = [half * g_ell, half * g_sf, half * noise * trace_w];
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Singular { jitter: chol.jitter.to_f64_lossy() });
    }
    Ok(LmlReport { value, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Number of deterministic starting points (log ℓ offsets 0, -1, +1, -2, +2, …).
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { restarts: 3, max_iters: 200, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome<T: Scalar> {
    pub initial: KernelHyperparams<T>,
    pub initial_lml: T,
    pub final_hp: KernelHyperparams<T>,
    pub final_lml: T,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T: Scalar> {
    pub hyperparams: KernelHyperparams<T>,
    pub lml: T,
    pub starts: Vec<StartOutcome<T>>,
}

/// Median of the pairwise Euclidean distances between distinct rows, or 1
/// when every row coincides.
pub fn median_pairwise_distance<T: Scalar>(x: &Matrix<T>) -> T {
    let n = x.nrows();
    let mut d: Vec<T> = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in 0..i {
            let v = squared_distance(x.row(i), x.row(j)).sqrt();
            if v > T::zero() {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return T::one();
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = d.len() / 2;
    if d.len() % 2 == 1 {
        d[m]
    } else {
        (d[m - 1] + d[m]) / T::of(2.0)
    }
}

/// The deterministic starting points used by [`train`].
pub fn initial_points<T: Scalar>(x: &Matrix<T>, y: &[T], restarts: usize) -> Vec<KernelHyperparams<T>> {
    let (ell0, vy) = data_scales(x, y);
    (0..restarts)
        .map(|k| {
            // 0, -1, +1, -2, +2, ...
            let mag = T::from_count(k.div_ceil(2));
            let off = if k % 2 == 1 { -mag } else { mag };
            KernelHyperparams::from_log(ell0.ln() + off, vy.ln(), (T::of(0.1) * vy).ln())
        })
        .collect()
}

fn data_scales<T: Scalar>(x: &Matrix<T>, y: &[T]) -> (T, T) {
    let ell0 = median_pairwise_distance(x);
    let vy = variance(y).unwrap_or(T::one());
    // a constant target has no scale of its own; fall back to a small one
    let vy = if vy > T::of(1e-12) { vy } else { T::of(1e-6) };
    (ell0, vy)
}

fn search_box<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Bounds<T> {
    let (ell0, vy) = data_scales(x, y);
    let (le, lv) = (ell0.ln(), vy.ln());
    Bounds {
        lower: vec![le - T::of(7.0), lv - T::of(14.0), lv - T::of(18.0)],
        upper: vec![le + T::of(7.0), lv + T::of(7.0), lv + T::of(4.0)],
    }
}

/// Fits hyperparameters by maximizing the log marginal likelihood of the
/// mean-centered targets. `warm` adds an extra start at a previous solution.
pub fn train_with<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    opts: &TrainOptions,
    warm: Option<&KernelHyperparams<T>>,
) -> Result<TrainReport<T>> {
    if x.nrows() < 2 {
        return Err(Error::Precondition(format!("training needs at least 2 points, got {}", x.nrows())));
    }
    if y.len() != x.nrows() {
        return Err(Error::shape(format!("{} inputs but {} targets", x.nrows(), y.len())));
    }
    if opts.restarts == 0 {
        return Err(Error::Precondition("restarts must be at least 1".into()));
    }
    let offset = mean(y).expect("non-empty");
    let yc: Vec<T> = y.iter().map(|&v| v - offset).collect();
    let bounds = search_box(x, &yc);
    let mut starts = initial_points(x, &yc, opts.restarts);
    if let Some(w) = warm {
        if w.is_valid() {
            let mut a = w.to_array();
            bounds.project(&mut a);
            starts.push(KernelHyperparams::from_array(a));
        }
    }
    let cg = CgOptions { max_iters: opts.max_iters, grad_tol: opts.grad_tol };
    let objective = |p: &[T]| {
        let hp = KernelHyperparams::from_log(p[0], p[1], p[2]);
        log_marginal_likelihood(x, &yc, &hp).ok().map(|r| (r.value, r.grad.to_vec()))
    };

    let mut outcomes = Vec::with_capacity(starts.len());
    for init in starts {
        let mut a = init.to_array();
        bounds.project(&mut a);
        let Ok(res) = maximize(objective, &a, Some(&bounds), &cg) else {
            continue;
        };
        outcomes.push(StartOutcome {
            initial: init,
            initial_lml: res.trace[0],
            final_hp: KernelHyperparams::from_log(res.x[0], res.x[1], res.x[2]),
            final_lml: res.value,
            iterations: res.iterations,
        });
    }
    // first strictly-better candidate wins, so ties resolve deterministically
    let best = outcomes
        .iter()
        .fold(None::<&StartOutcome<T>>, |best, o| match best {
            Some(b) if b.final_lml >= o.final_lml => Some(b),
            _ => Some(o),
        })
        .ok_or_else(|| Error::Training("no starting point produced a finite marginal likelihood".into()))?;
    Ok(TrainReport { hyperparams: best.final_hp, lml: best.final_lml, starts: outcomes.clone() })
}

/// Hyperparameters maximizing the log marginal likelihood over `restarts` starts.
pub fn train<T: Scalar>(x: &Matrix<T>, y: &[T], restarts: usize) -> Result<KernelHyperparams<T>> {
    let opts = TrainOptions { restarts, ..TrainOptions::default() };
    Ok(train_with(x, y, &opts, None)?.hyperparams)
}

/// A conditioned GP ready for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct GprModel<T: Scalar> {
    train_x: Matrix<T>,
    /// Targets with `offset` removed.
    train_y: Vec<T>,
    offset: T,
    hyperparams: KernelHyperparams<T>,
    chol: Cholesky<T>,
    jitter: T,
    alpha: Vec<T>,
}

impl<T: Scalar> GprModel<T> {
    /// Conditions on `(x, y)` after subtracting the target mean.
    pub fn fit(x: &Matrix<T>, y: &[T], hp: KernelHyperparams<T>) -> Result<Self> {
        let offset = mean(y).ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
        Self::fit_with_offset(x, y, hp, offset)
    }

    /// Conditions on `(x, y - offset)`; predictions add `offset` back.
    pub fn fit_with_offset(x: &Matrix<T>, y: &[T], hp: KernelHyperparams<T>, offset: T) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if y.len() != x.nrows() {
            return Err(Error::shape(format!("{} inputs but {} targets", x.nrows(), y.len())));
        }
        if !hp.is_valid() {
            return Err(Error::Precondition("hyperparameters are not finite".into()));
        }
        let train_y: Vec<T> = y.iter().map(|&v| v - offset).collect();
        let mut k = gram_matrix(x, &hp);
        k.add_diagonal(hp.noise_var());
        let JitteredCholesky { factor, jitter } = cholesky_psd(&k)?;
        let alpha = factor.solve(&train_y);
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Singular { jitter: jitter.to_f64_lossy() });
        }
        Ok(Self { train_x: x.clone(), train_y, offset, hyperparams: hp, chol: factor, jitter, alpha })
    }

    pub fn hyperparams(&self) -> &KernelHyperparams<T> {
        &self.hyperparams
    }

    pub fn offset(&self) -> T {
        self.offset
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn cholesky(&self) -> &Cholesky<T> {
        &self.chol
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn train_x(&self) -> &Matrix<T> {
        &self.train_x
    }

    pub fn centered_targets(&self) -> &[T] {
        &self.train_y
    }

    pub fn n_train(&self) -> usize {
        self.train_x.nrows()
    }

    /// Predictive mean and variance of a noisy observation at `x_star`.
    /// The returned `time_index` is 0; callers stamp it.
    pub fn predict(&self, x_star: &[T]) -> Result<Prediction<T>> {
        if x_star.len() != self.train_x.ncols() {
            return Err(Error::shape(format!(
                "query has dimension {}, model expects {}",
                x_star.len(),
                self.train_x.ncols()
            )));
        }
        let q = Matrix::from_row_major(1, x_star.len(), x_star.to_vec())?;
        let k = kernel_matrix(&self.train_x, &q, &self.hyperparams)?.into_vec();
        let mean = crate::linalg::dot(&k, &self.alpha) + self.offset;
        let v = self.chol.solve_lower(&k);
        let latent = (self.hyperparams.signal_var() - crate::linalg::dot(&v, &v)).max(T::zero());
        Ok(Prediction { time_index: 0, mean, variance: latent + self.hyperparams.noise_var() })
    }

    /// Trains hyperparameters on `(x, y)` and conditions on them.
    pub fn train_and_fit(x: &Matrix<T>, y: &[T], opts: &TrainOptions) -> Result<Self> {
        let report = train_with(x, y, opts, None)?;
        Self::fit(x, y, report.hyperparams)
    }
}
