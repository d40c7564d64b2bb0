//! Synthetic worlds and reference computations for desk-scale verification.
//!
//! [`generate`] builds frames whose targets depend on autocorrelated
//! covariates through a known link; [`gp_sample`] draws from a GP prior;
//! [`oracle_predict`] evaluates the GP posterior by explicit matrix inversion,
//! a deliberately different numerical path from the Cholesky code in `gpr`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Prediction, TimeSeriesFrame};
use crate::gpr::cholesky_psd;
use crate::kernel::{gram_matrix, kernel_matrix, KernelHyperparams};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    #[default]
    Affine,
    SmoothNonlinear,
}

impl std::str::FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" | "linear" => Ok(Link::Affine),
            "smooth-nonlinear" | "nonlinear" => Ok(Link::SmoothNonlinear),
            _ => Err(Error::Parse(format!("unknown link '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub length: usize,
    pub n_features: usize,
    /// Leading features that feed the link; the rest are pure noise.
    pub n_signal: usize,
    pub link: Link,
    /// Target autocorrelation `φ ∈ [0, 1)`.
    pub phi: f64,
    pub noise_std: f64,
    /// AR(1) coefficient of each covariate path.
    pub covariate_ar: f64,
    /// Per-step standard deviation of the random walk on link coefficients.
    pub drift: f64,
    /// Per-step standard deviation of a random walk added to the target
    /// level; it is invisible to the covariates.
    #[serde(default)]
    pub level_drift: f64,
    pub signal_scale: f64,
    pub level: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            length: 240,
            n_features: 3,
            n_signal: 3,
            link: Link::Affine,
            phi: 0.5,
            noise_std: 0.5,
            covariate_ar: 0.95,
            drift: 0.0,
            level_drift: 0.0,
            signal_scale: 5.0,
            level: 80.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.n_features == 0 {
            return Err(Error::InvalidConfig("length and n_features must be positive".into()));
        }
        if self.n_signal > self.n_features {
            return Err(Error::InvalidConfig(format!(
                "n_signal = {} exceeds n_features = {}",
                self.n_signal, self.n_features
            )));
        }
        if !(0.0..1.0).contains(&self.phi) {
            return Err(Error::InvalidConfig(format!("phi = {} must lie in [0, 1)", self.phi)));
        }
        if !(self.noise_std >= 0.0) || !(self.drift >= 0.0) || !(self.level_drift >= 0.0) {
            return Err(Error::InvalidConfig("noise_std, drift and level_drift must be non-negative".into()));
        }
        if !(self.covariate_ar.abs() < 1.0) {
            return Err(Error::InvalidConfig("covariate_ar must lie in (-1, 1)".into()));
        }
        Ok(())
    }

    /// Sets one field from its textual name and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim().parse().map_err(|_| Error::Parse(format!("invalid value '{v}' for {key}")))
        }
        match key.trim().replace('-', "_").as_str() {
            "length" => self.length = num(key, value)?,
            "n_features" => self.n_features = num(key, value)?,
            "n_signal" => self.n_signal = num(key, value)?,
            "link" => self.link = value.trim().parse()?,
            "phi" => self.phi = num(key, value)?,
            "noise_std" => self.noise_std = num(key, value)?,
            "covariate_ar" => self.covariate_ar = num(key, value)?,
            "drift" => self.drift = num(key, value)?,
            "level_drift" => self.level_drift = num(key, value)?,
            "signal_scale" => self.signal_scale = num(key, value)?,
            "level" => self.level = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Parse(format!("unknown synth key '{other}'"))),
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn link_value(link: Link, beta: &[f64], x: &[f64]) -> f64 {
    beta.iter()
        .zip(x)
        .map(|(&b, &v)| match link {
            Link::Affine => b * v,
            Link::SmoothNonlinear => b * (1.5 * v).tanh() + 0.25 * b * v * v,
        })
        .sum()
}

/// Generates a fully observed frame. Timestamps run `1..=length`.
///
/// Covariates are unit-variance AR(1) paths; targets follow
/// `u_t = φ u_{t-1} + (1-φ) g_t(x_t) + ε_t`, `y_t = level + s_t + u_t` where
/// `s_t` is a random walk with step size `level_drift`.
pub fn generate<T: Scalar>(spec: &SynthSpec) -> Result<TimeSeriesFrame<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d) = (spec.length, spec.n_features);
    let a = spec.covariate_ar;
    let innov = (1.0 - a * a).sqrt();
    let mut x = vec![0.0; n * d];
    for j in 0..d {
        x[j] = normal(&mut rng);
    }
    for t in 1..n {
        for j in 0..d {
            x[t * d + j] = a * x[(t - 1) * d + j] + innov * normal(&mut rng);
        }
    }
    let base = spec.signal_scale / (spec.n_signal.max(1) as f64).sqrt();
    let mut beta: Vec<f64> = (0..spec.n_signal).map(|j| if j % 2 == 0 { base } else { -base }).collect();
    let mut y = Vec::with_capacity(n);
    let mut u = 0.0;
    let mut shift = 0.0;
    for t in 0..n {
        if t > 0 && spec.drift > 0.0 {
            for b in beta.iter_mut() {
                *b += spec.drift * normal(&mut rng);
            }
        }
        let g = link_value(spec.link, &beta, &x[t * d..t * d + spec.n_signal]);
        let eps = if spec.noise_std > 0.0 { spec.noise_std * normal(&mut rng) } else { 0.0 };
        u = if t == 0 { g + eps } else { spec.phi * u + (1.0 - spec.phi) * g + eps };
        if t > 0 && spec.level_drift > 0.0 {
            shift += spec.level_drift * normal(&mut rng);
        }
        y.push(T::of(spec.level + shift + u));
    }
    let cov = Matrix::from_row_major(n, d, x.into_iter().map(T::of).collect())?;
    TimeSeriesFrame::fully_observed(cov, y)
}

/// Draws `y ~ N(0, K + σ_n² I)` at the rows of `x`.
pub fn gp_sample<T: Scalar>(x: &Matrix<T>, hp: &KernelHyperparams<T>, seed: u64) -> Result<Vec<T>> {
    if x.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut k = gram_matrix(x, hp);
    k.add_diagonal(hp.noise_var());
    let chol = cholesky_psd(&k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<T> = (0..x.nrows()).map(|_| T::of(normal(&mut rng))).collect();
    chol.factor.lower().matvec(&z)
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn dense_inverse<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() {
        return Err(Error::shape("inverse of a non-square matrix"));
    }
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Matrix::identity(n);
    let scale = a.as_slice().iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).expect("finite"))
            .expect("non-empty range");
        if m[(pivot, col)].abs() <= T::epsilon() * scale * T::from_count(n) {
            return Err(Error::Singular { jitter: 0.0 });
        }
        if pivot != col {
            for j in 0..n {
                let (a1, b1) = (m[(col, j)], m[(pivot, j)]);
                m[(col, j)] = b1;
                m[(pivot, j)] = a1;
                let (a2, b2) = (inv[(col, j)], inv[(pivot, j)]);
                inv[(col, j)] = b2;
                inv[(pivot, j)] = a2;
            }
        }
        let p = m[(col, col)];
        for j in 0..n {
            m[(col, j)] = m[(col, j)] / p;
            inv[(col, j)] = inv[(col, j)] / p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let factor = m[(i, col)];
            if factor == T::zero() {
                continue;
            }
            for j in 0..n {
                m[(i, j)] = m[(i, j)] - factor * m[(col, j)];
                inv[(i, j)] = inv[(i, j)] - factor * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}

/// GP posterior at `x_star` from an explicit inverse of `K + σ_n² I`.
/// Targets are used as given (zero prior mean).
pub fn oracle_predict<T: Scalar>(
    x_train: &Matrix<T>,
    y_train: &[T],
    hp: &KernelHyperparams<T>,
    x_star: &[T],
) -> Result<Prediction<T>> {
    let n = x_train.nrows();
    if n == 0 || n > 200 {
        return Err(Error::Precondition(format!("oracle supports 1..=200 training points, got {n}")));
    }
    if y_train.len() != n || x_star.len() != x_train.ncols() {
        return Err(Error::shape("oracle inputs disagree in size"));
    }
    let mut a = kernel_matrix(x_train, x_train, hp)?;
    a.add_diagonal(hp.noise_var());
    let a_inv = dense_inverse(&a)?;
    let q = Matrix::from_row_major(1, x_star.len(), x_star.to_vec())?;
    let k = kernel_matrix(x_train, &q, hp)?.into_vec();
    let a_inv_y = a_inv.matvec(y_train)?;
    let a_inv_k = a_inv.matvec(&k)?;
    let mean = crate::linalg::dot(&k, &a_inv_y);
    let k_star = kernel_matrix(&q, &q, hp)?[(0, 0)];
    let variance = k_star - crate::linalg::dot(&k, &a_inv_k) + hp.noise_var();
    Ok(Prediction { time_index: 0, mean, variance })
}
