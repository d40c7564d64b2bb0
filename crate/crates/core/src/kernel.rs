//! Isotropic Matérn-3/2 covariance with a signal-variance prefactor:
//!
//! ```text
//! k(x, x') = σ_f² (1 + √3 r / ℓ) exp(-√3 r / ℓ),   r = ‖x - x'‖₂
//! ```
//!
//! Hyperparameters live in log space so the optimizer works unconstrained.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct KernelHyperparams<T: Scalar> {
    pub log_lengthscale: T,
    pub log_signal_var: T,
    pub log_noise_var: T,
}

impl<T: Scalar> KernelHyperparams<T> {
    pub fn from_log(log_lengthscale: T, log_signal_var: T, log_noise_var: T) -> Self {
        Self { log_lengthscale, log_signal_var, log_noise_var }
    }

    /// Builds from natural-scale values; all must be strictly positive.
    pub fn new(lengthscale: T, signal_var: T, noise_var: T) -> Result<Self> {
        for (name, v) in [("length-scale", lengthscale), ("signal variance", signal_var), ("noise variance", noise_var)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Precondition(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self::from_log(lengthscale.ln(), signal_var.ln(), noise_var.ln()))
    }

    pub fn lengthscale(&self) -> T {
        self.log_lengthscale.exp()
    }

    pub fn signal_var(&self) -> T {
        self.log_signal_var.exp()
    }

    pub fn noise_var(&self) -> T {
        self.log_noise_var.exp()
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.lengthscale() > T::zero()
            && self.signal_var() > T::zero()
            && self.noise_var() > T::zero()
    }

    /// `[log ℓ, log σ_f², log σ_n²]`, the optimizer's coordinate order.
    pub fn to_array(&self) -> [T; 3] {
        [self.log_lengthscale, self.log_signal_var, self.log_noise_var]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::from_log(a[0], a[1], a[2])
    }

    pub fn with_noise_var(mut self, noise_var: T) -> Self {
        self.log_noise_var = noise_var.ln();
        self
    }
}

/// Kernel value as a function of the distance `r`.
#[inline]
pub fn matern32_of_distance<T: Scalar>(r: T, hp: &KernelHyperparams<T>) -> T {
    let s = T::of(3.0).sqrt() * r / hp.lengthscale();
    hp.signal_var() * (T::one() + s) * (-s).exp()
}

pub fn matern32<T: Scalar>(x: &[T], x_prime: &[T], hp: &KernelHyperparams<T>) -> Result<T> {
    if x.len() != x_prime.len() {
        return Err(Error::shape(format!("kernel inputs of dimension {} and {}", x.len(), x_prime.len())));
    }
    Ok(matern32_of_distance(squared_distance(x, x_prime).sqrt(), hp))
}

/// Cross-covariance between the rows of `x` and the rows of `x_prime`.
pub fn kernel_matrix<T: Scalar>(x: &Matrix<T>, x_prime: &Matrix<T>, hp: &KernelHyperparams<T>) -> Result<Matrix<T>> {
    if x.ncols() != x_prime.ncols() {
        return Err(Error::shape(format!(
            "kernel matrix between {} and {} columns",
            x.ncols(),
            x_prime.ncols()
        )));
    }
    Ok(Matrix::from_fn(x.nrows(), x_prime.nrows(), |i, j| {
        matern32_of_distance(squared_distance(x.row(i), x_prime.row(j)).sqrt(), hp)
    }))
}

/// Symmetric Gram matrix of `x` with itself; the diagonal is exactly `σ_f²`.
pub fn gram_matrix<T: Scalar>(x: &Matrix<T>, hp: &KernelHyperparams<T>) -> Matrix<T> {
    let n = x.nrows();
    let mut k = Matrix::zeros(n, n);
    let sf2 = hp.signal_var();
    for i in 0..n {
        k[(i, i)] = sf2;
        for j in 0..i {
            let v = matern32_of_distance(squared_distance(x.row(i), x.row(j)).sqrt(), hp);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Analytic derivatives of the Gram matrix with respect to `log ℓ` and `log σ_f²`.
///
/// `∂k/∂log ℓ = σ_f² (3 r² / ℓ²) exp(-√3 r / ℓ)`; `∂K/∂log σ_f² = K`.
pub fn matern32_grad<T: Scalar>(x: &Matrix<T>, hp: &KernelHyperparams<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    if x.nrows() == 0 {
        return Err(Error::shape("gradient of an empty Gram matrix"));
    }
    let n = x.nrows();
    let ell = hp.lengthscale();
    let sf2 = hp.signal_var();
    let sqrt3 = T::of(3.0).sqrt();
    let mut d_ell = Matrix::zeros(n, n);
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sf2;
        for j in 0..i {
            let r2 = squared_distance(x.row(i), x.row(j));
            let s = sqrt3 * r2.sqrt() / ell;
            let e = (-s).exp();
            let kv = sf2 * (T::one() + s) * e;
            let dv = sf2 * T::of(3.0) * r2 / (ell * ell) * e;
            k[(i, j)] = kv;
            k[(j, i)] = kv;
            d_ell[(i, j)] = dv;
            d_ell[(j, i)] = dv;
        }
    }
    Ok((d_ell, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hp(ell: f64, sf2: f64) -> KernelHyperparams<f64> {
        KernelHyperparams::new(ell, sf2, 0.1).unwrap()
    }

    #[test]
    fn zero_distance_is_signal_variance() {
        assert_eq!(matern32(&[0.3, -1.0], &[0.3, -1.0], &hp(2.0, 1.0)).unwrap(), 1.0);
        assert!((matern32(&[1.0], &[1.0], &hp(0.5, 2.5)).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn unit_distance_value() {
        // (1 + √3) e^{-√3}, evaluated with 30-digit arithmetic
        let oracle = 0.483_357_724_596_507_65_f64;
        let v = matern32(&[0.0], &[1.0], &hp(1.0, 1.0)).unwrap();
        assert!((v - oracle).abs() < 1e-15, "{v}");
    }

    #[test]
    fn far_points_decay() {
        let h = hp(1.0, 1.0);
        let v = matern32(&[0.0], &[100.0], &h).unwrap();
        assert!(v < 1e-60 && v > 0.0);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let v = matern32(&[0.0], &[i as f64 * 0.5], &h).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(matern32(&[0.0], &[0.0, 1.0], &hp(1.0, 1.0)), Err(Error::Shape(_))));
        let a = Matrix::<f64>::zeros(2, 2);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(kernel_matrix(&a, &b, &hp(1.0, 1.0)).is_err());
    }

    #[test]
    fn single_and_duplicate_points() {
        let h = hp(1.3, 0.7);
        let one = Matrix::from_rows(&[[0.2, 0.4]]).unwrap();
        let k = kernel_matrix(&one, &one, &h).unwrap();
        assert_eq!((k.nrows(), k.ncols()), (1, 1));
        assert!((k[(0, 0)] - 0.7).abs() < 1e-15);
        let dup = Matrix::from_rows(&[[0.2, 0.4], [0.2, 0.4]]).unwrap();
        let k = kernel_matrix(&dup, &dup, &h).unwrap();
        assert!(k.as_slice().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn gram_matches_cross_kernel_and_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0));
        let h = hp(0.9, 1.4);
        let k = kernel_matrix(&x, &x, &h).unwrap();
        assert!(k.max_abs_diff(&gram_matrix(&x, &h)) < 1e-15);
        let na = nalgebra::DMatrix::from_row_slice(5, 5, k.as_slice());
        let eig = na.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-12), "{eig}");
    }

    #[test]
    fn gradient_diagonal_and_linearity() {
        let x = Matrix::from_rows(&[[0.0], [0.5], [2.0]]).unwrap();
        let h = hp(0.8, 1.7);
        let (d_ell, d_sf) = matern32_grad(&x, &h).unwrap();
        assert!(d_ell.diagonal().iter().all(|&v| v == 0.0));
        assert!(d_sf.max_abs_diff(&kernel_matrix(&x, &x, &h).unwrap()) < 1e-15);
    }

    fn fd_check(x: &Matrix<f64>, h: KernelHyperparams<f64>) -> f64 {
        let step = 1e-6;
        let (d_ell, d_sf) = matern32_grad(x, &h).unwrap();
        let mut worst = 0.0f64;
        for (coord, analytic) in [(0usize, &d_ell), (1, &d_sf)] {
            let mut plus = h.to_array();
            let mut minus = h.to_array();
            plus[coord] += step;
            minus[coord] -= step;
            let kp = gram_matrix(x, &KernelHyperparams::from_array(plus));
            let km = gram_matrix(x, &KernelHyperparams::from_array(minus));
            for i in 0..x.nrows() {
                for j in 0..x.nrows() {
                    let fd = (kp[(i, j)] - km[(i, j)]) / (2.0 * step);
                    let a = analytic[(i, j)];
                    let scale = a.abs().max(1e-3 * h.signal_var());
                    worst = worst.max((fd - a).abs() / scale);
                }
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let d = rng.random_range(1..4);
            let x = Matrix::from_fn(4, d, |_, _| rng.random_range(-2.0..2.0));
            let h = KernelHyperparams::from_log(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..0.0),
            );
            let err = fd_check(&x, h);
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn single_precision_kernel() {
        let h = KernelHyperparams::<f32>::new(1.0, 1.0, 0.1).unwrap();
        let v = matern32(&[0.0f32], &[1.0], &h).unwrap();
        assert!((v - 0.483_357_7).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            log_ell in -2.0f64..2.0,
            log_sf in -2.0f64..2.0,
        ) {
            let h = KernelHyperparams::from_log(log_ell, log_sf, -2.0);
            let kab = matern32(&a, &b, &h).unwrap();
            let kba = matern32(&b, &a, &h).unwrap();
            prop_assert_eq!(kab, kba);
            prop_assert!(kab <= h.signal_var());
            prop_assert!(kab >= 0.0);
            if a != b && squared_distance(&a, &b).sqrt() / h.lengthscale() < 20.0 {
                prop_assert!(kab > 0.0 && kab < h.signal_var());
            }
        }

        #[test]
        fn gram_plus_tiny_jitter_factorizes(
            pts in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 1..12),
            log_ell in -1.0f64..1.5,
        ) {
            let x = Matrix::from_rows(&pts).unwrap();
            let h = KernelHyperparams::from_log(log_ell, 0.0, -2.0);
            let mut k = gram_matrix(&x, &h);
            k.add_diagonal(1e-10);
            prop_assert!(crate::linalg::Cholesky::factor(&k).is_ok());
        }
    }
}
