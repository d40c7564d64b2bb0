//! Small dense row-major matrices and the factorizations the GP needs.
//!
//! Everything here is sized for windowed regression (a few hundred rows at
//! most), so plain triple loops are used throughout.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Matrix<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty iterator yields a 0x0 matrix.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn column_vector(v: &[T]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Copies rows `start..end`.
    pub fn row_range(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return Err(Error::shape(format!("cannot stack {} and {} columns", self.cols, other.cols)));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self { rows: self.rows + other.rows, cols, data })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = out.row_mut(i);
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.cols != v.len() {
            return Err(Error::shape(format!("{}x{} matrix times length-{} vector", self.rows, self.cols, v.len())));
        }
        Ok(self.rows_iter().map(|r| dot(r, v)).collect())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Elementwise `self + s * other`.
    pub fn add_scaled(&self, other: &Self, s: T) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape("elementwise operands differ in shape"));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + s * b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add_diagonal(&mut self, v: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] = self[(i, i)] + v;
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn convert<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::of(x.to_f64_lossy())).collect(),
        }
    }
}

impl<T: Scalar> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Cholesky<T: Scalar> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Plain Cholesky–Banachiewicz. Fails on a non-positive pivot.
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::shape(format!("Cholesky of a {}x{} matrix", a.nrows(), a.ncols())));
        }
        let n = a.nrows();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
                if i == j {
                    let d = a[(i, i)] - s;
                    if !(d > T::zero()) || !d.is_finite() {
                        return Err(Error::Singular { jitter: 0.0 });
                    }
                    l[(i, i)] = d.sqrt();
                } else {
                    l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
                }
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let l = &self.lower;
        let mut z = b.to_vec();
        for i in 0..z.len() {
            let s = dot(&l.row(i)[..i], &z[..i]);
            z[i] = (z[i] - s) / l[(i, i)];
        }
        z
    }

    /// Solves `Lᵀ x = z`.
    pub fn solve_upper(&self, z: &[T]) -> Vec<T> {
        let l = &self.lower;
        let n = z.len();
        let mut x = z.to_vec();
        for i in (0..n).rev() {
            let mut s = T::zero();
            for k in i + 1..n {
                s = s + l[(k, i)] * x[k];
            }
            x[i] = (x[i] - s) / l[(i, i)];
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log det(L Lᵀ) = 2 Σ log L_ii`.
    pub fn log_det(&self) -> T {
        let two = T::one() + T::one();
        two * self.lower.diagonal().into_iter().map(|d| d.ln()).sum::<T>()
    }

    /// Inverse of the lower factor, `L⁻¹`, by forward substitution.
    pub fn lower_inverse(&self) -> Matrix<T> {
        let l = &self.lower;
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        for i in 0..n {
            let d = l[(i, i)];
            inv[(i, i)] = T::one() / d;
            // row i of L⁻¹: -(Σ_{k<i} L_ik (L⁻¹)_k·) / L_ii
            let (done, rest) = inv.data.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for k in 0..i {
                let lik = l[(i, k)];
                if lik == T::zero() {
                    continue;
                }
                let row_k = &done[k * n..k * n + k + 1];
                for (dst, &v) in row_i[..=k].iter_mut().zip(row_k) {
                    *dst = *dst - lik * v;
                }
            }
            for v in row_i[..i].iter_mut() {
                *v = *v / d;
            }
        }
        inv
    }

    /// Full inverse of `L Lᵀ` as `L⁻ᵀ L⁻¹`; exactly symmetric.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.dim();
        let linv = self.lower_inverse();
        let mut inv = Matrix::zeros(n, n);
        for k in 0..n {
            let row_k = linv.row(k);
            for i in 0..=k {
                let a = row_k[i];
                if a == T::zero() {
                    continue;
                }
                let dst = &mut inv.data[i * n..i * n + i + 1];
                for (o, &b) in dst.iter_mut().zip(&row_k[..=i]) {
                    *o = *o + a * b;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                inv[(j, i)] = inv[(i, j)];
            }
        }
        inv
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        self.lower.matmul(&self.lower.transpose()).expect("square factor")
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in decreasing order and the matching unit eigenvectors
/// as the rows of the second matrix.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    if !a.is_square() {
        return Err(Error::shape("eigen-decomposition of a non-square matrix"));
    }
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let tol = T::epsilon() * T::of(0.5);
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = m[(i, j)] * m[(i, j)];
                total = total + x;
                if i != j {
                    off = off + x;
                }
            }
        }
        if off <= tol * tol * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::from_fn(n, n, |r, c| v[(c, order[r])]);
    // fix the sign so the largest-magnitude entry of each vector is positive
    for r in 0..n {
        let row = vectors.row_mut(r);
        let lead = row.iter().copied().fold(T::zero(), |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < T::zero() {
            row.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_of_small_spd() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 5.0]]).unwrap();
        let c = Cholesky::factor(&a).unwrap();
        let expected = Matrix::from_rows(&[[2.0, 0.0], [1.0, 2.0]]).unwrap();
        assert!(c.lower().max_abs_diff(&expected) < 1e-15);
        assert!(c.reconstruct().max_abs_diff(&a) < 1e-14);
        assert!((c.log_det() - 16f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::factor(&a), Err(Error::Singular { .. })));
    }

    #[test]
    fn cholesky_solve_and_inverse() {
        let a = Matrix::<f64>::from_rows(&[[6.0, 2.0, 1.0], [2.0, 5.0, 2.0], [1.0, 2.0, 4.0]]).unwrap();
        let c = Cholesky::factor(&a).unwrap();
        let b = [1.0f64, -2.0, 3.0];
        let x = c.solve(&b);
        let back = a.matvec(&x).unwrap();
        for (u, v) in back.iter().zip(b) {
            assert!((u - v).abs() < 1e-13);
        }
        let prod = a.matmul(&c.inverse()).unwrap();
        assert!(prod.max_abs_diff(&Matrix::identity(3)) < 1e-13);
    }

    #[test]
    fn jacobi_eigen_reconstructs() {
        let a = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]]).unwrap();
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let mut rec = Matrix::zeros(3, 3);
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    rec[(i, j)] += vals[k] * vecs[(k, i)] * vecs[(k, j)];
                }
            }
        }
        assert!(rec.max_abs_diff(&a) < 1e-12);
        let gram = vecs.matmul(&vecs.transpose()).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(3)) < 1e-12);
        // trace is preserved
        assert!((vals.iter().sum::<f64>() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn from_rows_rejects_ragged() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(Matrix::from_rows(&rows).is_err());
    }
}
