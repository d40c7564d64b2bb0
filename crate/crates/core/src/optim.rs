//! Box-constrained nonlinear conjugate-gradient ascent for small problems.
//!
//! Polak–Ribière+ directions, projected onto the box, with a backtracking
//! Armijo search. Every accepted step strictly increases the objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop once the projected gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { max_iters: 200, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds<T: Scalar> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn project(&self, x: &mut [T]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.max(lo).min(hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult<T: Scalar> {
    pub x: Vec<T>,
    pub value: T,
    pub grad: Vec<T>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Objective after each accepted iteration, starting with the initial value.
    pub trace: Vec<T>,
}

/// Zeroes gradient components that point out of the box at an active bound.
fn projected_gradient<T: Scalar>(x: &[T], g: &[T], bounds: Option<&Bounds<T>>) -> Vec<T> {
    match bounds {
        None => g.to_vec(),
        Some(b) => x
            .iter()
            .zip(g)
            .enumerate()
            .map(|(i, (&xi, &gi))| {
                if (xi <= b.lower[i] && gi < T::zero()) || (xi >= b.upper[i] && gi > T::zero()) {
                    T::zero()
                } else {
                    gi
                }
            })
            .collect(),
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    crate::linalg::dot(a, b)
}

struct Point<T: Scalar> {
    x: Vec<T>,
    value: T,
    grad: Vec<T>,
}

/// Strong-Wolfe line search along `d` from `base` (bracketing then zoom),
/// phrased for ascent. Returns the accepted point and step, or `None` when no
/// strictly better point satisfying sufficient increase was found.
fn line_search<T, F>(
    f: &mut F,
    base: &Point<T>,
    d: &[T],
    initial_step: T,
    bounds: Option<&Bounds<T>>,
    evaluations: &mut usize,
) -> Option<(Point<T>, T)>
where
    T: Scalar,
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    let c1 = T::of(1e-4);
    let c2 = T::of(0.1);
    let slope0 = dot(&base.grad, d);
    if !(slope0 > T::zero()) {
        return None;
    }
    let mut eval = |a: T| -> Option<(Point<T>, T)> {
        let mut xt: Vec<T> = base.x.iter().zip(d).map(|(&xi, &di)| xi + a * di).collect();
        let mut dt = d.to_vec();
        if let Some(b) = bounds {
            b.project(&mut xt);
            for i in 0..xt.len() {
                if xt[i] <= b.lower[i] || xt[i] >= b.upper[i] {
                    dt[i] = T::zero();
                }
            }
        }
        *evaluations += 1;
        match f(&xt) {
            Some((v, g)) if v.is_finite() && g.iter().all(|z| z.is_finite()) => {
                let slope = dot(&g, &dt);
                Some((Point { x: xt, value: v, grad: g }, slope))
            }
            _ => None,
        }
    };
    let sufficient = |a: T, v: T| v > base.value && v >= base.value + c1 * a * slope0;
    let curvature = |s: T| s.abs() <= c2 * slope0;

    // zoom between `lo` (sufficient increase holds) and `hi`
    let zoom = |eval: &mut dyn FnMut(T) -> Option<(Point<T>, T)>,
                mut lo: (T, T, T, Option<Point<T>>),
                mut hi: (T, T)|
     -> Option<(Point<T>, T)> {
        for _ in 0..40 {
            let (a_lo, v_lo, s_lo) = (lo.0, lo.1, lo.2);
            let (a_hi, v_hi) = hi;
            let width = a_hi - a_lo;
            // maximizer of the quadratic through (a_lo, v_lo, s_lo) and (a_hi, v_hi)
            let curv = v_hi - v_lo - s_lo * width;
            let mut a = if curv < T::zero() && v_hi.is_finite() {
                a_lo - s_lo * width * width / (T::of(2.0) * curv)
            } else {
                a_lo + width / T::of(2.0)
            };
            let (left, right) = if width > T::zero() { (a_lo, a_hi) } else { (a_hi, a_lo) };
            let margin = width.abs() * T::of(0.1);
            if !(a > left + margin && a < right - margin) {
                a = a_lo + width / T::of(2.0);
            }
            if width.abs() <= T::epsilon() * a_lo.abs().max(T::one()) {
                break;
            }
            match eval(a) {
                None => hi = (a, T::neg_infinity()),
                Some((p, s)) => {
                    if !sufficient(a, p.value) || p.value <= v_lo {
                        hi = (a, p.value);
                    } else {
                        if curvature(s) {
                            return Some((p, a));
                        }
                        if s * (a_hi - a_lo) <= T::zero() {
                            hi = (a_lo, v_lo);
                        }
                        lo = (a, p.value, s, Some(p));
                    }
                }
            }
        }
        lo.3.map(|p| (p, lo.0))
    };

    let mut a_prev = T::zero();
    let mut v_prev = base.value;
    let mut s_prev = slope0;
    let mut p_prev: Option<Point<T>> = None;
    let mut a = initial_step;
    for i in 0..30 {
        let Some((p, s)) = eval(a) else {
            return zoom(&mut eval, (a_prev, v_prev, s_prev, p_prev), (a, T::neg_infinity()));
        };
        if !sufficient(a, p.value) || (i > 0 && p.value <= v_prev) {
            return zoom(&mut eval, (a_prev, v_prev, s_prev, p_prev), (a, p.value));
        }
        if curvature(s) {
            return Some((p, a));
        }
        if s <= T::zero() {
            let v = p.value;
            return zoom(&mut eval, (a, v, s, Some(p)), (a_prev, v_prev));
        }
        a_prev = a;
        v_prev = p.value;
        s_prev = s;
        p_prev = Some(p);
        a = a * T::of(2.0);
    }
    p_prev.map(|p| (p, a_prev))
}

/// Maximizes `f`, which returns `(value, gradient)` or `None` where it cannot
/// be evaluated (treated as an infinitely bad point).
pub fn maximize<T, F>(mut f: F, x0: &[T], bounds: Option<&Bounds<T>>, opts: &CgOptions) -> Result<OptimResult<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    let dim = x0.len();
    let mut x = x0.to_vec();
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let mut evaluations = 1;
    let mut cur = match f(&x) {
        Some((v, g)) if v.is_finite() && g.iter().all(|d| d.is_finite()) => Point { x, value: v, grad: g },
        _ => return Err(Error::Training("objective not finite at the starting point".into())),
    };
    let tol = T::of(opts.grad_tol);
    let mut pg = projected_gradient(&cur.x, &cur.grad, bounds);
    let mut d = pg.clone();
    let mut steepest = true;
    let mut prev_step = T::zero();
    let mut prev_slope = T::zero();
    let mut trace = vec![cur.value];
    let mut iterations = 0;
    let mut since_restart = 0;

    while iterations < opts.max_iters && norm(&pg) >= tol {
        let mut slope = dot(&pg, &d);
        if !(slope > T::zero()) {
            d = pg.clone();
            slope = dot(&pg, &d);
            steepest = true;
            since_restart = 0;
        }
        let dn = norm(&d);
        let step = if prev_step > T::zero() && prev_slope > T::zero() {
            (prev_step * prev_slope / slope).min(T::of(10.0) / dn)
        } else {
            T::one() / dn.max(T::one())
        };
        let Some((next, s)) = line_search(&mut f, &cur, &d, step, bounds, &mut evaluations) else {
            if !steepest {
                d = pg.clone();
                steepest = true;
                since_restart = 0;
                prev_step = T::zero();
                continue;
            }
            break;
        };
        iterations += 1;
        let pg_new = projected_gradient(&next.x, &next.grad, bounds);
        let denom = dot(&pg, &pg);
        let beta = if since_restart + 1 >= dim || denom == T::zero() {
            T::zero()
        } else {
            let diff: Vec<T> = pg_new.iter().zip(&pg).map(|(&a, &b)| a - b).collect();
            (dot(&pg_new, &diff) / denom).max(T::zero())
        };
        since_restart = if beta == T::zero() { 0 } else { since_restart + 1 };
        steepest = beta == T::zero();
        d = pg_new.iter().zip(&d).map(|(&p, &di)| p + beta * di).collect();
        if let Some(b) = bounds {
            for i in 0..dim {
                if (next.x[i] <= b.lower[i] && d[i] < T::zero()) || (next.x[i] >= b.upper[i] && d[i] > T::zero()) {
                    d[i] = T::zero();
                }
            }
        }
        prev_step = s;
        prev_slope = slope;
        cur = next;
        pg = pg_new;
        trace.push(cur.value);
    }
    let converged = norm(&pg) < tol;
    Ok(OptimResult { x: cur.x, value: cur.value, grad: cur.grad, iterations, evaluations, converged, trace })
}
