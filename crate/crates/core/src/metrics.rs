//! Point-forecast error measures and correlation summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Prediction;
use crate::scalar::Scalar;

fn check_lengths<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    check_lengths(pred, target)?;
    let ss: T = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok((ss / T::from_count(pred.len())).sqrt())
}

/// Mean absolute error.
pub fn mae<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    check_lengths(pred, target)?;
    let s: T = pred.iter().zip(target).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(s / T::from_count(pred.len()))
}

/// Sample Pearson correlation.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_lengths(a, b)?;
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    let n = T::from_count(a.len());
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return Err(Error::UndefinedCorrelation("a series has zero variance".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Integrated mean-removed profile `P_k = Σ_{i≤k} (x_i − x̄)`.
fn profile<T: Scalar>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().sum::<T>() / T::from_count(x.len());
    let mut acc = T::zero();
    x.iter()
        .map(|&v| {
            acc = acc + (v - m);
            acc
        })
        .collect()
}

/// Residuals of a least-squares line through `p` against `0..p.len()`.
fn detrend_into<T: Scalar>(p: &[T], out: &mut [T]) {
    let n = T::from_count(p.len());
    let xbar = T::from_count(p.len() - 1) / T::of(2.0);
    let pbar = p.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (i, &v) in p.iter().enumerate() {
        let dx = T::from_count(i) - xbar;
        sxy = sxy + dx * (v - pbar);
        sxx = sxx + dx * dx;
    }
    let slope = sxy / sxx;
    for (i, (&v, o)) in p.iter().zip(out.iter_mut()).enumerate() {
        *o = v - pbar - slope * (T::from_count(i) - xbar);
    }
}

/// Detrended cross-correlation coefficient at scale `box_len`, using every
/// overlapping box of the integrated profiles with a linear local trend.
pub fn dcca<T: Scalar>(a: &[T], b: &[T], box_len: usize) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if box_len < 4 {
        return Err(Error::Range(format!("DCCA box length {box_len} is below 4")));
    }
    if a.len() < 2 * box_len {
        return Err(Error::Range(format!(
            "DCCA at box length {box_len} needs at least {} points, got {}",
            2 * box_len,
            a.len()
        )));
    }
    let (pa, pb) = (profile(a), profile(b));
    let mut ra = vec![T::zero(); box_len];
    let mut rb = vec![T::zero(); box_len];
    let (mut fab, mut faa, mut fbb) = (T::zero(), T::zero(), T::zero());
    for start in 0..=a.len() - box_len {
        detrend_into(&pa[start..start + box_len], &mut ra);
        detrend_into(&pb[start..start + box_len], &mut rb);
        for (&x, &y) in ra.iter().zip(&rb) {
            fab = fab + x * y;
            faa = faa + x * x;
            fbb = fbb + y * y;
        }
    }
    // the common 1/(boxes·box_len) normalization cancels in the ratio
    if faa <= T::zero() || fbb <= T::zero() {
        return Err(Error::UndefinedCorrelation("zero detrended variance".into()));
    }
    Ok(fab / (faa * fbb).sqrt())
}

/// Summary of a prediction run. Correlations are `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub rmse: f64,
    pub mae: f64,
    pub pearson: Option<f64>,
    pub dcca: Option<f64>,
    /// Mean predictive variance over the evaluated points.
    pub mean_variance: f64,
    pub n_points: usize,
}

/// Metrics of `predictions` against aligned `targets`, restricted to the
/// positions where `subset` is true (all positions when `subset` is `None`).
pub fn evaluate<T: Scalar>(
    predictions: &[Prediction<T>],
    targets: &[T],
    subset: Option<&[bool]>,
    box_len: usize,
) -> Result<MetricsRecord> {
    if predictions.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} predictions but {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if let Some(s) = subset {
        if s.len() != targets.len() {
            return Err(Error::shape(format!("subset mask has {} entries for {} points", s.len(), targets.len())));
        }
    }
    let keep = |i: usize| subset.is_none_or(|s| s[i]);
    let mut mu = Vec::new();
    let mut tg = Vec::new();
    let mut var = T::zero();
    for (i, (p, &t)) in predictions.iter().zip(targets).enumerate() {
        if keep(i) {
            mu.push(p.mean);
            tg.push(t);
            var = var + p.variance;
        }
    }
    if mu.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let defined = |r: Result<T>| match r {
        Ok(v) => Ok(Some(v.to_f64_lossy())),
        Err(Error::UndefinedCorrelation(_) | Error::Range(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(MetricsRecord {
        rmse: rmse(&mu, &tg)?.to_f64_lossy(),
        mae: mae(&mu, &tg)?.to_f64_lossy(),
        pearson: defined(pearson(&mu, &tg))?,
        dcca: defined(dcca(&mu, &tg, box_len))?,
        mean_variance: (var / T::from_count(mu.len())).to_f64_lossy(),
        n_points: mu.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rmse_and_mae_examples() {
        let t = [1.0, 2.0];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        let p = [4.0, -2.0];
        assert!(close(rmse(&p, &t).unwrap(), 12.5f64.sqrt(), 1e-15));
        assert!(close(mae(&p, &t).unwrap(), 3.5, 1e-15));
        let shifted: Vec<f64> = t.iter().map(|v| v - 2.5).collect();
        assert!(close(mae(&shifted, &t).unwrap(), 2.5, 1e-15));
        assert!(matches!(rmse(&[1.0], &t), Err(Error::Shape(_))));
        assert!(matches!(mae::<f64>(&[], &[]), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 4.0, 7.0, 3.0];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!(close(pearson(&a, &b).unwrap(), 1.0, 1e-15));
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!(close(pearson(&a, &neg).unwrap(), -1.0, 1e-15));
        assert!(matches!(pearson(&[2.0; 5], &a), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn dcca_self_and_negated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(dcca(&a, &a, 28).unwrap(), 1.0);
        assert!(close(dcca(&a, &neg, 28).unwrap(), -1.0, 1e-10));
    }

    #[test]
    fn dcca_preconditions() {
        let a = vec![1.0; 10];
        assert!(matches!(dcca(&a, &a, 3), Err(Error::Range(_))));
        assert!(matches!(dcca(&a, &a, 6), Err(Error::Range(_))));
        let lin: Vec<f64> = (0..10).map(|i| i as f64).collect();
        // a linear series has a quadratic profile, which is not flat after detrending
        assert!(dcca(&lin, &lin, 4).is_ok());
        assert!(matches!(dcca(&a, &lin, 4), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn dcca_independent_white_noise_is_small() {
        let mut vals: Vec<f64> = (0..20u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let a: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
                let b: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
                dcca(&a, &b, 28).unwrap().abs()
            })
            .collect();
        vals.sort_by(f64::total_cmp);
        let median = 0.5 * (vals[9] + vals[10]);
        assert!(median < 0.1, "median |rho| = {median}");
    }

    /// Independent DCCA: explicit normal-equation fit per box on raw indices,
    /// F² normalized per box before averaging.
    fn naive_dcca(a: &[f64], b: &[f64], l: usize) -> f64 {
        let prof = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter()
                .scan(0.0, |s, v| {
                    *s += v - m;
                    Some(*s)
                })
                .collect::<Vec<_>>()
        };
        let (pa, pb) = (prof(a), prof(b));
        let resid = |p: &[f64], s: usize| -> Vec<f64> {
            let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
            for k in 0..l {
                let x = (s + k) as f64;
                sx += x;
                sy += p[s + k];
                sxx += x * x;
                sxy += x * p[s + k];
            }
            let n = l as f64;
            let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            let icpt = (sy - slope * sx) / n;
            (0..l).map(|k| p[s + k] - icpt - slope * (s + k) as f64).collect()
        };
        let boxes = a.len() - l + 1;
        let (mut fab, mut faa, mut fbb) = (0.0, 0.0, 0.0);
        for s in 0..boxes {
            let (ra, rb) = (resid(&pa, s), resid(&pb, s));
            fab += ra.iter().zip(&rb).map(|(x, y)| x * y).sum::<f64>() / l as f64;
            faa += ra.iter().map(|x| x * x).sum::<f64>() / l as f64;
            fbb += rb.iter().map(|x| x * x).sum::<f64>() / l as f64;
        }
        let k = boxes as f64;
        (fab / k) / ((faa / k).sqrt() * (fbb / k).sqrt())
    }

    #[test]
    fn dcca_matches_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a: Vec<f64> = (0..120).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = a.iter().map(|v| { let e: f64 = StandardNormal.sample(&mut rng); 0.4 * v + e }).collect();
            for l in [4, 7, 28] {
                assert!(close(dcca(&a, &b, l).unwrap(), naive_dcca(&a, &b, l), 1e-9));
            }
        }
    }

    #[test]
    fn evaluate_perfect_and_single_point() {
        let targets: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin() * 3.0 + i as f64 * 0.1).collect();
        let preds: Vec<Prediction<f64>> = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| Prediction { time_index: i as i64, mean: t, variance: 0.5 })
            .collect();
        let r = evaluate(&preds, &targets, None, 4).unwrap();
        assert_eq!((r.rmse, r.mae, r.n_points), (0.0, 0.0, 20));
        assert!(close(r.pearson.unwrap(), 1.0, 1e-12));
        assert!(close(r.dcca.unwrap(), 1.0, 1e-12));
        assert!(close(r.mean_variance, 0.5, 1e-15));

        let mut mask = vec![false; 20];
        mask[3] = true;
        let mut off = preds.clone();
        off[3].mean += 2.0;
        let r = evaluate(&off, &targets, Some(&mask), 4).unwrap();
        assert_eq!((r.rmse, r.mae, r.n_points), (2.0, 2.0, 1));
        assert_eq!((r.pearson, r.dcca), (None, None));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"pearson\":null") && json.contains("\"dcca\":null"));

        assert!(matches!(evaluate(&preds, &targets, Some(&[false; 20]), 4), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn evaluate_matches_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 90;
        let targets: Vec<f64> = (0..n).map(|i| 80.0 + (i as f64 * 0.2).sin() * 5.0).collect();
        let preds: Vec<Prediction<f64>> = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                Prediction { time_index: i as i64, mean: t + e, variance: 1.0 + (i % 5) as f64 }
            })
            .collect();
        let mask: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let r = evaluate(&preds, &targets, Some(&mask), 4).unwrap();

        let sel: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        let m = sel.len() as f64;
        let errs: Vec<f64> = sel.iter().map(|&i| preds[i].mean - targets[i]).collect();
        let rm = (errs.iter().map(|e| e * e).sum::<f64>() / m).sqrt();
        let ma = errs.iter().map(|e| e.abs()).sum::<f64>() / m;
        let mv = sel.iter().map(|&i| preds[i].variance).sum::<f64>() / m;
        let p: Vec<f64> = sel.iter().map(|&i| preds[i].mean).collect();
        let t: Vec<f64> = sel.iter().map(|&i| targets[i]).collect();
        let (pm, tm) = (p.iter().sum::<f64>() / m, t.iter().sum::<f64>() / m);
        let cov: f64 = p.iter().zip(&t).map(|(a, b)| (a - pm) * (b - tm)).sum();
        let vp: f64 = p.iter().map(|a| (a - pm).powi(2)).sum();
        let vt: f64 = t.iter().map(|b| (b - tm).powi(2)).sum();

        assert!(close(r.rmse, rm, 1e-9));
        assert!(close(r.mae, ma, 1e-9));
        assert!(close(r.mean_variance, mv, 1e-9));
        assert!(close(r.pearson.unwrap(), cov / (vp * vt).sqrt(), 1e-9));
        assert!(close(r.dcca.unwrap(), naive_dcca(&p, &t, 4), 1e-9));
        assert_eq!(r.n_points, sel.len());
    }

    fn series(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (prop::collection::vec(-50.0..50.0f64, n), prop::collection::vec(-50.0..50.0f64, n))
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae((a, b) in (1usize..40).prop_flat_map(series)) {
            prop_assert!(rmse(&a, &b).unwrap() >= mae(&a, &b).unwrap() - 1e-12);
        }

        #[test]
        fn errors_symmetric_and_translation_covariant((a, b) in (1usize..40).prop_flat_map(series), c in -100.0..100.0f64) {
            prop_assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
            prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
            let ac: Vec<f64> = a.iter().map(|v| v + c).collect();
            let bc: Vec<f64> = b.iter().map(|v| v + c).collect();
            prop_assert!(close(rmse(&ac, &bc).unwrap(), rmse(&a, &b).unwrap(), 1e-9));
            prop_assert!(close(mae(&ac, &bc).unwrap(), mae(&a, &b).unwrap(), 1e-9));
        }

        #[test]
        fn pearson_positive_affine_invariant(
            (a, b) in (3usize..40).prop_flat_map(series),
            s1 in 0.1..10.0f64, c1 in -10.0..10.0f64, s2 in 0.1..10.0f64, c2 in -10.0..10.0f64,
        ) {
            let r = pearson(&a, &b).unwrap();
            let at: Vec<f64> = a.iter().map(|v| s1 * v + c1).collect();
            let bt: Vec<f64> = b.iter().map(|v| s2 * v + c2).collect();
            prop_assert!(close(pearson(&at, &bt).unwrap(), r, 1e-12));
        }

        #[test]
        fn dcca_self_symmetric_bounded((a, b) in (8usize..80).prop_flat_map(series), l in 4usize..8) {
            prop_assume!(a.len() >= 2 * l);
            prop_assert_eq!(dcca(&a, &a, l).unwrap(), 1.0);
            let r = dcca(&a, &b, l).unwrap();
            prop_assert_eq!(r, dcca(&b, &a, l).unwrap());
            prop_assert!(r.abs() <= 1.0 + 1e-9);
        }
    }
}
