//! Covariate preparation from per-post feature vectors: user trust scoring,
//! weighted aggregation into a regular series, noise-cluster filtering,
//! trailing smoothing and PCA.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, squared_distance, symmetric_eigen, Matrix};
use crate::scalar::Scalar;

/// Default decay rate of the exponential trust calibration.
pub const DEFAULT_CALIBRATION_RATE: f64 = 3.0;
pub const DEFAULT_L2: f64 = 1e-4;

/// One post: the time index it falls at, its author, and its feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PostRecord<T: Scalar> {
    pub time_index: i64,
    pub user_id: String,
    pub features: Vec<T>,
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Binary logistic regression on standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LogisticModel<T: Scalar> {
    pub weights: Vec<T>,
    pub bias: T,
    /// Per-feature centering applied before the linear score.
    pub feature_mean: Vec<T>,
    /// Per-feature scale applied before the linear score.
    pub feature_scale: Vec<T>,
}

impl<T: Scalar> LogisticModel<T> {
    /// Untrained model: every input scores probability ½.
    pub fn zeros(d: usize) -> Self {
        Self {
            weights: vec![T::zero(); d],
            bias: T::zero(),
            feature_mean: vec![T::zero(); d],
            feature_scale: vec![T::one(); d],
        }
    }

    fn standardized(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    pub fn probability(&self, x: &[T]) -> Result<T> {
        if x.len() != self.weights.len() {
            return Err(Error::shape(format!("{} features, model expects {}", x.len(), self.weights.len())));
        }
        Ok(sigmoid(dot(&self.weights, &self.standardized(x)) + self.bias))
    }
}

/// Mean cross-entropy plus `½λ‖w‖²`, and its gradient (weights then bias).
fn logistic_loss<T: Scalar>(z: &Matrix<T>, y: &[bool], w: &[T], b: T, l2: T) -> (T, Vec<T>) {
    let n = T::from_count(z.nrows());
    let d = z.ncols();
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); d + 1];
    for (row, &label) in z.rows_iter().zip(y) {
        let s = dot(w, row) + b;
        // log(1 + e^{-s}) for positives, log(1 + e^{s}) for negatives
        let m = if label { -s } else { s };
        loss = loss + m.max(T::zero()) + (-(m.abs())).exp().ln_1p();
        let r = sigmoid(s) - if label { T::one() } else { T::zero() };
        for (g, &v) in grad.iter_mut().zip(row) {
            *g = *g + r * v;
        }
        grad[d] = grad[d] + r;
    }
    loss = loss / n + T::of(0.5) * l2 * dot(w, w);
    for (j, g) in grad.iter_mut().enumerate() {
        *g = *g / n + if j < d { l2 * w[j] } else { T::zero() };
    }
    (loss, grad)
}

/// Fits logistic regression by gradient descent with backtracking from a zero
/// start. The bias is not penalized.
pub fn fit_logistic<T: Scalar>(x: &Matrix<T>, labels: &[bool], l2: T) -> Result<LogisticModel<T>> {
    if x.nrows() != labels.len() {
        return Err(Error::shape(format!("{} rows but {} labels", x.nrows(), labels.len())));
    }
    if x.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let d = x.ncols();
    let mut model = LogisticModel::zeros(d);
    for j in 0..d {
        let col = x.column(j);
        let m = crate::scalar::mean(&col).expect("non-empty");
        let sd = crate::scalar::variance(&col).expect("non-empty").sqrt();
        model.feature_mean[j] = m;
        model.feature_scale[j] = if sd > T::zero() { sd } else { T::one() };
    }
    let z = Matrix::from_fn(x.nrows(), d, |i, j| (x[(i, j)] - model.feature_mean[j]) / model.feature_scale[j]);

    let mut w = vec![T::zero(); d];
    let mut b = T::zero();
    let (mut loss, mut grad) = logistic_loss(&z, labels, &w, b, l2);
    let mut step = T::one();
    for _ in 0..5000 {
        let gnorm2 = dot(&grad, &grad);
        if gnorm2.sqrt() < T::of(1e-8) {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let wn: Vec<T> = w.iter().zip(&grad).map(|(&wi, &gi)| wi - step * gi).collect();
            let bn = b - step * grad[d];
            let (ln, gn) = logistic_loss(&z, labels, &wn, bn, l2);
            if ln <= loss - T::of(1e-4) * step * gnorm2 {
                (w, b, loss, grad) = (wn, bn, ln, gn);
                accepted = true;
                break;
            }
            step = step * T::of(0.5);
        }
        if !accepted {
            break;
        }
        step = (step * T::of(2.0)).min(T::of(64.0));
    }
    model.weights = w;
    model.bias = b;
    Ok(model)
}

/// Rank-based weights `exp(−λ(1 − q))`, `q` being the empirical CDF of the
/// probability within the sample. Equal probabilities share a weight and the
/// largest probability always maps to 1.
pub fn calibrate_exponential<T: Scalar>(probabilities: &[T], rate: T) -> Vec<T> {
    let mut sorted = probabilities.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    probabilities.iter().map(|&p| ecdf_weight(&sorted, p, rate)).collect()
}

fn ecdf_weight<T: Scalar>(sorted: &[T], p: T, rate: T) -> T {
    let below = sorted.partition_point(|&v| v <= p);
    let q = T::from_count(below) / T::from_count(sorted.len());
    (-rate * (T::one() - q)).exp()
}

/// Classifier plus exponential calibration against the training-set scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct UserTrustModel<T: Scalar> {
    pub classifier: LogisticModel<T>,
    /// Sorted in-sample probabilities defining the calibration quantiles.
    pub reference: Vec<T>,
    pub rate: T,
}

impl<T: Scalar> UserTrustModel<T> {
    /// Calibrated trust weight in `(0, 1]`.
    pub fn weight(&self, features: &[T]) -> Result<T> {
        let p = self.classifier.probability(features)?;
        Ok(ecdf_weight(&self.reference, p, self.rate))
    }
}

/// Fold id per sample: samples of each class are dealt round-robin.
pub fn stratified_folds(labels: &[bool], folds: usize) -> Vec<usize> {
    let mut next = [0usize; 2];
    labels
        .iter()
        .map(|&l| {
            let c = &mut next[l as usize];
            let f = *c % folds;
            *c += 1;
            f
        })
        .collect()
}

/// Trains the trust classifier and reports its stratified k-fold accuracy.
pub fn train_trust<T: Scalar>(
    features: &Matrix<T>,
    labels: &[bool],
    folds: usize,
) -> Result<(UserTrustModel<T>, f64)> {
    if features.nrows() != labels.len() {
        return Err(Error::shape(format!("{} rows but {} labels", features.nrows(), labels.len())));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::DegenerateLabels);
    }
    if folds < 2 || folds > labels.len() {
        return Err(Error::Precondition(format!("{folds} folds for {} samples", labels.len())));
    }
    let l2 = T::of(DEFAULT_L2);
    let fold_of = stratified_folds(labels, folds);
    let mut correct = 0usize;
    let mut tested = 0usize;
    for f in 0..folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
        if test.is_empty() {
            continue;
        }
        let xt = Matrix::from_fn(train.len(), features.ncols(), |i, j| features[(train[i], j)]);
        let yt: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let m = fit_logistic(&xt, &yt, l2)?;
        for &i in &test {
            let p = m.probability(features.row(i))?;
            correct += usize::from((p >= T::of(0.5)) == labels[i]);
            tested += 1;
        }
    }
    let classifier = fit_logistic(features, labels, l2)?;
    let mut reference = features
        .rows_iter()
        .map(|r| classifier.probability(r))
        .collect::<Result<Vec<_>>>()?;
    reference.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let model = UserTrustModel { classifier, reference, rate: T::of(DEFAULT_CALIBRATION_RATE) };
    Ok((model, correct as f64 / tested as f64))
}

/// Per-post weights from per-user features. Every author must be known.
pub fn post_weights<T: Scalar>(
    posts: &[PostRecord<T>],
    model: &UserTrustModel<T>,
    users: &HashMap<String, Vec<T>>,
) -> Result<Vec<T>> {
    let mut cache: HashMap<&str, T> = HashMap::new();
    posts
        .iter()
        .map(|p| {
            if let Some(&w) = cache.get(p.user_id.as_str()) {
                return Ok(w);
            }
            let f = users
                .get(&p.user_id)
                .ok_or_else(|| Error::Precondition(format!("no features for user '{}'", p.user_id)))?;
            let w = model.weight(f)?;
            cache.insert(&p.user_id, w);
            Ok(w)
        })
        .collect()
}

/// Weighted mean of the features of posts whose time index lies in
/// `interval`, or `None` when the interval holds no posts.
pub fn aggregate<T: Scalar>(posts: &[PostRecord<T>], scores: &[T], interval: Range<i64>) -> Result<Option<Vec<T>>> {
    if posts.len() != scores.len() {
        return Err(Error::shape(format!("{} posts but {} scores", posts.len(), scores.len())));
    }
    let mut acc: Option<Vec<T>> = None;
    let mut total = T::zero();
    for (p, &s) in posts.iter().zip(scores) {
        if !interval.contains(&p.time_index) {
            continue;
        }
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::Precondition(format!("post weight {s} is not positive")));
        }
        let a = acc.get_or_insert_with(|| vec![T::zero(); p.features.len()]);
        if a.len() != p.features.len() {
            return Err(Error::shape("posts have differing feature counts"));
        }
        for (o, &v) in a.iter_mut().zip(&p.features) {
            *o = *o + v * s;
        }
        total = total + s;
    }
    Ok(acc.map(|a| a.into_iter().map(|v| v / total).collect()))
}

/// Unit-spaced covariate series built by aggregating posts per time index.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedSeries<T: Scalar> {
    pub timestamps: Vec<i64>,
    pub covariates: Matrix<T>,
    /// True where the interval was empty and the previous row was carried forward.
    pub stale: Vec<bool>,
}

/// Aggregates every time index in `first..=last`; empty intervals repeat the
/// previous row and are flagged stale. The first interval must hold posts.
pub fn aggregate_series<T: Scalar>(posts: &[PostRecord<T>], scores: &[T], first: i64, last: i64) -> Result<AggregatedSeries<T>> {
    if last < first {
        return Err(Error::Range(format!("empty time range {first}..={last}")));
    }
    let d = posts.first().map(|p| p.features.len()).ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let mut by_time: Vec<(i64, usize)> = posts.iter().enumerate().map(|(i, p)| (p.time_index, i)).collect();
    by_time.sort();
    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    let mut stale = Vec::new();
    let mut prev: Option<Vec<T>> = None;
    let mut cursor = by_time.partition_point(|&(t, _)| t < first);
    for t in first..=last {
        let start = cursor;
        while cursor < by_time.len() && by_time[cursor].0 == t {
            cursor += 1;
        }
        let (sel, w): (Vec<PostRecord<T>>, Vec<T>) =
            by_time[start..cursor].iter().map(|&(_, i)| (posts[i].clone(), scores[i])).unzip();
        let row = match aggregate(&sel, &w, t..t + 1)? {
            Some(r) => {
                stale.push(false);
                r
            }
            None => {
                let r = prev.clone().ok_or_else(|| {
                    Error::Precondition(format!("no posts at the first time index {t}"))
                })?;
                stale.push(true);
                r
            }
        };
        if row.len() != d {
            return Err(Error::shape("posts have differing feature counts"));
        }
        data.extend_from_slice(&row);
        timestamps.push(t);
        prev = Some(row);
    }
    let covariates = Matrix::from_row_major(timestamps.len(), d, data)?;
    Ok(AggregatedSeries { timestamps, covariates, stale })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult<T: Scalar> {
    pub assignments: Vec<usize>,
    pub centroids: Matrix<T>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> KMeansResult<T> {
    pub fn inertia(&self) -> T {
        *self.inertia_history.last().expect("at least one assignment step")
    }
}

pub const KMEANS_MAX_ITERS: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

fn nearest<T: Scalar>(centroids: &Matrix<T>, x: &[T]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, row) in centroids.rows_iter().enumerate() {
        let d = squared_distance(row, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp<T: Scalar>(x: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<T> = x.rows_iter().map(|r| squared_distance(r, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: T = d2.iter().copied().sum();
        let next = if total > T::zero() {
            let mut u = T::of(rng.random::<f64>()) * total;
            let mut pick = n - 1;
            for (i, &v) in d2.iter().enumerate() {
                if v > T::zero() && u < v {
                    pick = i;
                    break;
                }
                u = u - v;
            }
            if d2[pick] == T::zero() {
                pick = d2.iter().rposition(|&v| v > T::zero()).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, r) in x.rows_iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(r, x.row(next)));
        }
    }
    Matrix::from_fn(k, x.ncols(), |c, j| x[(chosen[c], j)])
}

/// Lloyd's algorithm with k-means++ seeding. Clusters that lose all points
/// keep their previous centroid.
pub fn kmeans_cluster<T: Scalar>(x: &Matrix<T>, k: usize, seed: u64) -> Result<KMeansResult<T>> {
    if k == 0 {
        return Err(Error::Precondition("k must be positive".into()));
    }
    if x.nrows() < k {
        return Err(Error::InsufficientData { needed: k, got: x.nrows() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(x, k, &mut rng);
    let d = x.ncols();
    let mut assignments = vec![0; x.nrows()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut inertia = T::zero();
        for (i, r) in x.rows_iter().enumerate() {
            let (c, dist) = nearest(&centroids, r);
            assignments[i] = c;
            inertia = inertia + dist;
        }
        history.push(inertia);
        let mut sums = Matrix::<T>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows_iter().enumerate() {
            let c = assignments[i];
            counts[c] += 1;
            for (s, &v) in sums.row_mut(c).iter_mut().zip(r) {
                *s = *s + v;
            }
        }
        let mut shift = T::zero();
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let m = T::from_count(counts[c]);
            let new: Vec<T> = sums.row(c).iter().map(|&s| s / m).collect();
            shift = shift.max(squared_distance(&new, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&new);
        }
        if shift < T::of(KMEANS_TOL) {
            converged = true;
            break;
        }
    }
    Ok(KMeansResult { assignments, centroids, inertia_history: history, iterations, converged })
}

/// Keeps posts whose cluster is not in `drop_ids`, preserving order.
pub fn filter_clusters<T: Scalar>(
    posts: &[PostRecord<T>],
    assignments: &[usize],
    drop_ids: &BTreeSet<usize>,
    n_clusters: usize,
) -> Result<Vec<PostRecord<T>>> {
    if posts.len() != assignments.len() {
        return Err(Error::shape(format!("{} posts but {} assignments", posts.len(), assignments.len())));
    }
    if let Some(&bad) = drop_ids.iter().find(|&&c| c >= n_clusters) {
        return Err(Error::Range(format!("cluster id {bad} of {n_clusters}")));
    }
    Ok(posts
        .iter()
        .zip(assignments)
        .filter(|(_, c)| !drop_ids.contains(c))
        .map(|(p, _)| p.clone())
        .collect())
}

/// Trailing moving average; the first `window − 1` rows are dropped.
pub fn smooth<T: Scalar>(series: &Matrix<T>, window: usize) -> Result<Matrix<T>> {
    let n = series.nrows();
    if window == 0 || window > n {
        return Err(Error::Range(format!("smoothing window {window} for {n} rows")));
    }
    let w = T::from_count(window);
    Ok(Matrix::from_fn(n - window + 1, series.ncols(), |i, j| {
        (i..i + window).map(|r| series[(r, j)]).sum::<T>() / w
    }))
}

/// [`smooth`] for a single series.
pub fn smooth_vec<T: Scalar>(series: &[T], window: usize) -> Result<Vec<T>> {
    Ok(smooth(&Matrix::column_vector(series), window)?.into_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PcaProjection<T: Scalar> {
    pub mean_vector: Vec<T>,
    /// `k × d`, orthonormal rows.
    pub components: Matrix<T>,
    /// Variance along each kept component, decreasing.
    pub explained_variance: Vec<T>,
    /// Sum of all covariance eigenvalues, kept or not.
    pub total_variance: T,
}

impl<T: Scalar> PcaProjection<T> {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn explained_fraction(&self) -> T {
        self.explained_variance.iter().copied().sum::<T>() / self.total_variance
    }
}

/// Principal components of the sample covariance; keeps the fewest leading
/// components whose cumulative share reaches `variance_fraction`.
pub fn pca_fit<T: Scalar>(x: &Matrix<T>, variance_fraction: T) -> Result<PcaProjection<T>> {
    let (n, d) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if !(variance_fraction > T::zero() && variance_fraction <= T::one()) {
        return Err(Error::Precondition(format!("variance fraction {variance_fraction} outside (0, 1]")));
    }
    let mean_vector: Vec<T> = (0..d).map(|j| x.column(j).into_iter().sum::<T>() / T::from_count(n)).collect();
    let mut cov = Matrix::<T>::zeros(d, d);
    for r in x.rows_iter() {
        for a in 0..d {
            let da = r[a] - mean_vector[a];
            for b in 0..=a {
                cov[(a, b)] = cov[(a, b)] + da * (r[b] - mean_vector[b]);
            }
        }
    }
    let denom = T::from_count(n - 1);
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let values: Vec<T> = values.into_iter().map(|v| v.max(T::zero())).collect();
    let total: T = values.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::DegenerateData("covariates have zero variance".into()));
    }
    let target = variance_fraction * total * (T::one() - T::of(1e-12));
    let mut cum = T::zero();
    let mut k = d;
    for (i, &v) in values.iter().enumerate() {
        cum = cum + v;
        if cum >= target {
            k = i + 1;
            break;
        }
    }
    Ok(PcaProjection {
        mean_vector,
        components: vectors.row_range(0, k),
        explained_variance: values[..k].to_vec(),
        total_variance: total,
    })
}

/// Scores `(X − mean)·componentsᵀ`.
pub fn pca_transform<T: Scalar>(proj: &PcaProjection<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    if x.ncols() != proj.mean_vector.len() {
        return Err(Error::shape(format!("{} columns, projection expects {}", x.ncols(), proj.mean_vector.len())));
    }
    let k = proj.n_components();
    let mut out = Matrix::zeros(x.nrows(), k);
    let mut centered = vec![T::zero(); x.ncols()];
    for (i, r) in x.rows_iter().enumerate() {
        for ((c, &v), &m) in centered.iter_mut().zip(r).zip(&proj.mean_vector) {
            *c = v - m;
        }
        for (c, comp) in proj.components.rows_iter().enumerate() {
            out[(i, c)] = dot(&centered, comp);
        }
    }
    Ok(out)
}

/// Maps scores back to the original feature space.
pub fn pca_inverse<T: Scalar>(proj: &PcaProjection<T>, scores: &Matrix<T>) -> Result<Matrix<T>> {
    if scores.ncols() != proj.n_components() {
        return Err(Error::shape(format!("{} score columns for {} components", scores.ncols(), proj.n_components())));
    }
    let mut out = scores.matmul(&proj.components)?;
    for i in 0..out.nrows() {
        for (v, &m) in out.row_mut(i).iter_mut().zip(&proj.mean_vector) {
            *v = *v + m;
        }
    }
    Ok(out)
}
