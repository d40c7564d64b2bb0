//! Post-level features to a covariate frame: optional noise-cluster
//! filtering and trust weighting, per-index aggregation, smoothing, PCA.

use std::collections::{BTreeSet, HashMap};

use anyhow::{bail, Context, Result};
use nowcast_core::io::{read_posts, read_targets, read_users};
use nowcast_core::pipeline::{
    aggregate_series, filter_clusters, kmeans_cluster, pca_fit, pca_transform, post_weights, smooth, train_trust,
    PcaProjection,
};
use nowcast_core::{Frame, Granularity, Mat};
use serde::{Deserialize, Serialize};

use crate::manifest::PrepareRun;
use crate::timefmt::parse_time;
use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub sizes: Vec<usize>,
    pub dropped: Vec<usize>,
    pub posts_kept: usize,
    pub inertia: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub rows: usize,
    pub features: usize,
    /// Time indices whose interval had no posts and repeat the previous row
    /// (before smoothing).
    pub stale_time_indices: Vec<i64>,
    pub trust_cv_accuracy: Option<f64>,
    pub clusters: Option<ClusterReport>,
    pub pca_components: Option<usize>,
    pub pca_explained_fraction: Option<f64>,
}

pub struct Prepared {
    pub frame: Frame,
    pub pca: Option<PcaProjection<f64>>,
    pub report: PrepareReport,
}

fn open(path: &std::path::Path) -> Result<std::fs::File> {
    std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

/// Trailing mean of targets; a window containing a gap is itself missing.
fn smooth_targets(targets: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    targets
        .windows(window)
        .map(|w| w.iter().copied().sum::<Option<f64>>().map(|s| s / window as f64))
        .collect()
}

pub fn run_prepare(run: &PrepareRun, seed: u64) -> Result<Prepared> {
    let gran: Granularity = run.granularity;
    let time = |s: &str| parse_time(s, gran);
    let ctx = run.posts.display().to_string();
    let mut posts = read_posts(open(&run.posts)?, &ctx, time)?;
    if posts.is_empty() {
        bail!("{ctx}: no posts");
    }

    let clusters = match &run.clusters {
        None => None,
        Some(c) => {
            let x = Mat::from_rows(&posts.iter().map(|p| p.features.clone()).collect::<Vec<_>>())?;
            let km = kmeans_cluster(&x, c.k, seed)?;
            let drop: BTreeSet<usize> = c.drop.iter().copied().collect();
            let kept = filter_clusters(&posts, &km.assignments, &drop, c.k)
                .map_err(|e| UsageError(format!("--drop-clusters: {e}")))?;
            let mut sizes = vec![0; c.k];
            km.assignments.iter().for_each(|&a| sizes[a] += 1);
            let report = ClusterReport {
                k: c.k,
                sizes,
                dropped: drop.into_iter().collect(),
                posts_kept: kept.len(),
                inertia: km.inertia(),
                converged: km.converged,
            };
            posts = kept;
            if posts.is_empty() {
                bail!("every post was removed by cluster filtering");
            }
            Some(report)
        }
    };

    let (weights, cv) = if run.trust {
        let Some(users_path) = &run.users else {
            bail!(UsageError("--trust needs --users".into()));
        };
        let users = read_users(open(users_path)?, &users_path.display().to_string())?;
        let labeled: Vec<_> = users.iter().filter(|u| u.label.is_some()).collect();
        let x = Mat::from_rows(&labeled.iter().map(|u| u.features.clone()).collect::<Vec<_>>())?;
        let y: Vec<bool> = labeled.iter().map(|u| u.label.expect("filtered")).collect();
        let (model, acc) = train_trust(&x, &y, run.folds.min(y.len()))?;
        let table: HashMap<String, Vec<f64>> = users.into_iter().map(|u| (u.user_id, u.features)).collect();
        (post_weights(&posts, &model, &table)?, Some(acc))
    } else {
        (vec![1.0; posts.len()], None)
    };

    let first = posts.iter().map(|p| p.time_index).min().expect("non-empty");
    let last = posts.iter().map(|p| p.time_index).max().expect("non-empty");
    let series = aggregate_series(&posts, &weights, first, last)?;
    let stale_time_indices: Vec<i64> =
        series.timestamps.iter().zip(&series.stale).filter(|(_, &s)| s).map(|(&t, _)| t).collect();

    let mut targets: Vec<Option<f64>> = vec![None; series.timestamps.len()];
    if let Some(tp) = &run.targets {
        for (t, y) in read_targets(open(tp)?, &tp.display().to_string(), time)? {
            if (first..=last).contains(&t) {
                targets[(t - first) as usize] = y;
            }
        }
    }

    let w = run.smooth;
    if w == 0 || w > series.timestamps.len() {
        bail!(UsageError(format!("--smooth {w} for a series of {} rows", series.timestamps.len())));
    }
    let mut x = smooth(&series.covariates, w)?;
    let targets = smooth_targets(&targets, w);
    let timestamps = series.timestamps[w - 1..].to_vec();

    let pca = match run.pca {
        None => None,
        Some(frac) => {
            let p = pca_fit(&x, frac)?;
            x = pca_transform(&p, &x)?;
            Some(p)
        }
    };
    let available: Vec<bool> = targets.iter().map(Option::is_some).collect();
    let frame = Frame::new(timestamps, x, targets, available)?;
    let report = PrepareReport {
        rows: frame.len(),
        features: frame.n_features(),
        stale_time_indices,
        trust_cv_accuracy: cv,
        clusters,
        pca_components: pca.as_ref().map(|p| p.n_components()),
        pca_explained_fraction: pca.as_ref().map(|p| p.explained_fraction()),
    };
    Ok(Prepared { frame, pca, report })
}
