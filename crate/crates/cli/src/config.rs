//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are matched
//! case-insensitively with `-` and `_` treated alike. Values given on the
//! command line take precedence over the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nowcast_core::{ExperimentConfig, Granularity};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl KeyValues {
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(UsageError(format!("{context}: line {}: expected key=value, got '{line}'", n + 1)).into());
            };
            entries.push((normalize(k), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    /// Last value given for any of `names`.
    pub fn get(&self, names: &[&str]) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| names.contains(&k.as_str())).map(|(_, v)| v.as_str())
    }

    pub fn parsed<V: std::str::FromStr>(&self, names: &[&str]) -> Result<Option<V>> {
        match self.get(names) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| UsageError(format!("invalid value '{v}' for {}", names[0])).into()),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }
}

const EXPERIMENT_KEYS: &[&[&str]] = &[
    &["granularity"],
    &["window_w", "w", "window"],
    &["prediction_step_delta", "delta"],
    &["correspondence_lag_alpha", "alpha"],
    &["smoothing_len", "smooth"],
    &["survey_cadence", "step"],
    &["standardize"],
    &["per_window_pca"],
    &["warm_start"],
    &["dcca_box_len", "box_len"],
    &["restarts"],
    &["max_iters"],
    &["grad_tol"],
];

/// Rejects keys that neither the experiment nor the command understands.
pub fn check_keys(kv: &KeyValues, command_keys: &[&str]) -> Result<()> {
    for k in kv.keys() {
        let known = EXPERIMENT_KEYS.iter().any(|names| names.contains(&k)) || command_keys.contains(&k);
        if !known {
            bail!(UsageError(format!("unknown config key '{k}'")));
        }
    }
    Ok(())
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(UsageError(format!("invalid boolean '{v}'")).into()),
    }
}

/// Builds an experiment config from file values, starting from the defaults
/// of the granularity in force.
pub fn experiment_from(kv: &KeyValues, granularity: Option<Granularity>) -> Result<ExperimentConfig> {
    let gran = match granularity {
        Some(g) => g,
        None => match kv.get(&["granularity"]) {
            Some(v) => v.parse().map_err(|e: nowcast_core::Error| UsageError(e.to_string()))?,
            None => Granularity::Monthly,
        },
    };
    let mut cfg = ExperimentConfig::new(gran);
    if let Some(v) = kv.parsed(&["window_w", "w", "window"])? {
        cfg.window_w = v;
    }
    if let Some(v) = kv.parsed(&["prediction_step_delta", "delta"])? {
        cfg.prediction_step_delta = v;
    }
    if let Some(v) = kv.parsed(&["correspondence_lag_alpha", "alpha"])? {
        cfg.correspondence_lag_alpha = v;
    }
    if let Some(v) = kv.parsed(&["smoothing_len", "smooth"])? {
        cfg.smoothing_len = v;
    }
    if let Some(v) = kv.parsed(&["survey_cadence", "step"])? {
        cfg.survey_cadence = v;
    }
    if let Some(v) = kv.get(&["standardize"]) {
        cfg.standardize = parse_bool(v)?;
    }
    if let Some(v) = kv.get(&["warm_start"]) {
        cfg.warm_start = parse_bool(v)?;
    }
    if let Some(v) = kv.get(&["per_window_pca"]) {
        cfg.per_window_pca = match v.to_ascii_lowercase().as_str() {
            "" | "none" | "off" => None,
            _ => Some(v.parse().map_err(|_| UsageError(format!("invalid PCA fraction '{v}'")))?),
        };
    }
    if let Some(v) = kv.parsed(&["dcca_box_len", "box_len"])? {
        cfg.dcca_box_len = Some(v);
    }
    if let Some(v) = kv.parsed(&["restarts"])? {
        cfg.train.restarts = v;
    }
    if let Some(v) = kv.parsed(&["max_iters"])? {
        cfg.train.max_iters = v;
    }
    if let Some(v) = kv.parsed(&["grad_tol"])? {
        cfg.train.grad_tol = v;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let kv = KeyValues::parse("# run\nw = 24\n\nDelta=3\nw=30\n", "c").unwrap();
        assert_eq!(kv.get(&["w"]), Some("30"));
        let cfg = experiment_from(&kv, None).unwrap();
        assert_eq!((cfg.window_w, cfg.prediction_step_delta), (30, 3));
        assert!(KeyValues::parse("w 24\n", "c").is_err());
    }

    #[test]
    fn granularity_sets_window_default() {
        let kv = KeyValues::parse("granularity=daily\n", "c").unwrap();
        assert_eq!(experiment_from(&kv, None).unwrap().window_w, 730);
        assert_eq!(experiment_from(&kv, Some(Granularity::Monthly)).unwrap().window_w, 48);
    }

    #[test]
    fn unknown_keys_rejected() {
        let kv = KeyValues::parse("period=28\nbogus=1\n", "c").unwrap();
        assert!(check_keys(&kv, &["period"]).is_err());
        let kv = KeyValues::parse("period=28\nrestarts=2\nper-window-pca=0.9\n", "c").unwrap();
        check_keys(&kv, &["period"]).unwrap();
        let cfg = experiment_from(&kv, None).unwrap();
        assert_eq!((cfg.train.restarts, cfg.per_window_pca), (2, Some(0.9)));
    }
}
