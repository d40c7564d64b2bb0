//! CSV and JSON formats for frames, posts, user labels and results.
//!
//! Frame CSV: `time_index,target,observed,x0,…` with an empty `target` where
//! the survey value is missing and `observed` as `1`/`0`.
//! Posts CSV: `time_index,user_id,f_0,…`. Users CSV: `user_id,label,u_0,…`
//! with `label` `1`/`0` or empty. Predictions CSV:
//! `time_index,mean,variance,observed,imputed`. Plot CSV:
//! `time_index,target,mean,lower,upper,imputed`.
//!
//! Floats are written in shortest round-trip form, so reading an output back
//! reproduces the values exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Prediction, TimeSeriesFrame};
use crate::linalg::Matrix;
use crate::pipeline::PostRecord;

fn csv_err(context: &str, e: csv::Error) -> Error {
    Error::Parse(format!("{context}: {e}"))
}

fn at_line(context: &str, rec: &csv::StringRecord, msg: impl std::fmt::Display) -> Error {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse(format!("{context}: line {line}: {msg}"))
}

fn parse_f64(context: &str, rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64> {
    let raw = rec.get(col).unwrap_or("").trim();
    let v: f64 = raw
        .parse()
        .map_err(|_| at_line(context, rec, format!("column '{name}' holds '{raw}', not a number")))?;
    if !v.is_finite() {
        return Err(at_line(context, rec, format!("column '{name}' is not finite")));
    }
    Ok(v)
}

fn parse_opt_f64(context: &str, rec: &csv::StringRecord, col: usize, name: &str) -> Result<Option<f64>> {
    if rec.get(col).unwrap_or("").trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(context, rec, col, name).map(Some)
    }
}

fn parse_flag(context: &str, rec: &csv::StringRecord, col: usize, name: &str) -> Result<bool> {
    match rec.get(col).unwrap_or("").trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(at_line(context, rec, format!("column '{name}' holds '{other}', expected 1 or 0"))),
    }
}

fn parse_int(context: &str, rec: &csv::StringRecord, col: usize, name: &str) -> Result<i64> {
    let raw = rec.get(col).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| at_line(context, rec, format!("column '{name}' holds '{raw}', not an integer")))
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(r)
}

fn expect_prefix(context: &str, headers: &csv::StringRecord, prefix: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().take(prefix.len()).collect();
    if got != prefix {
        return Err(Error::Parse(format!(
            "{context}: header starts with {:?}, expected {:?}",
            got, prefix
        )));
    }
    Ok(())
}

pub fn read_frame<R: Read>(r: R, context: &str) -> Result<TimeSeriesFrame<f64>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(context, e))?.clone();
    expect_prefix(context, &headers, &["time_index", "target", "observed"])?;
    let names: Vec<String> = headers.iter().skip(3).map(str::to_owned).collect();
    let d = names.len();
    let (mut ts, mut data, mut targets, mut avail) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(context, e))?;
        if rec.len() != d + 3 {
            return Err(at_line(context, &rec, format!("{} fields, header has {}", rec.len(), d + 3)));
        }
        ts.push(parse_int(context, &rec, 0, "time_index")?);
        let y = parse_opt_f64(context, &rec, 1, "target")?;
        let obs = parse_flag(context, &rec, 2, "observed")?;
        if obs && y.is_none() {
            return Err(at_line(context, &rec, "row is marked observed but has no target"));
        }
        targets.push(y);
        avail.push(obs);
        for (j, name) in names.iter().enumerate() {
            data.push(parse_f64(context, &rec, 3 + j, name)?);
        }
    }
    let x = Matrix::from_row_major(ts.len(), d, data)?;
    TimeSeriesFrame::new(ts, x, targets, avail).map_err(|e| Error::Parse(format!("{context}: {e}")))
}

pub fn write_frame<W: Write>(w: W, frame: &TimeSeriesFrame<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["time_index".to_string(), "target".into(), "observed".into()];
    header.extend((0..frame.n_features()).map(|j| format!("x{j}")));
    wtr.write_record(&header).map_err(|e| csv_err("frame", e))?;
    for i in 0..frame.len() {
        let mut row = vec![frame.timestamps()[i].to_string(), opt(frame.targets()[i]), flag(frame.availability()[i]).into()];
        row.extend(frame.covariates().row(i).iter().map(f64::to_string));
        wtr.write_record(&row).map_err(|e| csv_err("frame", e))?;
    }
    wtr.flush().map_err(|e| Error::Parse(format!("frame: {e}")))
}

/// Reads posts; `parse_time` maps the raw `time_index` field to an integer index.
pub fn read_posts<R: Read>(
    r: R,
    context: &str,
    parse_time: impl Fn(&str) -> Result<i64>,
) -> Result<Vec<PostRecord<f64>>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(context, e))?.clone();
    expect_prefix(context, &headers, &["time_index", "user_id"])?;
    let names: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::Parse(format!("{context}: no feature columns")));
    }
    let mut posts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(context, e))?;
        if rec.len() != names.len() + 2 {
            return Err(at_line(context, &rec, format!("{} fields, header has {}", rec.len(), names.len() + 2)));
        }
        let time_index = parse_time(&rec[0]).map_err(|e| at_line(context, &rec, e))?;
        let features = (0..names.len())
            .map(|j| parse_f64(context, &rec, 2 + j, &names[j]))
            .collect::<Result<_>>()?;
        posts.push(PostRecord { time_index, user_id: rec[1].to_string(), features });
    }
    Ok(posts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    pub label: Option<bool>,
    pub features: Vec<f64>,
}

pub fn read_users<R: Read>(r: R, context: &str) -> Result<Vec<UserRecord>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(context, e))?.clone();
    expect_prefix(context, &headers, &["user_id", "label"])?;
    let names: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
    let mut users = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(context, e))?;
        if rec.len() != names.len() + 2 {
            return Err(at_line(context, &rec, format!("{} fields, header has {}", rec.len(), names.len() + 2)));
        }
        let label = if rec[1].trim().is_empty() { None } else { Some(parse_flag(context, &rec, 1, "label")?) };
        let features = (0..names.len())
            .map(|j| parse_f64(context, &rec, 2 + j, &names[j]))
            .collect::<Result<_>>()?;
        users.push(UserRecord { user_id: rec[0].to_string(), label, features });
    }
    Ok(users)
}

/// Reads `time_index,target` pairs; an empty target is missing.
pub fn read_targets<R: Read>(
    r: R,
    context: &str,
    parse_time: impl Fn(&str) -> Result<i64>,
) -> Result<Vec<(i64, Option<f64>)>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(context, e))?.clone();
    expect_prefix(context, &headers, &["time_index", "target"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(context, e))?;
        let t = parse_time(&rec[0]).map_err(|e| at_line(context, &rec, e))?;
        out.push((t, parse_opt_f64(context, &rec, 1, "target")?));
    }
    Ok(out)
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub time_index: i64,
    pub mean: f64,
    /// Absent for rows that carry an observed value rather than an estimate.
    pub variance: Option<f64>,
    /// Observed target at this index, if any.
    pub observed: Option<f64>,
    pub imputed: bool,
}

impl PredictionRow {
    pub fn from_prediction(p: &Prediction<f64>, observed: Option<f64>, imputed: bool) -> Self {
        Self { time_index: p.time_index, mean: p.mean, variance: Some(p.variance), observed, imputed }
    }
}

pub fn write_predictions<W: Write>(w: W, rows: &[PredictionRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let e = |e| csv_err("predictions", e);
    wtr.write_record(["time_index", "mean", "variance", "observed", "imputed"]).map_err(e)?;
    for r in rows {
        wtr.write_record([
            r.time_index.to_string(),
            r.mean.to_string(),
            opt(r.variance),
            opt(r.observed),
            flag(r.imputed).to_string(),
        ])
        .map_err(e)?;
    }
    wtr.flush().map_err(|e| Error::Parse(format!("predictions: {e}")))
}

pub fn read_predictions<R: Read>(r: R, context: &str) -> Result<Vec<PredictionRow>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(context, e))?.clone();
    expect_prefix(context, &headers, &["time_index", "mean", "variance", "observed", "imputed"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(context, e))?;
            Ok(PredictionRow {
                time_index: parse_int(context, &rec, 0, "time_index")?,
                mean: parse_f64(context, &rec, 1, "mean")?,
                variance: parse_opt_f64(context, &rec, 2, "variance")?,
                observed: parse_opt_f64(context, &rec, 3, "observed")?,
                imputed: parse_flag(context, &rec, 4, "imputed")?,
            })
        })
        .collect()
}

/// One line of plot data: the target with a ±2σ band around the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub time_index: i64,
    pub target: Option<f64>,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub imputed: bool,
}

impl PlotRow {
    pub fn from_prediction(p: &Prediction<f64>, target: Option<f64>, imputed: bool) -> Self {
        let band = 2.0 * p.std_dev();
        Self { time_index: p.time_index, target, mean: p.mean, lower: p.mean - band, upper: p.mean + band, imputed }
    }
}

pub fn write_plot<W: Write>(w: W, rows: &[PlotRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let e = |e| csv_err("plot", e);
    wtr.write_record(["time_index", "target", "mean", "lower", "upper", "imputed"]).map_err(e)?;
    for r in rows {
        wtr.write_record([
            r.time_index.to_string(),
            opt(r.target),
            r.mean.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            flag(r.imputed).to_string(),
        ])
        .map_err(e)?;
    }
    wtr.flush().map_err(|e| Error::Parse(format!("plot: {e}")))
}

pub fn read_plot<R: Read>(r: R, context: &str) -> Result<Vec<PlotRow>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(context, e))?.clone();
    expect_prefix(context, &headers, &["time_index", "target", "mean", "lower", "upper", "imputed"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(context, e))?;
            Ok(PlotRow {
                time_index: parse_int(context, &rec, 0, "time_index")?,
                target: parse_opt_f64(context, &rec, 1, "target")?,
                mean: parse_f64(context, &rec, 2, "mean")?,
                lower: parse_f64(context, &rec, 3, "lower")?,
                upper: parse_f64(context, &rec, 4, "upper")?,
                imputed: parse_flag(context, &rec, 5, "imputed")?,
            })
        })
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: for<'de> Deserialize<'de>>(s: &str, context: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Parse(format!("{context}: {e}")))
}
