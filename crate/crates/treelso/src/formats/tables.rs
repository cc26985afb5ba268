//! CSV tables: dataset scores, trajectories and metric reports.

use std::path::Path;

use serde::{Deserialize, Serialize};
use treelso_core::lso::Trajectory;

use super::{read_file, write_file};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub f_value: f64,
    pub surrogate_value: f64,
    pub top10: Option<f64>,
    pub top50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub set_a: String,
    pub set_b: String,
    pub feature_map: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Usage(e.to_string()))
}

/// Header-only output when `rows` is empty.
pub fn save<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let bytes = if rows.is_empty() {
        format!("{}\n", header.join(",")).into_bytes()
    } else {
        to_csv(rows)?
    };
    write_file(path, &bytes)
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_file(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::parse(path, e.to_string()))
}

pub const SCORE_HEADER: &[&str] = &["index", "score"];
pub const TRAJECTORY_HEADER: &[&str] = &["iter", "f_value", "surrogate_value", "top10", "top50"];
pub const METRIC_HEADER: &[&str] = &["metric", "set_a", "set_b", "feature_map", "value"];
pub const SUMMARY_HEADER: &[&str] = &["metric", "mean", "std"];

pub fn score_rows(scores: &[f64]) -> Vec<ScoreRow> {
    scores
        .iter()
        .enumerate()
        .map(|(index, &score)| ScoreRow { index, score })
        .collect()
}

/// Scores in index order; indices must be `0..n`.
pub fn load_scores(path: &Path) -> Result<Vec<f64>> {
    let rows: Vec<ScoreRow> = load(path)?;
    for (i, r) in rows.iter().enumerate() {
        if r.index != i {
            return Err(CliError::parse(path, format!("row {i} has index {}", r.index)));
        }
    }
    Ok(rows.into_iter().map(|r| r.score).collect())
}

pub fn trajectory_rows(t: &Trajectory) -> Vec<TrajectoryRow> {
    let top10 = t.top10();
    let top50 = t.top50();
    t.records
        .iter()
        .enumerate()
        .map(|(i, r)| TrajectoryRow {
            iter: r.iteration,
            f_value: r.f_value,
            surrogate_value: r.surrogate_value,
            top10: top10[i],
            top50: top50[i],
        })
        .collect()
}
