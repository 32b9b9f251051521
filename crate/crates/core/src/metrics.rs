//! Query statistics over a set of runs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::orchestrator::RunRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    /// Lower median.
    pub t_median: f64,
    pub t_mean: f64,
    /// Population standard deviation.
    pub t_sigma: f64,
    pub t_max: f64,
    pub r_f: usize,
}

/// Query count charged to a run: its queries to success, or the full budget.
pub fn charged_queries(r: &RunRecord) -> u64 {
    match r.queries_to_success {
        Some(q) if r.success => q,
        _ => r.budget,
    }
}

pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Statistics over raw per-run query counts and failure flags.
pub fn aggregate_counts(queries: &[u64], failures: usize) -> Result<Aggregate> {
    if queries.is_empty() {
        return Err(Error::State("cannot aggregate zero runs".into()));
    }
    let t: Vec<f64> = queries.iter().map(|&q| q as f64).collect();
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Aggregate {
        runs: t.len(),
        t_median: lower_median(&t).expect("nonempty"),
        t_mean: mean,
        t_sigma: var.sqrt(),
        t_max: t.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        r_f: failures,
    })
}

/// Failures count at their full budget.
pub fn aggregate(records: &[RunRecord]) -> Result<Aggregate> {
    let q: Vec<u64> = records.iter().map(charged_queries).collect();
    aggregate_counts(&q, records.iter().filter(|r| !r.success).count())
}
