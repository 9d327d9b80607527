//! Result, snapshot, metrics and CDF files.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use cookie_monster_core::metrics::Partition;
use cookie_monster_core::{accept_by_cutoff, BudgetStats, EpochId};

use crate::scenario::{QueryRecord, QueryStatus, ScenarioOutcome, System};

pub const SUMMARY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub query_id: u64,
    pub product: String,
    pub status: String,
    pub noisy: Vec<f64>,
    #[serde(rename = "true")]
    pub true_value: Vec<f64>,
    pub biased: Vec<f64>,
    pub sigma: f64,
    pub batch: usize,
    pub bias_count_noisy: Option<f64>,
    pub epsilon: f64,
    pub payload_width: usize,
    pub first_exhausted_epoch: Option<EpochId>,
}

impl ResultLine {
    pub fn from_record(r: &QueryRecord, outcome: &ScenarioOutcome) -> Self {
        let (status, first_exhausted_epoch) = match &r.status {
            QueryStatus::Executed => ("executed", None),
            QueryStatus::Rejected { first_exhausted_epoch } => ("rejected", Some(*first_exhausted_epoch)),
        };
        let res = r.result.as_ref();
        ResultLine {
            query_id: r.query_id,
            product: r.product.clone(),
            status: status.into(),
            noisy: res.map(|x| x.noisy_value.clone()).unwrap_or_default(),
            true_value: res.map(|x| x.true_value.clone()).unwrap_or_default(),
            biased: res.map(|x| x.biased_value.clone()).unwrap_or_default(),
            sigma: outcome.sigma,
            batch: outcome.batches.get(r.query_id as usize).map_or(0, Vec::len),
            bias_count_noisy: res.and_then(|x| x.bias_count_noisy),
            epsilon: outcome.epsilon,
            payload_width: r.payload_width,
            first_exhausted_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotLine {
    pub querier: String,
    /// Absent for the centralized per-epoch filters.
    pub device: Option<u64>,
    pub epoch: u64,
    pub consumed: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub query_id: u64,
    pub rmsre_true: Option<f64>,
    pub rmsre_estimated: Option<f64>,
    pub accepted: bool,
    pub bias_bound: Option<f64>,
    /// Noised number of flagged reports.
    pub bias_reports_noisy: Option<f64>,
}

fn jsonl<W: Write, T: Serialize>(mut w: W, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_results<W: Write>(w: W, outcome: &ScenarioOutcome) -> io::Result<()> {
    jsonl(w, outcome.records.iter().map(|r| ResultLine::from_record(r, outcome)))
}

pub fn snapshot_lines(outcome: &ScenarioOutcome) -> Vec<SnapshotLine> {
    let cap = outcome.capacities.to_f64();
    match outcome.system {
        System::IpaLike => outcome
            .central_snapshot
            .iter()
            .map(|((q, e), v)| SnapshotLine { querier: q.clone(), device: None, epoch: e.0, consumed: v.to_f64(), capacity: cap })
            .collect(),
        _ => outcome
            .snapshot
            .iter()
            .map(|(k, v)| SnapshotLine {
                querier: k.querier.clone(),
                device: Some(k.device.0),
                epoch: k.epoch.0,
                consumed: v.to_f64(),
                capacity: cap,
            })
            .collect(),
    }
}

pub fn write_snapshot<W: Write>(w: W, outcome: &ScenarioOutcome) -> io::Result<()> {
    jsonl(w, snapshot_lines(outcome))
}

/// Per-query metrics. Queries without an error estimate are always
/// accepted; with no cutoff every query is.
pub fn metrics_lines(outcome: &ScenarioOutcome, cutoff: Option<f64>) -> Vec<MetricsLine> {
    let executed: Vec<&QueryRecord> = outcome.executed().collect();
    let with_bound: Vec<(u64, _)> = executed.iter().filter_map(|r| r.bound.map(|b| (r.query_id, b))).collect();
    let Partition { rejected, .. } = accept_by_cutoff(with_bound, cutoff.unwrap_or(f64::INFINITY));
    let kappa = outcome.kappa.map(|k| k.to_f64());
    executed
        .iter()
        .map(|r| MetricsLine {
            query_id: r.query_id,
            rmsre_true: r.rmsre,
            rmsre_estimated: r.bound.map(|b| b.estimated_rmsre),
            accepted: !rejected.iter().any(|(id, _)| *id == r.query_id),
            bias_bound: r.bound.map(|b| b.bias_bound),
            bias_reports_noisy: r
                .result
                .as_ref()
                .and_then(|x| x.bias_count_noisy)
                .zip(kappa)
                .map(|(m, k)| m / k),
        })
        .collect()
}

pub fn write_metrics<W: Write>(w: W, outcome: &ScenarioOutcome, cutoff: Option<f64>) -> io::Result<()> {
    jsonl(w, metrics_lines(outcome, cutoff))
}

pub fn write_cdf<W: Write>(w: W, stats: &BudgetStats) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["consumed", "fraction"])?;
    for (v, f) in &stats.cdf {
        out.write_record([v.to_string(), f.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryQuery {
    pub query_id: u64,
    pub product: String,
    pub executed: bool,
    pub rmsre: Option<f64>,
}

/// Per-run digest consumed by `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: u32,
    pub system: System,
    pub epsilon: f64,
    pub sigma: f64,
    pub avg_budget: f64,
    pub max_budget: f64,
    pub scope: usize,
    pub queries: Vec<SummaryQuery>,
}

impl RunSummary {
    pub fn new(outcome: &ScenarioOutcome) -> Self {
        let stats = outcome.budget_stats();
        RunSummary {
            version: SUMMARY_VERSION,
            system: outcome.system,
            epsilon: outcome.epsilon,
            sigma: outcome.sigma,
            avg_budget: stats.as_ref().map_or(0.0, |s| s.avg),
            max_budget: stats.as_ref().map_or(0.0, |s| s.max),
            scope: stats.as_ref().map_or(0, |s| s.count),
            queries: outcome
                .records
                .iter()
                .map(|r| SummaryQuery { query_id: r.query_id, product: r.product.clone(), executed: r.is_executed(), rmsre: r.rmsre })
                .collect(),
        }
    }
}
