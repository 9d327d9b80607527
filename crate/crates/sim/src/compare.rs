//! Side-by-side table of several runs over the same query schedule.

use std::io::Write;

use crate::export::{RunSummary, SUMMARY_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("need at least two runs to compare, got {0}")]
    TooFew(usize),
    #[error("run {index} does not match the first run: {reason}")]
    SchemaMismatch { index: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `(min, q1, median, q3, max)` with linear interpolation between ranks.
pub fn quartiles(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some([v[0], at(0.25), at(0.5), at(0.75), v[v.len() - 1]])
}

fn check(runs: &[RunSummary]) -> Result<(), CompareError> {
    if runs.len() < 2 {
        return Err(CompareError::TooFew(runs.len()));
    }
    let first = &runs[0];
    for (i, r) in runs.iter().enumerate() {
        if r.version != SUMMARY_VERSION {
            return Err(CompareError::SchemaMismatch { index: i, reason: format!("summary version {}", r.version) });
        }
        let ids = |s: &RunSummary| s.queries.iter().map(|q| (q.query_id, q.product.clone())).collect::<Vec<_>>();
        if ids(r) != ids(first) {
            return Err(CompareError::SchemaMismatch { index: i, reason: "query schedules differ".into() });
        }
    }
    Ok(())
}

fn labels(runs: &[RunSummary]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in runs {
        let base = r.system.name().to_string();
        let n = out.iter().filter(|l| l.split('#').next() == Some(base.as_str())).count();
        out.push(if n == 0 { base } else { format!("{base}#{}", n + 1) });
    }
    out
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One column per run, then one delta column per later run against the
/// first. Rows: budget, RMSRE quartiles over executed queries, then each
/// query's RMSRE.
pub fn compare<W: Write>(w: W, runs: &[RunSummary]) -> Result<(), CompareError> {
    check(runs)?;
    let names = labels(runs);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["metric".to_string()];
    header.extend(names.iter().cloned());
    header.extend(names[1..].iter().map(|n| format!("delta_{n}")));
    out.write_record(&header)?;

    let mut rows: Vec<(String, Vec<Option<f64>>)> = vec![
        ("avg_budget".into(), runs.iter().map(|r| Some(r.avg_budget)).collect()),
        ("max_budget".into(), runs.iter().map(|r| Some(r.max_budget)).collect()),
        ("executed_queries".into(), runs.iter().map(|r| Some(r.queries.iter().filter(|q| q.executed).count() as f64)).collect()),
    ];
    let qs: Vec<Option<[f64; 5]>> =
        runs.iter().map(|r| quartiles(&r.queries.iter().filter_map(|q| q.rmsre).collect::<Vec<_>>())).collect();
    for (i, name) in ["rmsre_min", "rmsre_q1", "rmsre_median", "rmsre_q3", "rmsre_max"].iter().enumerate() {
        rows.push((name.to_string(), qs.iter().map(|q| q.map(|q| q[i])).collect()));
    }
    for (i, q) in runs[0].queries.iter().enumerate() {
        rows.push((format!("query_{}_rmsre", q.query_id), runs.iter().map(|r| r.queries[i].rmsre).collect()));
    }
    for (metric, values) in rows {
        let mut rec = vec![metric];
        rec.extend(values.iter().map(|v| cell(*v)));
        rec.extend(values[1..].iter().map(|v| cell(v.zip(values[0]).map(|(a, b)| a - b))));
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
