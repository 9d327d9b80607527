//! Error and budget metrics over completed queries.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aggregation::QueryResult;
use crate::budget::FilterKey;
use crate::fixed::Fixed;
use crate::model::EpochId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("true value is zero in coordinate {0}")]
    ZeroTruth(usize),
    #[error("true and biased values have different dimensions")]
    DimensionMismatch,
    #[error("probability must lie strictly between 0 and 1")]
    InvalidProbability,
    #[error("kappa must be positive")]
    InvalidKappa,
    #[error("scope is empty")]
    EmptyScope,
}

/// Analytic RMSRE `sqrt(((Q̃−Q)² + σ²)/Q²)` per coordinate, combined by RMS.
pub fn rmsre_parts(true_value: &[f64], biased_value: &[f64], sigma: f64) -> Result<f64, MetricsError> {
    if true_value.len() != biased_value.len() || true_value.is_empty() {
        return Err(MetricsError::DimensionMismatch);
    }
    let mut acc = 0.0;
    for (i, (q, b)) in true_value.iter().zip(biased_value).enumerate() {
        if *q == 0.0 {
            return Err(MetricsError::ZeroTruth(i));
        }
        acc += ((b - q) * (b - q) + sigma * sigma) / (q * q);
    }
    Ok(libm::sqrt(acc / true_value.len() as f64))
}

pub fn rmsre(result: &QueryResult) -> Result<f64, MetricsError> {
    rmsre_parts(&result.true_value, &result.biased_value, result.sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub bias_bound: f64,
    pub noise_tail: f64,
    pub estimated_rmsre: f64,
    pub beta: f64,
}

/// High-probability bound on `‖E[M] − Q‖₁` from the noised bias count `m0`,
/// and a relative error estimate against the noisy answer.
pub fn bias_error_bound(
    m0: f64,
    kappa: f64,
    sigma: f64,
    beta: f64,
    delta_max: f64,
    noisy_value: &[f64],
) -> Result<ErrorBound, MetricsError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(MetricsError::InvalidProbability);
    }
    if kappa.is_nan() || kappa <= 0.0 {
        return Err(MetricsError::InvalidKappa);
    }
    let noise_tail = sigma * libm::log(1.0 / beta) / core::f64::consts::SQRT_2;
    let bias_bound = ((m0.max(0.0) + noise_tail) / kappa * delta_max).max(0.0);
    let magnitude: f64 = noisy_value.iter().map(|x| x.abs()).sum();
    Ok(ErrorBound { bias_bound, noise_tail, estimated_rmsre: (bias_bound + noise_tail) / magnitude.max(1.0), beta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetStats {
    pub avg: f64,
    pub max: f64,
    pub count: usize,
    /// Sorted `(consumed, fraction of scope ≤ consumed)` pairs.
    pub cdf: Vec<(f64, f64)>,
}

/// Average, maximum and CDF of consumption over `scope`. Keys absent from
/// the snapshot count as zero.
pub fn budget_stats<K: Ord>(snapshot: &BTreeMap<K, Fixed>, scope: &[K]) -> Result<BudgetStats, MetricsError> {
    if scope.is_empty() {
        return Err(MetricsError::EmptyScope);
    }
    let mut values: Vec<Fixed> = scope.iter().map(|k| snapshot.get(k).copied().unwrap_or(Fixed::ZERO)).collect();
    values.sort();
    let total: i128 = values.iter().map(|v| v.raw() as i128).sum();
    let n = values.len();
    let avg = total as f64 / Fixed::SCALE as f64 / n as f64;
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        let point = (v.to_f64(), (i + 1) as f64 / n as f64);
        match cdf.last_mut() {
            Some(last) if last.0 == point.0 => *last = point,
            _ => cdf.push(point),
        }
    }
    Ok(BudgetStats { avg, max: values[n - 1].to_f64(), count: n, cdf })
}

/// Spreads per-epoch central consumption onto every device-epoch in scope.
pub fn replicate_central(central: &BTreeMap<(String, EpochId), Fixed>, scope: &[FilterKey]) -> BTreeMap<FilterKey, Fixed> {
    scope
        .iter()
        .filter_map(|k| central.get(&(k.querier.clone(), k.epoch)).map(|v| (k.clone(), *v)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub accepted: Vec<(T, ErrorBound)>,
    pub rejected: Vec<(T, ErrorBound)>,
}

/// Accepts results whose estimated RMSRE is at most `cutoff`. Rejection is
/// post-processing and returns no budget.
pub fn accept_by_cutoff<T>(results: Vec<(T, ErrorBound)>, cutoff: f64) -> Partition<T> {
    let (accepted, rejected) = results.into_iter().partition(|(_, b)| b.estimated_rmsre <= cutoff);
    Partition { accepted, rejected }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rmsre_examples() {
        assert_eq!(rmsre_parts(&[100.0], &[100.0], 0.0).unwrap(), 0.0);
        assert!((rmsre_parts(&[100.0], &[90.0], 0.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((rmsre_parts(&[100.0], &[100.0], 2.0).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(rmsre_parts(&[0.0], &[1.0], 0.0), Err(MetricsError::ZeroTruth(0)));
    }

    #[test]
    fn bound_examples() {
        assert_eq!(bias_error_bound(5.0, 1.0, 0.0, 0.05, 2.0, &[1.0]).unwrap().bias_bound, 10.0);
        assert_eq!(bias_error_bound(0.0, 1.0, 0.0, 0.05, 2.0, &[1.0]).unwrap().bias_bound, 0.0);
        let neg = bias_error_bound(-3.0, 0.5, 2.0, 0.05, 5.0, &[100.0]).unwrap();
        let tail = 2.0 * libm::log(20.0) / core::f64::consts::SQRT_2;
        assert!((neg.bias_bound - tail / 0.5 * 5.0).abs() < 1e-12);
        assert!((neg.estimated_rmsre - (neg.bias_bound + tail) / 100.0).abs() < 1e-12);
        assert_eq!(bias_error_bound(1.0, 1.0, 1.0, 1.0, 1.0, &[]), Err(MetricsError::InvalidProbability));
    }

    #[test]
    fn stats_examples() {
        let scope: Vec<u32> = (0..10).collect();
        let empty: BTreeMap<u32, Fixed> = BTreeMap::new();
        let s = budget_stats(&empty, &scope).unwrap();
        assert_eq!((s.avg, s.max), (0.0, 0.0));
        let one: BTreeMap<u32, Fixed> = [(3, Fixed::from_raw(700_000_000))].into_iter().collect();
        let s = budget_stats(&one, &scope).unwrap();
        assert!((s.avg - 0.07).abs() < 1e-15);
        assert_eq!(s.max, 0.7);
        assert_eq!(s.cdf, vec![(0.0, 0.9), (0.7, 1.0)]);
        assert_eq!(budget_stats(&one, &[]), Err(MetricsError::EmptyScope));
    }

    #[test]
    fn cutoff_partitions() {
        let b = |e| ErrorBound { bias_bound: 0.0, noise_tail: 0.0, estimated_rmsre: e, beta: 0.05 };
        let items = vec![(1, b(0.01)), (2, b(0.2)), (3, b(0.0))];
        assert_eq!(accept_by_cutoff(items.clone(), f64::INFINITY).accepted.len(), 3);
        let p = accept_by_cutoff(items, 0.0);
        assert_eq!(p.accepted.iter().map(|x| x.0).collect::<Vec<_>>(), vec![3]);
    }
}
