//! Trusted aggregator: nonce deduplication, summation and Laplace noise.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::device::{AttributionReport, Nonce};
use crate::fixed::Fixed;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregationError {
    #[error("report nonce {0} was already submitted")]
    DuplicateNonce(Nonce),
    #[error("report payload has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("noise scale must be finite and non-negative")]
    InvalidSigma,
    #[error("probabilities must lie strictly between 0 and 1")]
    InvalidProbability,
    #[error("calibration inputs must be positive")]
    NonPositiveInput,
    #[error("epsilon must be positive")]
    ZeroEpsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: u64,
    /// Biased value plus noise, bias coordinate excluded.
    pub noisy_value: Vec<f64>,
    /// Unbiased answer from a shadow execution with unlimited budgets.
    pub true_value: Vec<f64>,
    /// Sum of the actual payloads before noise.
    pub biased_value: Vec<f64>,
    /// Noised sum of the bias coordinates, in κ-scaled units.
    pub bias_count_noisy: Option<f64>,
    pub bias_count_true: Option<f64>,
    pub sigma: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl QueryResult {
    pub fn with_truth(mut self, true_value: Vec<f64>) -> Self {
        self.true_value = true_value;
        self
    }
}

/// Laplace sample with scale `b`.
pub fn sample_laplace<R: RngCore + ?Sized>(rng: &mut R, b: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    // Uniform on the open interval (0, 1).
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    let centered = u - 0.5;
    let mag = -b * libm::log(1.0 - 2.0 * centered.abs());
    if centered < 0.0 {
        -mag
    } else {
        mag
    }
}

/// Noise substream for one query: the seed selects the key, the query index
/// selects the ChaCha stream.
pub fn query_rng(seed: u64, query_index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(query_index);
    rng
}

fn check_batch(reports: &[AttributionReport]) -> Result<usize, AggregationError> {
    let mut seen = BTreeSet::new();
    let dim = reports.first().map_or(0, |r| r.payload.len());
    let bias = reports.first().is_some_and(|r| r.has_bias_coordinate);
    for r in reports {
        if !seen.insert(r.nonce) {
            return Err(AggregationError::DuplicateNonce(r.nonce));
        }
        if r.payload.len() != dim || r.has_bias_coordinate != bias {
            return Err(AggregationError::DimensionMismatch { expected: dim, found: r.payload.len() });
        }
    }
    Ok(dim)
}

/// Sums payloads and adds i.i.d. Laplace noise with standard deviation
/// `sigma` to each coordinate.
pub fn answer_query<R: RngCore + ?Sized>(
    reports: &[AttributionReport],
    sigma: f64,
    rng: &mut R,
) -> Result<QueryResult, AggregationError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(AggregationError::InvalidSigma);
    }
    let dim = check_batch(reports)?;
    let mut sum = vec![Fixed::ZERO; dim];
    for r in reports {
        for (s, x) in sum.iter_mut().zip(&r.payload) {
            *s = s.saturating_add(*x);
        }
    }
    let b = sigma / core::f64::consts::SQRT_2;
    let biased: Vec<f64> = sum.iter().map(|x| x.to_f64()).collect();
    let noisy: Vec<f64> = biased.iter().map(|x| x + sample_laplace(rng, b)).collect();
    let has_bias = reports.first().is_some_and(|r| r.has_bias_coordinate);
    let (bias_count_noisy, bias_count_true, noisy_value, biased_value) = if has_bias {
        (Some(noisy[0]), Some(biased[0]), noisy[1..].to_vec(), biased[1..].to_vec())
    } else {
        (None, None, noisy, biased)
    };
    Ok(QueryResult {
        query_id: 0,
        noisy_value,
        true_value: Vec::new(),
        biased_value,
        bias_count_noisy,
        bias_count_true,
        sigma,
        epsilon: 0.0,
        batch_size: reports.len(),
    })
}

/// Nonces already consumed by the aggregator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NonceRegistry {
    seen: BTreeSet<Nonce>,
}

impl NonceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers every nonce of the batch, or none if any was seen before
    /// or repeats within the batch.
    pub fn register_all<'a, I>(&mut self, nonces: I) -> Result<(), AggregationError>
    where
        I: IntoIterator<Item = &'a Nonce>,
    {
        let mut batch = BTreeSet::new();
        for n in nonces {
            if self.seen.contains(n) || !batch.insert(*n) {
                return Err(AggregationError::DuplicateNonce(*n));
            }
        }
        self.seen.extend(batch);
        Ok(())
    }

    pub fn contains(&self, nonce: &Nonce) -> bool {
        self.seen.contains(nonce)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Aggregation service with exactly-once report semantics across queries.
#[derive(Debug, Clone)]
pub struct Aggregator {
    seed: u64,
    registry: NonceRegistry,
}

impl Aggregator {
    pub fn new(seed: u64) -> Self {
        Aggregator { seed, registry: NonceRegistry::new() }
    }

    pub fn registry(&self) -> &NonceRegistry {
        &self.registry
    }

    /// Answers query `query_id` with noise from that query's substream. A
    /// batch carrying any replayed nonce is refused as a whole.
    pub fn execute(
        &mut self,
        query_id: u64,
        reports: &[AttributionReport],
        sigma: f64,
        epsilon: f64,
    ) -> Result<QueryResult, AggregationError> {
        check_batch(reports)?;
        let mut registry = self.registry.clone();
        registry.register_all(reports.iter().map(|r| &r.nonce))?;
        let mut result = answer_query(reports, sigma, &mut query_rng(self.seed, query_id))?;
        result.query_id = query_id;
        result.epsilon = epsilon;
        self.registry = registry;
        Ok(result)
    }
}

/// `ε = Δ·ln(1/β) / (α·B·c̃)`, for `α ∈ (0, 1]` and `β ∈ (0, 1)`.
pub fn calibrate_epsilon(delta: f64, alpha: f64, beta: f64, batch: u64, c_tilde: f64) -> Result<f64, AggregationError> {
    if !(alpha > 0.0 && alpha <= 1.0 && beta > 0.0 && beta < 1.0) {
        return Err(AggregationError::InvalidProbability);
    }
    if !(delta > 0.0 && c_tilde > 0.0) || batch == 0 {
        return Err(AggregationError::NonPositiveInput);
    }
    Ok(delta * libm::log(1.0 / beta) / (alpha * batch as f64 * c_tilde))
}

/// `σ = √2·Δ(Q)/ε`.
pub fn sigma_from_epsilon(epsilon: f64, query_global_sensitivity: f64) -> Result<f64, AggregationError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(AggregationError::ZeroEpsilon);
    }
    Ok(core::f64::consts::SQRT_2 * query_global_sensitivity / epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeviceId;

    fn report(n: u128, payload: &[i64]) -> AttributionReport {
        AttributionReport {
            nonce: Nonce(n),
            payload: payload.iter().map(|x| Fixed::from_int(*x)).collect(),
            device: DeviceId(n as u64),
            request_ref: 0,
            epsilon: Fixed::ONE,
            has_bias_coordinate: false,
        }
    }

    #[test]
    fn zero_noise_sum() {
        let r = answer_query(&[report(1, &[70, 0]), report(2, &[30, 0])], 0.0, &mut query_rng(0, 0)).unwrap();
        assert_eq!(r.noisy_value, vec![100.0, 0.0]);
    }

    #[test]
    fn duplicate_and_dimension_errors() {
        let dup = answer_query(&[report(1, &[1]), report(1, &[2])], 0.0, &mut query_rng(0, 0));
        assert_eq!(dup.unwrap_err(), AggregationError::DuplicateNonce(Nonce(1)));
        let dim = answer_query(&[report(1, &[1]), report(2, &[2, 3])], 0.0, &mut query_rng(0, 0));
        assert!(matches!(dim, Err(AggregationError::DimensionMismatch { .. })));
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let reports: Vec<_> = (0..1000).map(|i| report(i, &[1])).collect();
        let a = answer_query(&reports, 5.0, &mut query_rng(42, 3)).unwrap();
        let b = answer_query(&reports, 5.0, &mut query_rng(42, 3)).unwrap();
        assert_eq!(a.noisy_value[0].to_bits(), b.noisy_value[0].to_bits());
        let c = answer_query(&reports, 5.0, &mut query_rng(42, 4)).unwrap();
        assert_ne!(a.noisy_value[0], c.noisy_value[0]);
    }

    #[test]
    fn aggregator_replay_is_refused_atomically() {
        let mut agg = Aggregator::new(1);
        agg.execute(0, &[report(1, &[1]), report(2, &[1])], 0.0, 1.0).unwrap();
        let err = agg.execute(1, &[report(3, &[1]), report(2, &[1])], 0.0, 1.0).unwrap_err();
        assert_eq!(err, AggregationError::DuplicateNonce(Nonce(2)));
        assert!(!agg.registry().contains(&Nonce(3)));
        let next = agg.execute(1, &[report(3, &[1])], 0.0, 1.0).unwrap();
        assert_eq!(next.query_id, 1);
    }

    #[test]
    fn calibration() {
        let e = core::f64::consts::E;
        assert!((calibrate_epsilon(1.0, 1.0, 1.0 / e, 1, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((calibrate_epsilon(1.0, 0.05, 0.01, 2000, 1.0).unwrap() - 0.046_051_701_859_880_92).abs() < 1e-15);
        assert!((calibrate_epsilon(100.0, 0.05, 0.01, 2000, 50.0).unwrap() - 0.092_103_403_719_761_84).abs() < 1e-15);
        assert_eq!(calibrate_epsilon(1.0, 1.5, 0.5, 1, 1.0), Err(AggregationError::InvalidProbability));
        let s = sigma_from_epsilon(1.0, 100.0).unwrap();
        assert!((s - 100.0 * core::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((sigma_from_epsilon(core::f64::consts::SQRT_2, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(sigma_from_epsilon(0.0, 1.0), Err(AggregationError::ZeroEpsilon));
    }
}
