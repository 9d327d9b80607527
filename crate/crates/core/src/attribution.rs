//! Querier-defined attribution: relevant-event selection, attribution
//! logic, clipping and fixed-dimension output.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fixed::Fixed;
use crate::model::{EpochId, Event, EventPredicate, Timestamp};

/// Events of one epoch, borrowed from a database.
pub type EventSet<'a> = Vec<&'a Event>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttributionError {
    #[error("expected {expected} epoch event sets, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("attribution request has no epochs")]
    EmptyWindow,
    #[error("requested epsilon must be positive")]
    NonPositiveEpsilon,
    #[error("report sensitivity must satisfy 0 < report <= query sensitivity")]
    InvalidSensitivity,
    #[error("declared report sensitivity {declared} is below the provable bound {bound} for this logic")]
    UnsoundReportSensitivity { declared: Fixed, bound: Fixed },
    #[error("attribution logic must have a positive output dimension")]
    ZeroDimension,
    #[error("bin index {bin} is outside the output dimension {dimension}")]
    BinOutOfRange { bin: usize, dimension: usize },
    #[error("attribution weights and conversion values must be non-negative")]
    NegativeWeight,
    #[error("request window repeats an epoch")]
    RepeatedEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PNorm {
    #[default]
    L1,
    L2,
}

impl PNorm {
    pub fn norm(self, v: &[Fixed]) -> Fixed {
        match self {
            PNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            PNorm::L2 => {
                let sq = sum_squares(v);
                Fixed::from_raw(isqrt(sq) as i64)
            }
        }
    }
}

fn sum_squares(v: &[Fixed]) -> u128 {
    v.iter().map(|x| (x.raw().unsigned_abs() as u128).pow(2)).sum()
}

fn isqrt(n: u128) -> u128 {
    if n == 0 {
        return 0;
    }
    let mut x = libm::sqrt(n as f64) as u128;
    while x * x > n {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= n {
        x += 1;
    }
    x
}

/// Maps an event to a histogram bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum BinSpec {
    /// Every event lands in the same bin.
    Constant { bin: usize },
    /// Bin is the position of the event's `key` attribute within `values`;
    /// events without a listed value go to `fallback`.
    ByAttribute { key: String, values: Vec<String>, fallback: usize },
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec::Constant { bin: 0 }
    }
}

impl BinSpec {
    pub fn bin_of(&self, event: &Event) -> usize {
        match self {
            BinSpec::Constant { bin } => *bin,
            BinSpec::ByAttribute { key, values, fallback } => event
                .attr(key)
                .and_then(|v| values.iter().position(|x| x == v))
                .unwrap_or(*fallback),
        }
    }

    fn max_bin(&self) -> usize {
        match self {
            BinSpec::Constant { bin } => *bin,
            BinSpec::ByAttribute { values, fallback, .. } => values.len().saturating_sub(1).max(*fallback),
        }
    }
}

/// Per-event weight `a_F(f)` of a histogram attribution function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum WeightRule {
    /// The latest relevant event receives the whole cap.
    LastTouch,
    /// The cap is split equally across all relevant events.
    EqualSplit,
    /// Every relevant event receives the same fixed weight.
    PerEvent { weight: Fixed },
    /// Weight read from a numeric event attribute; missing or malformed
    /// values count as zero.
    AttrWeight { key: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum AttributionLogic {
    /// Full conversion value to the latest relevant event, in its bin.
    LastTouch {
        #[serde(default)]
        bins: BinSpec,
        max_bins: usize,
    },
    /// Conversion value split across the `max_impressions` most recent
    /// relevant events; slot `i` holds the `i`-th most recent one's share.
    EqualCredit { max_impressions: usize },
    /// `sum_f a_F(f) * H(f)` with total weight capped at `cap`.
    HistogramSum {
        weights: WeightRule,
        #[serde(default)]
        bins: BinSpec,
        dimension: usize,
        cap: Fixed,
    },
}

impl AttributionLogic {
    pub fn dimension(&self) -> usize {
        match self {
            AttributionLogic::LastTouch { max_bins, .. } => *max_bins,
            AttributionLogic::EqualCredit { max_impressions } => *max_impressions,
            AttributionLogic::HistogramSum { dimension, .. } => *dimension,
        }
    }

    pub fn last_touch_scalar() -> Self {
        AttributionLogic::LastTouch { bins: BinSpec::default(), max_bins: 1 }
    }

    fn validate(&self) -> Result<(), AttributionError> {
        let m = self.dimension();
        if m == 0 {
            return Err(AttributionError::ZeroDimension);
        }
        let bins = match self {
            AttributionLogic::LastTouch { bins, .. } => Some(bins),
            AttributionLogic::HistogramSum { bins, weights, cap, .. } => {
                if cap.is_negative() {
                    return Err(AttributionError::NegativeWeight);
                }
                if let WeightRule::PerEvent { weight } = weights {
                    if weight.is_negative() {
                        return Err(AttributionError::NegativeWeight);
                    }
                }
                Some(bins)
            }
            AttributionLogic::EqualCredit { .. } => None,
        };
        if let Some(b) = bins {
            if b.max_bin() >= m {
                return Err(AttributionError::BinOutOfRange { bin: b.max_bin(), dimension: m });
            }
        }
        Ok(())
    }
}

/// Querier-supplied parameters for one attribution report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionRequest {
    pub querier_site: String,
    /// Attribution window, chronological.
    pub epochs: Vec<EpochId>,
    pub relevance: EventPredicate,
    pub logic: AttributionLogic,
    pub conversion_value: Fixed,
    pub report_global_sensitivity: Fixed,
    pub query_global_sensitivity: Fixed,
    pub requested_epsilon: Fixed,
    #[serde(default)]
    pub pnorm: PNorm,
}

impl AttributionRequest {
    /// Window length `k`.
    pub fn window_len(&self) -> usize {
        self.epochs.len()
    }

    /// Output dimension `m` of the attribution vector.
    pub fn dimension(&self) -> usize {
        self.logic.dimension()
    }

    /// Device-side sanitization. Besides the structural invariants, the
    /// declared report sensitivity must cover what clipping can actually
    /// guarantee for the requested logic, otherwise multi-epoch losses would
    /// be under-charged.
    pub fn validate(&self) -> Result<(), AttributionError> {
        if self.epochs.is_empty() {
            return Err(AttributionError::EmptyWindow);
        }
        if self.epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AttributionError::RepeatedEpoch);
        }
        if !self.requested_epsilon.is_positive() {
            return Err(AttributionError::NonPositiveEpsilon);
        }
        if !self.report_global_sensitivity.is_positive()
            || self.report_global_sensitivity > self.query_global_sensitivity
        {
            return Err(AttributionError::InvalidSensitivity);
        }
        if self.conversion_value.is_negative() {
            return Err(AttributionError::NegativeWeight);
        }
        self.logic.validate()?;
        let bound = crate::sensitivity::provable_report_sensitivity(self);
        if self.report_global_sensitivity < bound {
            return Err(AttributionError::UnsoundReportSensitivity {
                declared: self.report_global_sensitivity,
                bound,
            });
        }
        Ok(())
    }
}

/// `F ∩ F_A`.
pub fn select_relevant_events<'a>(events: &'a [Event], relevance: &EventPredicate) -> EventSet<'a> {
    events.iter().filter(|e| relevance.matches(e)).collect()
}

/// `A(∅, …, ∅)`: all-zero for every supported logic.
pub fn attribution_output_zero(request: &AttributionRequest) -> Vec<Fixed> {
    vec![Fixed::ZERO; request.dimension()]
}

/// Applies the attribution logic across the window, clips the result to
/// `report_global_sensitivity` in the request's norm, and returns a vector
/// of exactly `m` entries.
///
/// Only relevant events contribute; irrelevant ones in the input are
/// ignored, so `A(F_1..F_k) = A(F_1 ∩ F_A .. F_k ∩ F_A)` by construction.
pub fn compute_attribution(
    per_epoch: &[EventSet<'_>],
    request: &AttributionRequest,
) -> Result<Vec<Fixed>, AttributionError> {
    if per_epoch.len() != request.window_len() {
        return Err(AttributionError::DimensionMismatch { expected: request.window_len(), found: per_epoch.len() });
    }
    let mut relevant: Vec<&Event> =
        per_epoch.iter().flatten().copied().filter(|e| request.relevance.matches(e)).collect();
    // Most recent first; lower id wins among equal timestamps.
    relevant.sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then(a.id.cmp(&b.id)));

    let m = request.dimension();
    let mut out = vec![Fixed::ZERO; m];
    match &request.logic {
        AttributionLogic::LastTouch { bins, .. } => {
            if let Some(latest) = relevant.first() {
                out[bins.bin_of(latest).min(m - 1)] = request.conversion_value;
            }
        }
        AttributionLogic::EqualCredit { max_impressions } => {
            let credited = &relevant[..relevant.len().min(*max_impressions)];
            for (slot, share) in split_evenly(request.conversion_value, credited.len()).into_iter().enumerate() {
                out[slot] = share;
            }
        }
        AttributionLogic::HistogramSum { weights, bins, cap, .. } => {
            let w = histogram_weights(weights, *cap, &relevant);
            let total: Fixed = w.iter().sum();
            let w: Vec<Fixed> = if total > *cap { w.into_iter().map(|x| x.mul_div_floor(*cap, total)).collect() } else { w };
            for (e, weight) in relevant.iter().zip(w) {
                out[bins.bin_of(e).min(m - 1)] += weight;
            }
        }
    }
    clip(&mut out, request.pnorm, request.report_global_sensitivity);
    Ok(out)
}

fn histogram_weights(rule: &WeightRule, cap: Fixed, relevant: &[&Event]) -> Vec<Fixed> {
    match rule {
        WeightRule::LastTouch => {
            let mut w = vec![Fixed::ZERO; relevant.len()];
            if let Some(first) = w.first_mut() {
                *first = cap;
            }
            w
        }
        WeightRule::EqualSplit => split_evenly(cap, relevant.len()),
        WeightRule::PerEvent { weight } => vec![*weight; relevant.len()],
        WeightRule::AttrWeight { key } => relevant
            .iter()
            .map(|e| e.attr(key).and_then(|v| v.parse::<Fixed>().ok()).unwrap_or(Fixed::ZERO).max(Fixed::ZERO))
            .collect(),
    }
}

/// Splits `total` into `n` shares that sum exactly to `total`; the
/// rounding remainder goes to the first share.
fn split_evenly(total: Fixed, n: usize) -> Vec<Fixed> {
    if n == 0 {
        return Vec::new();
    }
    let share = total.div_int_floor(n as i64);
    let mut shares = vec![share; n];
    shares[0] += total - share.times(n as i64);
    shares
}

/// Uniformly scales `v` down so that its `p`-norm is at most `cap`.
pub fn clip(v: &mut [Fixed], pnorm: PNorm, cap: Fixed) {
    let norm = pnorm.norm(v);
    if norm <= cap {
        return;
    }
    match pnorm {
        PNorm::L1 => {
            for x in v.iter_mut() {
                *x = x.mul_div_floor(cap, norm);
            }
        }
        PNorm::L2 => {
            let factor = cap.to_f64() / l2_exact(v);
            for x in v.iter_mut() {
                *x = Fixed::from_raw(libm::floor(x.raw() as f64 * factor) as i64);
            }
            // Float rounding may leave the norm a hair above the cap.
            let cap_sq = (cap.raw() as u128).pow(2);
            while sum_squares(v) > cap_sq {
                for x in v.iter_mut().filter(|x| !x.is_zero()) {
                    *x -= Fixed::from_raw(x.raw().signum());
                }
            }
        }
    }
}

fn l2_exact(v: &[Fixed]) -> f64 {
    libm::sqrt(sum_squares(v) as f64) / Fixed::SCALE as f64
}

/// Latest relevant timestamp across a window, if any.
pub fn latest_relevant(per_epoch: &[EventSet<'_>], relevance: &EventPredicate) -> Option<Timestamp> {
    per_epoch.iter().flatten().filter(|e| relevance.matches(e)).map(|e| e.timestamp).max()
}
