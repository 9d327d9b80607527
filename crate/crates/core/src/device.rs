//! On-device report generation and the report wire format.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::attribution::{compute_attribution, select_relevant_events, AttributionError, AttributionRequest, EventSet};
use crate::budget::{BudgetError, FilterKey, FilterStatus, FilterStorage};
use crate::fixed::Fixed;
use crate::model::{Database, DeviceId, EpochId};
use crate::sensitivity::{individual_sensitivity, loss_for_sensitivity, SensitivityError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeviceError {
    #[error("request rejected by device sanitization: {0}")]
    InvalidRequest(#[from] AttributionError),
    #[error("bias measurement needs a positive kappa")]
    InvalidKappa,
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
}

/// 128-bit report nonce.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nonce(pub u128);

impl fmt::Display for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({self})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// Flag any report that lost an epoch to budget exhaustion.
    #[default]
    General,
    /// Flag only when a dropped epoch could have held the last touch, i.e.
    /// no later epoch of the window still has a relevant event.
    LastTouch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub enabled: bool,
    pub kappa: Fixed,
    #[serde(default)]
    pub mode: BiasMode,
}

impl BiasConfig {
    pub fn disabled() -> Self {
        BiasConfig { enabled: false, kappa: Fixed::ZERO, mode: BiasMode::General }
    }

    pub fn new(kappa: Fixed, mode: BiasMode) -> Self {
        BiasConfig { enabled: true, kappa, mode }
    }

    /// κ at 10% of the query sensitivity.
    pub fn for_query_sensitivity(query_global_sensitivity: Fixed, mode: BiasMode) -> Self {
        Self::new(query_global_sensitivity.div_int_floor(10), mode)
    }

    fn validate(&self) -> Result<(), DeviceError> {
        if self.enabled && !self.kappa.is_positive() {
            return Err(DeviceError::InvalidKappa);
        }
        Ok(())
    }
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self::disabled()
    }
}

/// Nonce and request identifier assigned by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportIds {
    pub nonce: Nonce,
    pub request_ref: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub nonce: Nonce,
    /// Attribution vector, prefixed by the bias coordinate when present.
    pub payload: Vec<Fixed>,
    pub device: DeviceId,
    pub request_ref: u64,
    pub epsilon: Fixed,
    pub has_bias_coordinate: bool,
}

impl AttributionReport {
    pub fn attribution(&self) -> &[Fixed] {
        if self.has_bias_coordinate {
            &self.payload[1..]
        } else {
            &self.payload
        }
    }

    pub fn bias_value(&self) -> Option<Fixed> {
        self.has_bias_coordinate.then(|| self.payload[0])
    }
}

/// What happened at one epoch of the window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: EpochId,
    /// Loss submitted to the filter, side-query share included.
    pub loss: Fixed,
    pub side_loss: Fixed,
    pub status: FilterStatus,
    pub relevant_events: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedReport {
    pub report: AttributionReport,
    pub trace: Vec<EpochTrace>,
}

impl GeneratedReport {
    pub fn halted_epochs(&self) -> impl Iterator<Item = EpochId> + '_ {
        self.trace.iter().filter(|t| t.status == FilterStatus::Halt).map(|t| t.epoch)
    }

    pub fn total_loss(&self) -> Fixed {
        self.trace.iter().filter(|t| t.status == FilterStatus::Continue).map(|t| t.loss).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LossPolicy {
    Individual,
    /// Charge the requested ε for every epoch, whatever the data.
    Flat,
}

/// Generates a report for `device`, charging each epoch of the window to
/// the store in chronological order. Epochs whose filter halts contribute
/// nothing to the attribution.
pub fn compute_attribution_report<S: FilterStorage + ?Sized>(
    request: &AttributionRequest,
    db: &Database,
    device: DeviceId,
    store: &mut S,
    bias: &BiasConfig,
    ids: ReportIds,
) -> Result<GeneratedReport, DeviceError> {
    generate(request, db, device, store, bias, ids, LossPolicy::Individual)
}

pub(crate) fn generate<S: FilterStorage + ?Sized>(
    request: &AttributionRequest,
    db: &Database,
    device: DeviceId,
    store: &mut S,
    bias: &BiasConfig,
    ids: ReportIds,
    policy: LossPolicy,
) -> Result<GeneratedReport, DeviceError> {
    request.validate()?;
    bias.validate()?;
    let all_events = db.device_epoch_events(device, &request.epochs);
    let mut relevant: Vec<EventSet<'_>> =
        all_events.iter().map(|events| select_relevant_events(events, &request.relevance)).collect();

    let k = request.window_len();
    let mut dropped = alloc::vec![false; k];
    let mut trace = Vec::with_capacity(k);
    for i in 0..k {
        let side = if bias.enabled && policy == LossPolicy::Individual && !all_events[i].is_empty() {
            bias.kappa
        } else {
            Fixed::ZERO
        };
        let (loss, side_loss) = match policy {
            LossPolicy::Individual => {
                let delta = individual_sensitivity(&relevant, i, request)?;
                let side_loss = loss_for_sensitivity(request, side);
                (loss_for_sensitivity(request, delta + side), side_loss)
            }
            LossPolicy::Flat => (request.requested_epsilon, Fixed::ZERO),
        };
        let key = FilterKey::new(request.querier_site.clone(), device, request.epochs[i]);
        let status = store.try_consume(&key, loss)?;
        trace.push(EpochTrace {
            epoch: request.epochs[i],
            loss,
            side_loss,
            status,
            relevant_events: relevant[i].len(),
        });
        if status == FilterStatus::Halt {
            relevant[i].clear();
            dropped[i] = true;
        }
    }

    let attribution = compute_attribution(&relevant, request)?;
    let with_bias = bias.enabled && policy == LossPolicy::Individual;
    let payload = if with_bias {
        let flagged = match bias.mode {
            BiasMode::General => dropped.iter().any(|d| *d),
            BiasMode::LastTouch => {
                (0..k).any(|i| dropped[i] && relevant[i + 1..].iter().all(|s| s.is_empty()))
            }
        };
        let mut p = Vec::with_capacity(attribution.len() + 1);
        p.push(if flagged { bias.kappa } else { Fixed::ZERO });
        p.extend(attribution);
        p
    } else {
        attribution
    };
    Ok(GeneratedReport {
        report: AttributionReport {
            nonce: ids.nonce,
            payload,
            device,
            request_ref: ids.request_ref,
            epsilon: request.requested_epsilon,
            has_bias_coordinate: with_bias,
        },
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("malformed report record: {0}")]
    Malformed(String),
    #[error("invalid nonce `{0}`")]
    Nonce(String),
    #[error("invalid decimal field `{0}`")]
    Decimal(String),
}

/// What leaves the device: no device identity, fixed-width fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireReport {
    pub nonce: Nonce,
    pub epsilon: Fixed,
    pub payload: Vec<Fixed>,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    nonce: String,
    epsilon: String,
    payload: Vec<String>,
}

const INT_DIGITS: usize = 10;

fn fixed_width(x: Fixed) -> String {
    let sign = if x.is_negative() { '-' } else { '+' };
    let raw = x.raw().unsigned_abs();
    let scale = Fixed::SCALE as u64;
    format!("{sign}{:0iw$}.{:09}", raw / scale, raw % scale, iw = INT_DIGITS)
}

fn parse_fixed(s: &str) -> Result<Fixed, WireError> {
    s.parse::<Fixed>().map_err(|_| WireError::Decimal(s.into()))
}

/// Serializes a report as one JSON line. The byte length depends only on
/// the payload dimension.
pub fn export_report(report: &AttributionReport) -> String {
    let rec = WireRecord {
        nonce: format!("{}", report.nonce),
        epsilon: fixed_width(report.epsilon),
        payload: report.payload.iter().copied().map(fixed_width).collect(),
    };
    serde_json::to_string(&rec).expect("wire record serializes")
}

pub fn parse_report(line: &str) -> Result<WireReport, WireError> {
    let rec: WireRecord = serde_json::from_str(line).map_err(|e| WireError::Malformed(format!("{e}")))?;
    let nonce = u128::from_str_radix(&rec.nonce, 16).map_err(|_| WireError::Nonce(rec.nonce.clone()))?;
    Ok(WireReport {
        nonce: Nonce(nonce),
        epsilon: parse_fixed(rec.epsilon.trim_start_matches('+'))?,
        payload: rec.payload.iter().map(|p| parse_fixed(p.trim_start_matches('+'))).collect::<Result<_, _>>()?,
    })
}
