//! Individual and global sensitivity of attribution reports, and the
//! per-epoch privacy loss a device charges.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attribution::{compute_attribution, AttributionLogic, AttributionRequest, EventSet};
use crate::fixed::Fixed;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SensitivityError {
    #[error("histogram bounds apply only to histogram-sum logic")]
    NotHistogram,
    #[error("epoch index {index} is outside a window of {len} epochs")]
    EpochOutOfWindow { index: usize, len: usize },
    #[error(transparent)]
    Attribution(#[from] crate::attribution::AttributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitivityBounds {
    pub report_global: Fixed,
    pub query_global: Fixed,
    pub delta_max: Fixed,
}

/// Upper bound `Δ_x` on the individual sensitivity of the report for the
/// record at `epoch_index`, given the relevant events of every epoch.
pub fn individual_sensitivity(
    relevant_per_epoch: &[EventSet<'_>],
    epoch_index: usize,
    request: &AttributionRequest,
) -> Result<Fixed, SensitivityError> {
    let len = relevant_per_epoch.len();
    let own = relevant_per_epoch.get(epoch_index).ok_or(SensitivityError::EpochOutOfWindow { index: epoch_index, len })?;
    if !own.iter().any(|e| request.relevance.matches(e)) {
        return Ok(Fixed::ZERO);
    }
    if request.window_len() == 1 {
        let out = compute_attribution(relevant_per_epoch, request)?;
        return Ok(request.pnorm.norm(&out));
    }
    Ok(request.report_global_sensitivity)
}

/// Loss `ε · Δ / Δ(Q)` rounded up to the next representable unit.
pub fn loss_for_sensitivity(request: &AttributionRequest, delta: Fixed) -> Fixed {
    request.requested_epsilon.mul_div_ceil(delta, request.query_global_sensitivity)
}

/// Per-epoch privacy loss charged by a device for one report.
pub fn individual_privacy_loss(
    relevant_per_epoch: &[EventSet<'_>],
    epoch_index: usize,
    request: &AttributionRequest,
) -> Result<Fixed, SensitivityError> {
    let delta = individual_sensitivity(relevant_per_epoch, epoch_index, request)?;
    Ok(loss_for_sensitivity(request, delta))
}

/// Worst-case change of the unclipped attribution when any subset of a
/// window with at least two epochs is emptied (or one record is added),
/// for a vector of two or more bins.
fn multi_epoch_bound(logic: &AttributionLogic, value: Fixed) -> Fixed {
    match logic {
        AttributionLogic::LastTouch { .. } => value.times(2),
        AttributionLogic::EqualCredit { max_impressions: m } => {
            let m = *m as i64;
            value.max(value.times(2 * (m - 1)).mul_div_ceil(Fixed::ONE, Fixed::from_int(m)))
        }
        AttributionLogic::HistogramSum { cap, .. } => cap.times(2),
    }
}

/// Largest p-norm the unclipped attribution can reach.
fn output_norm_bound(logic: &AttributionLogic, value: Fixed) -> Fixed {
    match logic {
        AttributionLogic::HistogramSum { cap, .. } => *cap,
        _ => value,
    }
}

/// Minimum report sensitivity a request must declare so that `Δ_x ≤ Δ(ρ)`
/// holds for every record. Single-epoch windows and scalar outputs are
/// covered by clipping alone.
pub fn provable_report_sensitivity(request: &AttributionRequest) -> Fixed {
    if request.window_len() <= 1 || request.dimension() <= 1 {
        return Fixed::ZERO;
    }
    multi_epoch_bound(&request.logic, request.conversion_value)
}

/// `Δ^max(ρ)`: largest change of the report when any number of its epochs
/// is emptied.
pub fn delta_max(request: &AttributionRequest) -> Fixed {
    if request.window_len() <= 1 || request.dimension() <= 1 {
        output_norm_bound(&request.logic, request.conversion_value).min(request.report_global_sensitivity)
    } else {
        multi_epoch_bound(&request.logic, request.conversion_value)
    }
}

/// Closed-form bounds for histogram-sum logic over a `k`-epoch window.
pub fn histogram_global_bounds(logic: &AttributionLogic, k: usize) -> Result<SensitivityBounds, SensitivityError> {
    let AttributionLogic::HistogramSum { cap, dimension, .. } = logic else {
        return Err(SensitivityError::NotHistogram);
    };
    let bound = if *dimension <= 1 || k <= 1 { *cap } else { cap.times(2) };
    Ok(SensitivityBounds { report_global: bound, query_global: bound, delta_max: bound })
}

/// Brute-force sensitivity over tiny enumerable domains, used to check the
/// closed forms.
pub mod oracle {
    use super::*;
    use crate::model::{DeviceEpochRecord, DeviceId, Event};

    pub const MAX_EPOCHS: usize = 3;
    pub const MAX_CANDIDATES: usize = 4;

    #[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
    pub enum OracleError {
        #[error("domain too large to enumerate: {epochs} epochs, {candidates} candidates in one epoch")]
        DomainTooLarge { epochs: usize, candidates: usize },
        #[error("candidate list has {found} epochs, request window has {expected}")]
        WindowMismatch { expected: usize, found: usize },
        #[error(transparent)]
        Attribution(#[from] crate::attribution::AttributionError),
    }

    /// A report `ρ(D) = A(D_d^E)` together with the candidate events each of
    /// its epochs may hold.
    #[derive(Debug, Clone)]
    pub struct TinyReport {
        pub device: DeviceId,
        pub request: AttributionRequest,
        /// `candidates[i]` lists the events epoch `request.epochs[i]` may hold.
        pub candidates: Vec<Vec<Event>>,
    }

    impl TinyReport {
        fn check(&self) -> Result<(), OracleError> {
            let k = self.request.window_len();
            if self.candidates.len() != k {
                return Err(OracleError::WindowMismatch { expected: k, found: self.candidates.len() });
            }
            let widest = self.candidates.iter().map(Vec::len).max().unwrap_or(0);
            if k > MAX_EPOCHS || widest > MAX_CANDIDATES {
                return Err(OracleError::DomainTooLarge { epochs: k, candidates: widest });
            }
            Ok(())
        }

        fn subsets(&self, i: usize) -> impl Iterator<Item = EventSet<'_>> {
            let c = &self.candidates[i];
            (0u32..1 << c.len()).map(move |mask| {
                c.iter().enumerate().filter(|(j, _)| mask & (1 << j) != 0).map(|(_, e)| e).collect()
            })
        }

        /// Every assignment of candidate subsets to the window's epochs,
        /// with epoch `fixed` (if any) held at the given set.
        fn databases<'a>(&'a self, fixed: Option<(usize, &EventSet<'a>)>) -> Vec<Vec<EventSet<'a>>> {
            let mut out: Vec<Vec<EventSet<'a>>> = alloc::vec![Vec::new()];
            for i in 0..self.candidates.len() {
                let options: Vec<EventSet<'a>> = match fixed {
                    Some((j, set)) if j == i => alloc::vec![set.clone()],
                    _ => self.subsets(i).collect(),
                };
                out = out
                    .into_iter()
                    .flat_map(|prefix| {
                        options.iter().map(move |o| {
                            let mut p = prefix.clone();
                            p.push(o.clone());
                            p
                        })
                    })
                    .collect();
            }
            out
        }

        fn distance(&self, a: &[Fixed], b: &[Fixed]) -> Fixed {
            let diff: Vec<Fixed> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
            self.request.pnorm.norm(&diff)
        }
    }

    /// `max_D ‖ρ(D + x) − ρ(D)‖` over every enumerable `D` lacking `x`'s key.
    pub fn brute_force_individual_sensitivity(x: &DeviceEpochRecord, report: &TinyReport) -> Result<Fixed, OracleError> {
        report.check()?;
        let Some(idx) = report.request.epochs.iter().position(|e| *e == x.epoch) else {
            return Ok(Fixed::ZERO);
        };
        if x.device != report.device {
            return Ok(Fixed::ZERO);
        }
        let with_x: EventSet<'_> = x.events().iter().collect();
        let empty: EventSet<'_> = Vec::new();
        let mut best = Fixed::ZERO;
        for db in report.databases(Some((idx, &empty))) {
            let without = compute_attribution(&db, &report.request)?;
            let mut added = db;
            added[idx] = with_x.clone();
            let with = compute_attribution(&added, &report.request)?;
            best = best.max(report.distance(&with, &without));
        }
        Ok(best)
    }

    /// Global sensitivity over all records drawn from the candidate lists.
    pub fn brute_force_global_sensitivity(report: &TinyReport) -> Result<Fixed, OracleError> {
        report.check()?;
        let mut best = Fixed::ZERO;
        for (i, epoch) in report.request.epochs.iter().enumerate() {
            for subset in report.subsets(i) {
                let x = DeviceEpochRecord::new(report.device, *epoch, subset.into_iter().cloned().collect())
                    .expect("candidate events belong to the report device");
                best = best.max(brute_force_individual_sensitivity(&x, report)?);
            }
        }
        Ok(best)
    }

    /// `Δ^max`: largest change when any subset of epochs is emptied, over
    /// every enumerable database.
    pub fn brute_force_delta_max(report: &TinyReport) -> Result<Fixed, OracleError> {
        report.check()?;
        let k = report.candidates.len();
        let mut best = Fixed::ZERO;
        for db in report.databases(None) {
            let full = compute_attribution(&db, &report.request)?;
            for mask in 1u32..1 << k {
                let emptied: Vec<EventSet<'_>> = db
                    .iter()
                    .enumerate()
                    .map(|(i, s)| if mask & (1 << i) != 0 { Vec::new() } else { s.clone() })
                    .collect();
                let out = compute_attribution(&emptied, &report.request)?;
                best = best.max(report.distance(&full, &out));
            }
        }
        Ok(best)
    }
}
