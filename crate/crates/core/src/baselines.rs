//! IPA-like centralized budgeting and ARA-like on-device budgeting.

use alloc::collections::BTreeMap;
use alloc::string::String;

use rand_core::RngCore;

use crate::aggregation::{answer_query, AggregationError, QueryResult};
use crate::budget::{BudgetError, FilterStatus, PrivacyFilter};
use crate::device::{generate, AttributionReport, BiasConfig, DeviceError, GeneratedReport, LossPolicy, ReportIds};
use crate::attribution::AttributionRequest;
use crate::budget::FilterStorage;
use crate::fixed::Fixed;
use crate::model::{Database, DeviceId, EpochId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BaselineError {
    #[error("query rejected: budget of epoch {first_exhausted_epoch} is exhausted")]
    Rejected { first_exhausted_epoch: EpochId },
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

/// One filter per (querier, epoch), shared by every device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentralFilterStore {
    capacity: Fixed,
    filters: BTreeMap<(String, EpochId), PrivacyFilter>,
}

impl CentralFilterStore {
    pub fn new(capacity: Fixed) -> Result<Self, BudgetError> {
        PrivacyFilter::new(capacity)?;
        Ok(CentralFilterStore { capacity, filters: BTreeMap::new() })
    }

    pub fn consumed(&self, querier: &str, epoch: EpochId) -> Fixed {
        self.filters.get(&(String::from(querier), epoch)).map_or(Fixed::ZERO, PrivacyFilter::consumed)
    }

    /// Charges `epsilon` to every epoch of the window, or to none of them.
    pub fn try_consume_window(&mut self, querier: &str, epochs: &[EpochId], epsilon: Fixed) -> Result<(), BaselineError> {
        if epsilon.is_negative() {
            return Err(BudgetError::NegativeLoss(epsilon).into());
        }
        for e in epochs {
            let fits = self.filters.get(&(String::from(querier), *e)).map_or(epsilon <= self.capacity, |f| f.can_consume(epsilon));
            if !fits {
                return Err(BaselineError::Rejected { first_exhausted_epoch: *e });
            }
        }
        for e in epochs {
            let cap = self.capacity;
            let f = self.filters.entry((String::from(querier), *e)).or_insert_with(|| PrivacyFilter::new(cap).expect("checked"));
            let status = f.try_consume(epsilon)?;
            debug_assert_eq!(status, FilterStatus::Continue);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> BTreeMap<(String, EpochId), Fixed> {
        self.filters.iter().map(|(k, f)| (k.clone(), f.consumed())).collect()
    }
}

/// Runs a query under centralized budgeting. `reports` must come from
/// devices with unlimited budgets, as attribution happens inside the trusted
/// aggregator. Nothing is charged when the query is rejected.
pub fn ipa_like_execute<R: RngCore + ?Sized>(
    querier: &str,
    epochs: &[EpochId],
    central: &mut CentralFilterStore,
    epsilon: Fixed,
    reports: &[AttributionReport],
    sigma: f64,
    rng: &mut R,
) -> Result<QueryResult, BaselineError> {
    central.try_consume_window(querier, epochs, epsilon)?;
    let mut r = answer_query(reports, sigma, rng)?;
    r.epsilon = epsilon.to_f64();
    Ok(r)
}

/// Same pipeline as the individual-loss device, but every epoch of the
/// window pays the full requested ε and no bias coordinate is produced.
pub fn ara_like_report<S: FilterStorage + ?Sized>(
    request: &AttributionRequest,
    db: &Database,
    device: DeviceId,
    store: &mut S,
    ids: ReportIds,
) -> Result<GeneratedReport, DeviceError> {
    generate(request, db, device, store, &BiasConfig::disabled(), ids, LossPolicy::Flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::query_rng;
    use crate::attribution::{AttributionLogic, PNorm};
    use crate::budget::{FilterKey, FilterStore};
    use crate::device::{compute_attribution_report, Nonce};
    use crate::model::{DeviceEpochRecord, Event, EventPredicate};
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn ipa_window_all_or_nothing() {
        let mut c = CentralFilterStore::new(Fixed::ONE).unwrap();
        let w = [EpochId(1), EpochId(2)];
        let eps = Fixed::from_raw(300_000_000);
        for _ in 0..3 {
            ipa_like_execute("q", &w, &mut c, eps, &[], 0.0, &mut query_rng(0, 0)).unwrap();
        }
        let before = c.snapshot();
        let err = ipa_like_execute("q", &w, &mut c, eps, &[], 0.0, &mut query_rng(0, 0)).unwrap_err();
        assert_eq!(err, BaselineError::Rejected { first_exhausted_epoch: EpochId(1) });
        assert_eq!(c.snapshot(), before);
        // a fresh epoch in the window does not get charged on rejection
        let err = c.try_consume_window("q", &[EpochId(3), EpochId(2)], eps).unwrap_err();
        assert_eq!(err, BaselineError::Rejected { first_exhausted_epoch: EpochId(2) });
        assert_eq!(c.consumed("q", EpochId(3)), Fixed::ZERO);
    }

    fn request() -> AttributionRequest {
        AttributionRequest {
            querier_site: "nike.com".into(),
            epochs: (1..=4).map(EpochId).collect(),
            relevance: EventPredicate::impressions_with("campaign", "nike"),
            logic: AttributionLogic::EqualCredit { max_impressions: 2 },
            conversion_value: Fixed::from_int(70),
            report_global_sensitivity: Fixed::from_int(70),
            query_global_sensitivity: Fixed::from_int(100),
            requested_epsilon: Fixed::ONE.div_int_floor(2),
            pnorm: PNorm::L1,
        }
    }

    #[test]
    fn ara_charges_flat_epsilon() {
        let d = DeviceId(1);
        let db = Database::new()
            .with_record(DeviceEpochRecord::new(d, EpochId(2), vec![Event::impression(1, 5, d).with_attr("campaign", "nike")]).unwrap())
            .unwrap();
        let ids = ReportIds { nonce: Nonce(1), request_ref: 0 };
        let mut ara = FilterStore::new(Fixed::ONE).unwrap();
        let mut cm = FilterStore::new(Fixed::ONE).unwrap();
        let a = ara_like_report(&request(), &db, d, &mut ara, ids).unwrap();
        let c = compute_attribution_report(&request(), &db, d, &mut cm, &BiasConfig::disabled(), ids).unwrap();
        assert_eq!(a.report.payload, c.report.payload);
        let half = Fixed::ONE.div_int_floor(2);
        let ara_losses: Vec<_> = (1..=4).map(|e| ara.consumed(&FilterKey::new("nike.com", d, EpochId(e)))).collect();
        assert_eq!(ara_losses, vec![half; 4]);
        assert_eq!(cm.consumed(&FilterKey::new("nike.com", d, EpochId(2))), Fixed::from_raw(350_000_000));
        assert_eq!(cm.consumed(&FilterKey::new("nike.com", d, EpochId(1))), Fixed::ZERO);
        assert_eq!(ara.consumed(&FilterKey::new("nike.com", DeviceId(2), EpochId(1))), Fixed::ZERO);
    }
}
