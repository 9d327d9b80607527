//! Monte Carlo estimate of the privacy loss one device-epoch suffers from a
//! fixed query schedule.
//!
//! The pipeline runs on two neighboring databases: one holding `record_a`,
//! the other holding `record_b`, which keeps only the public part of
//! `record_a`. Outputs are binned and the largest log-ratio of bin
//! frequencies is reported. The schedule is fixed in advance, so this is a
//! sanity audit rather than a search for a worst-case adversary.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cookie_monster_core::{
    answer_query, compute_attribution_report, sigma_from_epsilon, AttributionRequest, BiasConfig,
    Database, DeviceEpochRecord, DeviceId, FilterStorage, FilterStore, Fixed, Nonce, ReportIds, UnlimitedBudget,
};
use cookie_monster_core::aggregation::query_rng;

use crate::workload::substream;

pub const MIN_TRIALS: u64 = 100_000;
pub const MAX_BINS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("audit needs at least {MIN_TRIALS} trials, got {0}")]
    InsufficientTrials(u64),
    #[error("bins must lie in 2..={MAX_BINS}, got {0}")]
    InvalidBins(usize),
    #[error("records differ in device or epoch")]
    NotNeighbors,
    #[error("schedule is empty")]
    EmptySchedule,
    #[error(transparent)]
    Model(#[from] cookie_monster_core::ModelError),
    #[error(transparent)]
    Device(#[from] cookie_monster_core::DeviceError),
    #[error(transparent)]
    Aggregation(#[from] cookie_monster_core::AggregationError),
    #[error(transparent)]
    Budget(#[from] cookie_monster_core::BudgetError),
}

/// One query of the schedule: a request and the devices reporting for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditQuery {
    pub request: AttributionRequest,
    pub devices: Vec<DeviceId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    Enforced,
    /// Consumption is recorded but never halts. Used to check that the
    /// audit notices a broken filter.
    Disabled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditScenario {
    pub base_db: Database,
    pub record_a: DeviceEpochRecord,
    pub record_b: DeviceEpochRecord,
    pub schedule: Vec<AuditQuery>,
    pub epsilon_global: Fixed,
    pub trials: u64,
    pub bins: usize,
    pub filters: FilterMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub loss: f64,
    /// Loss of each per-query marginal, then of the sum over queries.
    pub per_statistic: Vec<f64>,
    pub trials: u64,
    pub bins: usize,
    pub epsilon_global: f64,
}

impl AuditScenario {
    pub fn validate(&self) -> Result<(), AuditError> {
        if self.trials < MIN_TRIALS {
            return Err(AuditError::InsufficientTrials(self.trials));
        }
        if !(2..=MAX_BINS).contains(&self.bins) {
            return Err(AuditError::InvalidBins(self.bins));
        }
        if self.record_a.device != self.record_b.device || self.record_a.epoch != self.record_b.epoch {
            return Err(AuditError::NotNeighbors);
        }
        if self.schedule.is_empty() {
            return Err(AuditError::EmptySchedule);
        }
        Ok(())
    }

    fn world(&self, record: &DeviceEpochRecord) -> Result<Database, AuditError> {
        let mut db = self.base_db.clone();
        db.remove_record(record.device, record.epoch);
        db.add_record(record.clone())?;
        Ok(db)
    }
}

/// Scalar outputs of one run: each query's first coordinate, then their sum.
fn run_once(s: &AuditScenario, db: &Database, seed: u64, trial: u64) -> Result<Vec<f64>, AuditError> {
    let mut nonces = substream(seed ^ trial.rotate_left(17), crate::workload::STREAM_NONCES);
    let mut enforced = FilterStore::new(s.epsilon_global)?;
    let mut unlimited = UnlimitedBudget::new();
    let store: &mut dyn FilterStorage = match s.filters {
        FilterMode::Enforced => &mut enforced,
        FilterMode::Disabled => &mut unlimited,
    };
    let mut outputs = Vec::with_capacity(s.schedule.len() + 1);
    for (q, query) in s.schedule.iter().enumerate() {
        let mut reports = Vec::with_capacity(query.devices.len());
        for (i, d) in query.devices.iter().enumerate() {
            let ids = ReportIds { nonce: Nonce(nonces.random()), request_ref: i as u64 };
            reports.push(compute_attribution_report(&query.request, db, *d, &mut *store, &BiasConfig::disabled(), ids)?.report);
        }
        let sigma = sigma_from_epsilon(
            query.request.requested_epsilon.to_f64(),
            query.request.query_global_sensitivity.to_f64(),
        )?;
        let mut rng = query_rng(seed, trial * s.schedule.len() as u64 + q as u64);
        let result = answer_query(&reports, sigma, &mut rng)?;
        outputs.push(result.noisy_value.first().copied().unwrap_or(0.0));
    }
    outputs.push(outputs.iter().sum());
    Ok(outputs)
}

fn samples(s: &AuditScenario, db: &Database, seed: u64) -> Result<Vec<Vec<f64>>, AuditError> {
    (0..s.trials).into_par_iter().map(|t| run_once(s, db, seed, t)).collect()
}

/// Edges splitting the pooled sample into `bins` equally populated bins.
fn quantile_edges(pooled: &mut [f64], bins: usize) -> Vec<f64> {
    pooled.sort_by(f64::total_cmp);
    (1..bins).map(|i| pooled[i * pooled.len() / bins]).collect()
}

fn histogram(values: impl Iterator<Item = f64>, edges: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len() + 1];
    for v in values {
        counts[edges.partition_point(|e| *e <= v)] += 1;
    }
    counts
}

fn max_log_ratio(a: &[u64], b: &[u64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| **x + **y > 0)
        .map(|(x, y)| ((*x as f64 + 1.0) / (*y as f64 + 1.0)).ln().abs())
        .fold(0.0, f64::max)
}

/// Largest smoothed log-ratio of bin frequencies between the two worlds,
/// over every per-query marginal and the sum across queries. Bins are
/// equally populated over both worlds' outputs jointly.
pub fn empirical_privacy_loss(s: &AuditScenario, seed: u64) -> Result<AuditReport, AuditError> {
    s.validate()?;
    let world_a = samples(s, &s.world(&s.record_a)?, seed)?;
    let world_b = samples(s, &s.world(&s.record_b)?, seed.wrapping_add(1))?;
    let stats = s.schedule.len() + 1;
    let mut per_statistic = Vec::with_capacity(stats);
    for j in 0..stats {
        let mut pooled: Vec<f64> = world_a.iter().chain(&world_b).map(|o| o[j]).collect();
        let edges = quantile_edges(&mut pooled, s.bins);
        let ha = histogram(world_a.iter().map(|o| o[j]), &edges);
        let hb = histogram(world_b.iter().map(|o| o[j]), &edges);
        per_statistic.push(max_log_ratio(&ha, &hb));
    }
    Ok(AuditReport {
        loss: per_statistic.iter().copied().fold(0.0, f64::max),
        per_statistic,
        trials: s.trials,
        bins: s.bins,
        epsilon_global: s.epsilon_global.to_f64(),
    })
}

/// Three devices over three epochs. Device 0 holds a relevant impression in
/// epoch 1 under `record_a`; `record_b` keeps only its public conversion.
/// Every query asks each device for last-touch attribution of value 1 at
/// budget `epsilon_per_query`.
pub fn three_device_scenario(
    epsilon_global: Fixed,
    epsilon_per_query: Fixed,
    queries: usize,
    trials: u64,
    filters: FilterMode,
) -> AuditScenario {
    use cookie_monster_core::{AttributionLogic, EpochId, Event, EventPredicate, PNorm, PublicEventSet};

    let epochs = [EpochId(0), EpochId(1), EpochId(2)];
    let campaign = |e: Event| e.with_attr("campaign", "nike");
    let conversion = |id, ts, d| Event::conversion(id, ts, DeviceId(d), Fixed::ONE).with_attr("site", "nike.com");
    let mut base = Database::new();
    let records = [
        DeviceEpochRecord::new(DeviceId(1), EpochId(0), vec![campaign(Event::impression(10, 10, DeviceId(1)))]),
        DeviceEpochRecord::new(DeviceId(1), EpochId(2), vec![conversion(11, 210, 1)]),
        DeviceEpochRecord::new(DeviceId(2), EpochId(1), vec![campaign(Event::impression(20, 150, DeviceId(2)))]),
        DeviceEpochRecord::new(DeviceId(0), EpochId(2), vec![conversion(2, 220, 0)]),
    ];
    for r in records {
        base.add_record(r.expect("epoch tags consistent")).expect("distinct records");
    }
    let a = DeviceEpochRecord::new(
        DeviceId(0),
        EpochId(1),
        vec![campaign(Event::impression(1, 120, DeviceId(0))), conversion(3, 130, 0)],
    )
    .expect("epoch tags consistent");
    let public = PublicEventSet::conversions_on("site", "nike.com");
    let b = a.public_part(&public);
    let request = AttributionRequest {
        querier_site: "nike.com".into(),
        epochs: epochs.to_vec(),
        relevance: EventPredicate::impressions_with("campaign", "nike"),
        logic: AttributionLogic::last_touch_scalar(),
        conversion_value: Fixed::ONE,
        report_global_sensitivity: Fixed::ONE,
        query_global_sensitivity: Fixed::ONE,
        requested_epsilon: epsilon_per_query,
        pnorm: PNorm::L1,
    };
    let devices = vec![DeviceId(0), DeviceId(1), DeviceId(2)];
    AuditScenario {
        base_db: base,
        record_a: a,
        record_b: b,
        schedule: (0..queries).map(|_| AuditQuery { request: request.clone(), devices: devices.clone() }).collect(),
        epsilon_global,
        trials,
        bins: 20,
        filters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_trial_counts() {
        let s = three_device_scenario(Fixed::ONE, Fixed::ONE, 1, 10, FilterMode::Enforced);
        assert!(matches!(empirical_privacy_loss(&s, 0), Err(AuditError::InsufficientTrials(10))));
    }

    #[test]
    fn equal_mass_bins() {
        let mut v: Vec<f64> = (0..100).map(f64::from).collect();
        let edges = quantile_edges(&mut v, 4);
        assert_eq!(edges, vec![25.0, 50.0, 75.0]);
        assert_eq!(histogram(v.iter().copied(), &edges), vec![25, 25, 25, 25]);
    }

    #[test]
    fn neighbor_keeps_public_part_only() {
        let s = three_device_scenario(Fixed::ONE, Fixed::ONE, 1, MIN_TRIALS, FilterMode::Enforced);
        assert_eq!(s.record_a.events().len(), 2);
        assert_eq!(s.record_b.events().len(), 1);
        assert!(s.record_b.events()[0].is_conversion());
    }
}
