//! Batched, repeated summation queries over an event log.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use cookie_monster_core::metrics::{budget_stats, BudgetStats};
use cookie_monster_core::{
    ara_like_report, bias_error_bound, calibrate_epsilon, compute_attribution_report, rmsre, sigma_from_epsilon,
    AggregationError, Aggregator, AttributionLogic, AttributionReport, AttributionRequest, BaselineError,
    BiasConfig, BiasMode, CentralFilterStore, Database, DeviceError, EpochConfig, EpochId, ErrorBound, Event,
    EventPredicate, FilterKey, FilterStore, Fixed, Nonce, PNorm, QueryResult, ReportIds, UnlimitedBudget,
};

use crate::workload::{substream, MicrobenchmarkConfig, Schema, STREAM_NONCES, STREAM_NOISE};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Budget(#[from] cookie_monster_core::BudgetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    #[default]
    CookieMonster,
    AraLike,
    IpaLike,
}

impl System {
    pub const ALL: [System; 3] = [System::CookieMonster, System::AraLike, System::IpaLike];

    pub fn name(self) -> &'static str {
        match self {
            System::CookieMonster => "cookie_monster",
            System::AraLike => "ara_like",
            System::IpaLike => "ipa_like",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasSettings {
    pub enabled: bool,
    /// Defaults to 10% of the query sensitivity.
    pub kappa: Option<Fixed>,
    pub mode: BiasMode,
    /// Failure probability of the reported error bound.
    pub beta: f64,
}

impl Default for BiasSettings {
    fn default() -> Self {
        BiasSettings { enabled: false, kappa: None, mode: BiasMode::LastTouch, beta: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub system: System,
    pub alpha: f64,
    pub beta: f64,
    /// Per-epoch budget `ε^G` of every filter.
    pub epsilon_global: Fixed,
    pub bias: BiasSettings,
    /// Stop after this many queries per product.
    pub queries_per_product: Option<u64>,
    /// Average conversion value assumed by calibration; defaults to the
    /// mean of the microbenchmark value distribution.
    pub c_tilde: Option<f64>,
    /// Seed for nonces and noise.
    pub seed: u64,
    pub schema: Schema,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            system: System::CookieMonster,
            alpha: 0.05,
            beta: 0.01,
            epsilon_global: Fixed::ONE,
            bias: BiasSettings::default(),
            queries_per_product: None,
            c_tilde: None,
            seed: 0,
            schema: Schema::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::InvalidConfig(m.into()));
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.beta > 0.0 && self.beta < 1.0) {
            return bad("alpha and beta must lie in (0, 1)");
        }
        if self.epsilon_global.is_negative() {
            return bad("epsilon_global must be non-negative");
        }
        if self.bias.enabled && !(self.bias.beta > 0.0 && self.bias.beta < 1.0) {
            return bad("bias.beta must lie in (0, 1)");
        }
        if self.bias.kappa.is_some_and(|k| !k.is_positive()) {
            return bad("bias.kappa must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum QueryStatus {
    Executed,
    Rejected { first_exhausted_epoch: EpochId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub product: String,
    pub querier: String,
    pub index_in_product: u64,
    #[serde(flatten)]
    pub status: QueryStatus,
    pub result: Option<QueryResult>,
    pub rmsre: Option<f64>,
    pub bound: Option<ErrorBound>,
    pub payload_width: usize,
    /// Reports whose attribution differs from the unlimited-budget run.
    pub altered_reports: usize,
    pub flagged_reports: usize,
    pub altered_unflagged: usize,
    /// Union of the batch's attribution windows.
    pub epochs: Vec<EpochId>,
}

impl QueryRecord {
    pub fn is_executed(&self) -> bool {
        self.status == QueryStatus::Executed
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub system: System,
    pub epsilon: f64,
    pub sigma: f64,
    pub kappa: Option<Fixed>,
    pub delta_max: f64,
    pub records: Vec<QueryRecord>,
    /// Reports of every query, in query order.
    pub batches: Vec<Vec<AttributionReport>>,
    /// On-device filters (empty for the centralized baseline).
    pub snapshot: BTreeMap<FilterKey, Fixed>,
    pub central_snapshot: BTreeMap<(String, EpochId), Fixed>,
    /// Every device-epoch requested by some report.
    pub scope: BTreeSet<FilterKey>,
    pub capacities: Fixed,
}

impl ScenarioOutcome {
    /// Consumption over requested device-epochs. The centralized baseline
    /// charges the same per-epoch value to every device, so its statistics
    /// are taken over the requested epochs.
    pub fn budget_stats(&self) -> Option<BudgetStats> {
        match self.system {
            System::IpaLike => {
                let epochs: Vec<(String, EpochId)> =
                    self.scope.iter().map(|k| (k.querier.clone(), k.epoch)).collect::<BTreeSet<_>>().into_iter().collect();
                budget_stats(&self.central_snapshot, &epochs).ok()
            }
            _ => budget_stats(&self.snapshot, &self.scope.iter().cloned().collect::<Vec<_>>()).ok(),
        }
    }

    pub fn executed(&self) -> impl Iterator<Item = &QueryRecord> {
        self.records.iter().filter(|r| r.is_executed())
    }

    pub fn rmsres(&self) -> Vec<f64> {
        self.executed().filter_map(|r| r.rmsre).collect()
    }
}

struct Pending {
    querier: String,
    reports: Vec<AttributionReport>,
    truths: Vec<Vec<Fixed>>,
    epochs: BTreeSet<EpochId>,
    issued: u64,
}

/// Builds the driver's last-touch request for one conversion.
pub fn conversion_request(
    conversion: &Event,
    querier: &str,
    product: &str,
    epsilon: Fixed,
    bench: &MicrobenchmarkConfig,
    schema: &Schema,
    epochs: &EpochConfig,
) -> AttributionRequest {
    let start = conversion.timestamp.saturating_sub(bench.attribution_window);
    let delta = bench.max_conversion_value;
    AttributionRequest {
        querier_site: querier.to_string(),
        epochs: epochs.epochs_between(start, conversion.timestamp),
        relevance: EventPredicate::impressions_with(schema.campaign_key.clone(), product)
            .and(EventPredicate::TimeWindow { start, end: conversion.timestamp }),
        logic: AttributionLogic::last_touch_scalar(),
        conversion_value: conversion.value,
        report_global_sensitivity: delta,
        query_global_sensitivity: delta,
        requested_epsilon: epsilon,
        pnorm: PNorm::L1,
    }
}

/// Calibrated per-query ε (rounded to the fixed-point grid) and noise σ.
pub fn calibration(scenario: &ScenarioConfig, bench: &MicrobenchmarkConfig) -> Result<(Fixed, f64), ScenarioError> {
    let delta = bench.max_conversion_value.to_f64();
    let c_tilde = scenario.c_tilde.unwrap_or_else(|| bench.average_value());
    let eps = calibrate_epsilon(delta, scenario.alpha, scenario.beta, bench.batch_size, c_tilde)?;
    let eps = Fixed::from_f64(eps);
    let sigma = sigma_from_epsilon(eps.to_f64(), delta)?;
    Ok((eps, sigma))
}

/// Runs every product's query sequence over `db`. Conversions are processed
/// in time order; a product's query fires when it has `B` reports. Partial
/// trailing batches are never requested.
pub fn run_scenario(
    db: &Database,
    scenario: &ScenarioConfig,
    bench: &MicrobenchmarkConfig,
) -> Result<ScenarioOutcome, ScenarioError> {
    scenario.validate()?;
    bench.validate().map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
    let schema = &scenario.schema;
    let epochs = bench.epochs();
    let batch = bench.batch_size as usize;
    let (epsilon, sigma) = calibration(scenario, bench)?;
    let delta = bench.max_conversion_value;
    let bias = if scenario.bias.enabled && scenario.system == System::CookieMonster {
        let kappa = scenario.bias.kappa.unwrap_or_else(|| delta.div_int_floor(10));
        BiasConfig::new(kappa, scenario.bias.mode)
    } else {
        BiasConfig::disabled()
    };

    let mut conversions: Vec<&Event> =
        db.events_iter().filter(|e| e.is_conversion() && e.attr(&schema.product_key).is_some()).collect();
    conversions.sort_by_key(|e| (e.timestamp, e.id));
    let mut per_product: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &conversions {
        *per_product.entry(c.attr(&schema.product_key).unwrap()).or_default() += 1;
    }
    let limit = |p: &str| {
        let full = per_product[p] / batch;
        let q = scenario.queries_per_product.map_or(full, |q| full.min(q as usize));
        q * batch
    };

    let mut store = FilterStore::new(scenario.epsilon_global)?;
    let mut central = CentralFilterStore::new(scenario.epsilon_global)?;
    let mut shadow = UnlimitedBudget::new();
    let mut aggregator = Aggregator::new(noise_seed(scenario.seed));
    let mut nonce_rng = substream(scenario.seed, STREAM_NONCES);
    let mut pending: BTreeMap<String, Pending> = BTreeMap::new();
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let mut scope = BTreeSet::new();
    let mut records = Vec::new();
    let mut batches = Vec::new();
    let mut next_query = 0u64;

    for conv in conversions {
        let product = conv.attr(&schema.product_key).unwrap();
        let n = used.entry(product.to_string()).or_default();
        if *n >= limit(product) {
            continue;
        }
        *n += 1;
        let querier = conv.attr(&schema.advertiser_key).unwrap_or(&schema.default_advertiser).to_string();
        let request = conversion_request(conv, &querier, product, epsilon, bench, schema, &epochs);
        let ids = ReportIds { nonce: Nonce(nonce_rng.random()), request_ref: conv.id.0 };
        let truth = compute_attribution_report(&request, db, conv.device, &mut shadow, &BiasConfig::disabled(), ids)?;
        let report = match scenario.system {
            System::CookieMonster => compute_attribution_report(&request, db, conv.device, &mut store, &bias, ids)?.report,
            System::AraLike => ara_like_report(&request, db, conv.device, &mut store, ids)?.report,
            System::IpaLike => truth.report.clone(),
        };
        for e in &request.epochs {
            scope.insert(FilterKey::new(querier.clone(), conv.device, *e));
        }
        let p = pending.entry(product.to_string()).or_insert_with(|| Pending {
            querier: querier.clone(),
            reports: Vec::new(),
            truths: Vec::new(),
            epochs: BTreeSet::new(),
            issued: 0,
        });
        p.reports.push(report);
        p.truths.push(truth.report.payload);
        p.epochs.extend(request.epochs.iter().copied());
        if p.reports.len() < batch {
            continue;
        }

        let reports = std::mem::take(&mut p.reports);
        let truths = std::mem::take(&mut p.truths);
        let window: Vec<EpochId> = std::mem::take(&mut p.epochs).into_iter().collect();
        let query_id = next_query;
        next_query += 1;
        let index_in_product = p.issued;
        p.issued += 1;
        let true_value = sum_vectors(&truths);

        let mut altered = 0;
        let mut flagged = 0;
        let mut altered_unflagged = 0;
        for (r, t) in reports.iter().zip(&truths) {
            let is_altered = r.attribution() != t.as_slice();
            let is_flagged = r.bias_value().is_some_and(|b| b.is_positive());
            altered += is_altered as usize;
            flagged += is_flagged as usize;
            altered_unflagged += (is_altered && !is_flagged && r.has_bias_coordinate) as usize;
        }

        let executed = match scenario.system {
            System::IpaLike => match central.try_consume_window(&p.querier, &window, epsilon) {
                Ok(()) => Some(aggregator.execute(query_id, &reports, sigma, epsilon.to_f64())?),
                Err(BaselineError::Rejected { first_exhausted_epoch }) => {
                    records.push(QueryRecord {
                        query_id,
                        product: product.to_string(),
                        querier: p.querier.clone(),
                        index_in_product,
                        status: QueryStatus::Rejected { first_exhausted_epoch },
                        result: None,
                        rmsre: None,
                        bound: None,
                        payload_width: reports[0].payload.len(),
                        altered_reports: 0,
                        flagged_reports: 0,
                        altered_unflagged: 0,
                        epochs: window,
                    });
                    batches.push(reports);
                    continue;
                }
                Err(e) => return Err(e.into()),
            },
            _ => Some(aggregator.execute(query_id, &reports, sigma, epsilon.to_f64())?),
        };
        let result = executed.expect("executed").with_truth(true_value);
        let bound = match (result.bias_count_noisy, bias.enabled) {
            (Some(m0), true) => Some(
                bias_error_bound(m0, bias.kappa.to_f64(), sigma, scenario.bias.beta, delta.to_f64(), &result.noisy_value)
                    .map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?,
            ),
            _ => None,
        };
        records.push(QueryRecord {
            query_id,
            product: product.to_string(),
            querier: p.querier.clone(),
            index_in_product,
            status: QueryStatus::Executed,
            rmsre: rmsre(&result).ok(),
            result: Some(result),
            bound,
            payload_width: reports[0].payload.len(),
            altered_reports: altered,
            flagged_reports: flagged,
            altered_unflagged,
            epochs: window,
        });
        batches.push(reports);
    }

    Ok(ScenarioOutcome {
        system: scenario.system,
        epsilon: epsilon.to_f64(),
        sigma,
        kappa: bias.enabled.then_some(bias.kappa),
        delta_max: delta.to_f64(),
        records,
        batches,
        snapshot: store.snapshot(),
        central_snapshot: central.snapshot(),
        scope,
        capacities: scenario.epsilon_global,
    })
}

pub fn noise_seed(seed: u64) -> u64 {
    substream(seed, STREAM_NOISE).random()
}

fn sum_vectors(vs: &[Vec<Fixed>]) -> Vec<f64> {
    let dim = vs.first().map_or(0, Vec::len);
    let mut out = vec![Fixed::ZERO; dim];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o = o.saturating_add(*x);
        }
    }
    out.into_iter().map(Fixed::to_f64).collect()
}
