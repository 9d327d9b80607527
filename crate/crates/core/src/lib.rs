//! On-device individual-DP budgeting for private ad measurement.
//!
//! Devices hold per-(querier, device, epoch) privacy filters and charge each
//! epoch only its individual privacy loss when producing an attribution
//! report. A trusted aggregator sums reports and adds Laplace noise. The
//! crate also carries IPA-like and ARA-like baselines and the metrics used
//! to compare them.
//!
//! The crate is `no_std` with `alloc`; file formats, workloads and the CLI
//! live in `cookie-monster-sim`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod aggregation;
pub mod attribution;
pub mod baselines;
pub mod budget;
pub mod device;
pub mod fixed;
pub mod metrics;
pub mod model;
pub mod sensitivity;

pub use aggregation::{
    answer_query, calibrate_epsilon, sigma_from_epsilon, AggregationError, Aggregator, NonceRegistry, QueryResult,
};
pub use attribution::{
    attribution_output_zero, compute_attribution, select_relevant_events, AttributionError, AttributionLogic,
    AttributionRequest, BinSpec, EventSet, PNorm, WeightRule,
};
pub use baselines::{ara_like_report, ipa_like_execute, BaselineError, CentralFilterStore};
pub use budget::{
    compute_individual_budget, BudgetError, FilterKey, FilterStatus, FilterStorage, FilterStore, PrivacyFilter,
    UnlimitedBudget,
};
pub use device::{
    compute_attribution_report, export_report, parse_report, AttributionReport, BiasConfig, BiasMode, DeviceError,
    GeneratedReport, Nonce, ReportIds, WireReport,
};
pub use fixed::Fixed;
pub use metrics::{accept_by_cutoff, bias_error_bound, budget_stats, rmsre, BudgetStats, ErrorBound, MetricsError};
pub use model::{
    epoch_of, Database, DeviceEpochRecord, DeviceId, EpochConfig, EpochId, Event, EventId, EventKind, EventPredicate,
    ModelError, PublicEventSet, Timestamp,
};
pub use sensitivity::{
    delta_max, histogram_global_bounds, individual_privacy_loss, individual_sensitivity, SensitivityBounds,
    SensitivityError,
};
