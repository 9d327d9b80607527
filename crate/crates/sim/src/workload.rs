//! Synthetic microbenchmark logs and impression augmentation.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use cookie_monster_core::{Database, EpochConfig, Event, Fixed, ModelError, Timestamp};

pub const DAY: u64 = EpochConfig::DAY;

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid microbenchmark config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Attribute names linking conversions to their relevant impressions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub product_key: String,
    pub campaign_key: String,
    pub advertiser_key: String,
    /// Querier used when a conversion carries no advertiser attribute.
    pub default_advertiser: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            product_key: "product".into(),
            campaign_key: "campaign".into(),
            advertiser_key: "advertiser".into(),
            default_advertiser: "nike.com".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MicrobenchmarkConfig {
    pub days: u64,
    pub products: u64,
    pub total_conversions: u64,
    pub batch_size: u64,
    /// Fraction of users taking part in any one query.
    pub knob1: f64,
    /// Relevant impressions per user per day.
    pub knob2: f64,
    pub seed: u64,
    /// Δ: conversion values are drawn uniformly from `1..=Δ`.
    pub max_conversion_value: Fixed,
    /// Seconds.
    pub epoch_length: u64,
    /// Seconds.
    pub attribution_window: u64,
}

impl Default for MicrobenchmarkConfig {
    fn default() -> Self {
        MicrobenchmarkConfig {
            days: 120,
            products: 10,
            total_conversions: 40_000,
            batch_size: 2_000,
            knob1: 0.1,
            knob2: 0.1,
            seed: 0,
            max_conversion_value: Fixed::from_int(5),
            epoch_length: 7 * DAY,
            attribution_window: 30 * DAY,
        }
    }
}

impl MicrobenchmarkConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidConfig(m.into()));
        if self.products == 0 || !self.total_conversions.is_multiple_of(self.products) {
            return bad("total_conversions must be a positive multiple of products");
        }
        if !(self.knob1 > 0.0 && self.knob1 <= 1.0) {
            return bad("knob1 must lie in (0, 1]");
        }
        if !(self.knob2 >= 0.0 && self.knob2.is_finite()) {
            return bad("knob2 must be a non-negative number");
        }
        if self.batch_size == 0 || self.days == 0 {
            return bad("batch_size and days must be positive");
        }
        if self.epoch_length == 0 || self.attribution_window == 0 {
            return bad("epoch_length and attribution_window must be positive");
        }
        let delta = self.max_conversion_value;
        if delta < Fixed::ONE || delta.raw() % Fixed::SCALE != 0 {
            return bad("max_conversion_value must be a positive integer");
        }
        Ok(())
    }

    pub fn epochs(&self) -> EpochConfig {
        EpochConfig::new(self.epoch_length).expect("validated")
    }

    /// Distinct users: each batch draws `B` of them, so `B / knob1` users
    /// give every user a `knob1` chance of taking part in a query.
    pub fn user_count(&self) -> u64 {
        (self.batch_size as f64 / self.knob1).ceil() as u64
    }

    /// `c̃`: mean of the uniform value distribution.
    pub fn average_value(&self) -> f64 {
        (self.max_conversion_value.to_f64() + 1.0) / 2.0
    }
}

pub fn product_name(p: u64) -> String {
    format!("product-{p}")
}

/// Independent generator for one purpose (`stream`) of a seeded run.
pub fn substream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const STREAM_CONVERSIONS: u64 = 1;
pub const STREAM_USERS: u64 = 2;
pub const STREAM_IMPRESSIONS: u64 = 3;
pub const STREAM_AUGMENT: u64 = 4;
pub const STREAM_NONCES: u64 = 5;
pub const STREAM_NOISE: u64 = 6;

fn poisson_count(rng: &mut ChaCha20Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Deterministic microbenchmark event log, sorted by time.
///
/// Conversion times and values come from their own substream so that the
/// query schedule does not depend on the knobs.
pub fn generate_microbenchmark(config: &MicrobenchmarkConfig, schema: &Schema) -> Result<Vec<Event>, WorkloadError> {
    config.validate()?;
    let mut conv_rng = substream(config.seed, STREAM_CONVERSIONS);
    let mut user_rng = substream(config.seed, STREAM_USERS);
    let mut imp_rng = substream(config.seed, STREAM_IMPRESSIONS);
    let users = config.user_count();
    let per_product = config.total_conversions / config.products;
    let horizon = config.days * DAY;
    let delta = config.max_conversion_value.raw() / Fixed::SCALE;

    let mut conversions = Vec::with_capacity(config.total_conversions as usize);
    let mut next_id = 0u64;
    for p in 0..config.products {
        let mut times: Vec<(Timestamp, i64)> =
            (0..per_product).map(|_| (conv_rng.random_range(0..horizon), conv_rng.random_range(1..=delta))).collect();
        times.sort_unstable();
        for chunk in times.chunks(config.batch_size as usize) {
            let chosen = sample(&mut user_rng, users as usize, chunk.len());
            for ((t, v), u) in chunk.iter().zip(chosen.iter()) {
                let ev = Event::conversion(next_id, *t, cookie_monster_core::DeviceId(u as u64), Fixed::from_int(*v))
                    .with_attr(schema.product_key.clone(), product_name(p))
                    .with_attr(schema.advertiser_key.clone(), schema.default_advertiser.clone());
                next_id += 1;
                conversions.push(ev);
            }
        }
    }

    let mean = config.knob2 * config.attribution_window as f64 / DAY as f64;
    let mut events = Vec::with_capacity(conversions.len());
    for c in &conversions {
        let start = c.timestamp.saturating_sub(config.attribution_window);
        if start == c.timestamp {
            continue;
        }
        let campaign = c.attr(&schema.product_key).expect("set above").to_string();
        for _ in 0..poisson_count(&mut imp_rng, mean) {
            let ts = imp_rng.random_range(start..c.timestamp);
            events.push(
                Event::impression(next_id, ts, c.device)
                    .with_attr(schema.campaign_key.clone(), campaign.clone())
                    .with_attr("publisher", "publisher.example"),
            );
            next_id += 1;
        }
    }
    events.extend(conversions);
    events.sort_by_key(|e| (e.timestamp, e.id));
    Ok(events)
}

/// Adds `extra_per_conversion` relevant impressions before every
/// conversion, uniformly over `[t - window, t)`.
pub fn augment_impressions(
    db: &Database,
    extra_per_conversion: u64,
    window: u64,
    seed: u64,
    schema: &Schema,
    epochs: &EpochConfig,
) -> Result<Database, WorkloadError> {
    if extra_per_conversion == 0 {
        return Ok(db.clone());
    }
    let mut rng = substream(seed, STREAM_AUGMENT);
    let mut next_id = db.events_iter().map(|e| e.id.0 + 1).max().unwrap_or(0);
    let mut conversions: Vec<&Event> = db.events_iter().filter(|e| e.is_conversion()).collect();
    conversions.sort_by_key(|e| (e.timestamp, e.id));
    let mut extra = Vec::new();
    for c in conversions {
        let start = c.timestamp.saturating_sub(window);
        let Some(product) = c.attr(&schema.product_key) else { continue };
        if start == c.timestamp {
            continue;
        }
        for _ in 0..extra_per_conversion {
            extra.push(
                Event::impression(next_id, rng.random_range(start..c.timestamp), c.device)
                    .with_attr(schema.campaign_key.clone(), product.to_string())
                    .with_attr("publisher", "synthetic.example"),
            );
            next_id += 1;
        }
    }
    let mut all: Vec<Event> = db.events_iter().cloned().collect();
    all.extend(extra);
    Ok(Database::from_events(all, epochs)?)
}
