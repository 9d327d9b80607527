use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use cookie_monster_core::{Database, DeviceId, EpochConfig, Event, Fixed};
use cookie_monster_sim::events_csv::{load_events, write_events};
use cookie_monster_sim::scenario::{conversion_request, run_scenario, ScenarioConfig};
use cookie_monster_sim::workload::*;
use proptest::prelude::*;

fn log_file(events: &[Event]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    let mut buf = Vec::new();
    write_events(&mut buf, events).unwrap();
    f.write_all(&buf).unwrap();
    f
}

#[test]
fn empty_log_loads_as_empty_database() {
    let f = log_file(&[]);
    let db = load_events(f.path(), &EpochConfig::days(7)).unwrap();
    assert!(db.is_empty());
}

#[test]
fn single_impression_gives_one_record() {
    let f = log_file(&[Event::impression(1, 5, DeviceId(3)).with_attr("campaign", "nike")]);
    let db = load_events(f.path(), &EpochConfig::days(7)).unwrap();
    assert_eq!(db.len(), 1);
    assert_eq!(db.records().next().unwrap().events().len(), 1);
}

#[test]
fn ninety_days_span_thirteen_epochs() {
    let events: Vec<Event> = (0..90).map(|d| Event::impression(d, d * DAY + 10, DeviceId(1))).collect();
    let f = log_file(&events);
    let db = load_events(f.path(), &EpochConfig::days(7)).unwrap();
    assert_eq!(db.epochs().len(), 13);
}

#[test]
fn missing_file_is_io_error() {
    let err = load_events(std::path::Path::new("/nonexistent/log.csv"), &EpochConfig::days(7)).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/log.csv"));
}

fn small() -> MicrobenchmarkConfig {
    MicrobenchmarkConfig { total_conversions: 200, products: 4, batch_size: 25, knob1: 0.5, knob2: 0.2, days: 60, ..Default::default() }
}

fn db_of(cfg: &MicrobenchmarkConfig) -> Database {
    Database::from_events(generate_microbenchmark(cfg, &Schema::default()).unwrap(), &cfg.epochs()).unwrap()
}

#[test]
fn augmentation_adds_one_impression_per_conversion_in_window() {
    let cfg = small();
    let schema = Schema::default();
    let base = db_of(&cfg);
    assert_eq!(augment_impressions(&base, 0, 30 * DAY, 1, &schema, &cfg.epochs()).unwrap(), base);
    let more = augment_impressions(&base, 1, 30 * DAY, 1, &schema, &cfg.epochs()).unwrap();
    let old: BTreeSet<_> = base.events_iter().map(|e| e.id).collect();
    let added: Vec<&Event> = more.events_iter().filter(|e| !old.contains(&e.id)).collect();
    let conversions: Vec<&Event> = base.events_iter().filter(|e| e.is_conversion() && e.timestamp > 0).collect();
    assert_eq!(added.len(), conversions.len());
    for c in conversions {
        let product = c.attr("product").unwrap();
        let matching = added
            .iter()
            .filter(|i| {
                i.device == c.device
                    && i.attr("campaign") == Some(product)
                    && i.timestamp < c.timestamp
                    && i.timestamp >= c.timestamp.saturating_sub(30 * DAY)
            })
            .count();
        assert!(matching >= 1, "conversion {:?} gained no impression", c.id);
    }
}

#[test]
fn default_schedule_has_twenty_queries() {
    let cfg = MicrobenchmarkConfig { knob2: 0.01, ..Default::default() };
    let out = run_scenario(&db_of(&cfg), &ScenarioConfig::default(), &cfg).unwrap();
    assert_eq!(out.records.len(), 20);
    let mut per_product: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &out.records {
        *per_product.entry(r.product.as_str()).or_default() += 1;
    }
    assert!(per_product.values().all(|n| *n == 2));
}

#[test]
fn knob2_zero_gives_null_reports() {
    let cfg = MicrobenchmarkConfig { knob2: 0.0, ..small() };
    let out = run_scenario(&db_of(&cfg), &ScenarioConfig::default(), &cfg).unwrap();
    assert!(out.batches.iter().flatten().all(|r| r.payload.iter().all(|x| x.is_zero())));
    assert!(out.snapshot.values().all(|v| v.is_zero()));
}

#[test]
fn driver_declares_max_value_as_sensitivity() {
    let cfg = small();
    let c = Event::conversion(1, 40 * DAY, DeviceId(1), Fixed::from_int(3)).with_attr("product", "product-0");
    let r = conversion_request(&c, "nike.com", "product-0", Fixed::ONE, &cfg, &Schema::default(), &cfg.epochs());
    assert_eq!(r.report_global_sensitivity, cfg.max_conversion_value);
    assert_eq!(r.query_global_sensitivity, cfg.max_conversion_value);
    assert_eq!(r.epochs, cfg.epochs().epochs_between(10 * DAY, 40 * DAY));
    assert!(r.validate().is_ok());
}

#[test]
fn queries_per_product_limits_schedule() {
    let cfg = small();
    let scenario = ScenarioConfig { queries_per_product: Some(1), ..Default::default() };
    let out = run_scenario(&db_of(&cfg), &scenario, &cfg).unwrap();
    assert_eq!(out.records.len(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generation_is_reproducible(seed in any::<u64>(), knob1 in 0.05f64..=1.0, knob2 in 0.0f64..0.5) {
        let cfg = MicrobenchmarkConfig { seed, knob1, knob2, ..small() };
        let a = generate_microbenchmark(&cfg, &Schema::default()).unwrap();
        prop_assert_eq!(&a, &generate_microbenchmark(&cfg, &Schema::default()).unwrap());
        prop_assert_eq!(a.iter().filter(|e| e.is_conversion()).count(), 200);
        let values_ok = a.iter().filter(|e| e.is_conversion()).all(|e| e.value >= Fixed::ONE && e.value <= cfg.max_conversion_value);
        prop_assert!(values_ok);
    }

    #[test]
    fn every_conversion_in_exactly_one_batch(seed in any::<u64>(), knob1 in 0.05f64..=1.0) {
        let cfg = MicrobenchmarkConfig { seed, knob1, ..small() };
        let out = run_scenario(&db_of(&cfg), &ScenarioConfig::default(), &cfg).unwrap();
        let refs: Vec<u64> = out.batches.iter().flatten().map(|r| r.request_ref).collect();
        let distinct: BTreeSet<u64> = refs.iter().copied().collect();
        prop_assert_eq!(refs.len(), 200);
        prop_assert_eq!(distinct.len(), 200);
        for batch in &out.batches {
            let devices: BTreeSet<DeviceId> = batch.iter().map(|r| r.device).collect();
            prop_assert_eq!(devices.len(), batch.len());
        }
    }
}
