#![allow(dead_code)]

use cookie_monster_core::*;
use proptest::prelude::*;

pub const EPOCH_LEN: u64 = 100;

/// Compact description of an event, turned into an `Event` for a device and
/// epoch by `build`.
#[derive(Debug, Clone)]
pub struct EventSpec {
    pub offset: u64,
    pub nike: bool,
    pub slot_b: bool,
    pub conversion: bool,
    pub weight: i64,
}

pub fn event_spec() -> impl Strategy<Value = EventSpec> {
    (0u64..EPOCH_LEN, any::<bool>(), any::<bool>(), prop::bool::weighted(0.2), 1i64..=5).prop_map(
        |(offset, nike, slot_b, conversion, weight)| EventSpec { offset, nike, slot_b, conversion, weight },
    )
}

pub fn build(shape: &EventSpec, id: u64, device: DeviceId, epoch: u64) -> Event {
    let ts = epoch * EPOCH_LEN + shape.offset;
    let campaign = if shape.nike { "nike" } else { "adidas" };
    let slot = if shape.slot_b { "b" } else { "a" };
    if shape.conversion {
        Event::conversion(id, ts, device, Fixed::from_int(shape.weight)).with_attr("campaign", campaign)
    } else {
        Event::impression(id, ts, device)
            .with_attr("campaign", campaign)
            .with_attr("slot", slot)
            .with_attr("weight", shape.weight.to_string())
    }
}

/// Per-epoch specs for a window of `k` epochs, at most `max` events each.
pub fn window_specs(k: usize, max: usize) -> impl Strategy<Value = Vec<Vec<EventSpec>>> {
    prop::collection::vec(prop::collection::vec(event_spec(), 0..=max), k)
}

/// Materializes the events of a window on `device`, epochs `1..=k`, with
/// ids unique across the window.
pub fn materialize(specs: &[Vec<EventSpec>], device: DeviceId) -> Vec<Vec<Event>> {
    let mut id = 0;
    specs
        .iter()
        .enumerate()
        .map(|(i, epoch)| {
            epoch
                .iter()
                .map(|s| {
                    id += 1;
                    build(s, device.0 * 1000 + id, device, i as u64 + 1)
                })
                .collect()
        })
        .collect()
}

pub fn borrow(events: &[Vec<Event>]) -> Vec<EventSet<'_>> {
    events.iter().map(|e| e.iter().collect()).collect()
}

pub fn slot_bins() -> BinSpec {
    BinSpec::ByAttribute { key: "slot".into(), values: vec!["a".into(), "b".into()], fallback: 0 }
}

/// The logics exercised by property tests, with a matching conversion value.
pub fn logic() -> impl Strategy<Value = AttributionLogic> {
    prop_oneof![
        (1usize..=2).prop_map(|m| AttributionLogic::LastTouch {
            bins: if m == 1 { BinSpec::default() } else { slot_bins() },
            max_bins: m
        }),
        (1usize..=3).prop_map(|m| AttributionLogic::EqualCredit { max_impressions: m }),
        (1usize..=2, 0usize..4, 1i64..=10).prop_map(|(m, w, cap)| AttributionLogic::HistogramSum {
            weights: match w {
                0 => WeightRule::LastTouch,
                1 => WeightRule::EqualSplit,
                2 => WeightRule::PerEvent { weight: Fixed::from_int(2) },
                _ => WeightRule::AttrWeight { key: "weight".into() },
            },
            bins: if m == 1 { BinSpec::default() } else { slot_bins() },
            dimension: m,
            cap: Fixed::from_int(cap),
        }),
    ]
}

/// A request over epochs `1..=k` whose declared report sensitivity is the
/// smallest sound value, or larger by `slack`.
pub fn request(logic: AttributionLogic, k: usize, value: i64, slack: i64, pnorm: PNorm) -> AttributionRequest {
    let mut r = AttributionRequest {
        querier_site: "nike.com".into(),
        epochs: (1..=k as u64).map(EpochId).collect(),
        relevance: EventPredicate::impressions_with("campaign", "nike"),
        logic,
        conversion_value: Fixed::from_int(value),
        report_global_sensitivity: Fixed::ONE,
        query_global_sensitivity: Fixed::ONE,
        requested_epsilon: Fixed::ONE,
        pnorm,
    };
    let provable = cookie_monster_core::sensitivity::provable_report_sensitivity(&r);
    let report = provable.max(Fixed::from_int(1)) + Fixed::from_int(slack);
    r.report_global_sensitivity = report;
    r.query_global_sensitivity = report + Fixed::from_int(slack);
    r
}
