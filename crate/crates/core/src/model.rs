//! Events, device-epoch records and the database they live in.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::fixed::Fixed;

/// Seconds since the start of a scenario.
pub type Timestamp = u64;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u64);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpochId(pub u64);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub u64);

macro_rules! id_fmt {
    ($($t:ident => $p:literal),*) => {$(
        impl fmt::Debug for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($p, "{}"), self.0)
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    )*};
}
id_fmt!(DeviceId => "d", EpochId => "e", EventId => "#");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Impression,
    Conversion,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("device-epoch ({device:?}, {epoch:?}) is already present")]
    DuplicateDeviceEpoch { device: DeviceId, epoch: EpochId },
    #[error("event id {0:?} appears more than once")]
    DuplicateEventId(EventId),
    #[error("event {event:?} belongs to device {found:?}, record is for {expected:?}")]
    DeviceMismatch { event: EventId, expected: DeviceId, found: DeviceId },
    #[error("event {event:?} falls in epoch {found:?}, record is for {expected:?}")]
    EpochMismatch { event: EventId, expected: EpochId, found: EpochId },
    #[error("impression {0:?} carries a non-zero value")]
    ImpressionWithValue(EventId),
    #[error("event {0:?} has a negative value")]
    NegativeValue(EventId),
    #[error("epoch length must be positive")]
    ZeroEpochLength,
}

/// An impression or conversion recorded on a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub id: EventId,
    pub kind: EventKind,
    pub timestamp: Timestamp,
    pub device: DeviceId,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub value: Fixed,
}

impl Event {
    pub fn impression(id: u64, timestamp: Timestamp, device: DeviceId) -> Self {
        Event {
            id: EventId(id),
            kind: EventKind::Impression,
            timestamp,
            device,
            attributes: BTreeMap::new(),
            value: Fixed::ZERO,
        }
    }

    pub fn conversion(id: u64, timestamp: Timestamp, device: DeviceId, value: Fixed) -> Self {
        Event {
            id: EventId(id),
            kind: EventKind::Conversion,
            timestamp,
            device,
            attributes: BTreeMap::new(),
            value,
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }

    pub fn is_impression(&self) -> bool {
        self.kind == EventKind::Impression
    }

    pub fn is_conversion(&self) -> bool {
        self.kind == EventKind::Conversion
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.value.is_negative() {
            return Err(ModelError::NegativeValue(self.id));
        }
        if self.is_impression() && !self.value.is_zero() {
            return Err(ModelError::ImpressionWithValue(self.id));
        }
        Ok(())
    }

    /// Chronological key; lower ids come first on equal timestamps.
    pub(crate) fn chrono_key(&self) -> (Timestamp, EventId) {
        (self.timestamp, self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochConfig {
    /// Epoch length in seconds.
    pub epoch_length: u64,
}

impl EpochConfig {
    pub const DAY: u64 = 86_400;

    pub fn new(epoch_length: u64) -> Result<Self, ModelError> {
        if epoch_length == 0 {
            return Err(ModelError::ZeroEpochLength);
        }
        Ok(EpochConfig { epoch_length })
    }

    pub fn days(days: u64) -> Self {
        EpochConfig { epoch_length: days * Self::DAY }
    }

    pub fn epoch_of(&self, timestamp: Timestamp) -> EpochId {
        epoch_of(timestamp, self)
    }

    /// Inclusive epoch range covering `[from, to]`.
    pub fn epochs_between(&self, from: Timestamp, to: Timestamp) -> Vec<EpochId> {
        let (a, b) = (self.epoch_of(from.min(to)).0, self.epoch_of(from.max(to)).0);
        (a..=b).map(EpochId).collect()
    }
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig::days(7)
    }
}

/// Zero-based epoch index of a timestamp.
pub fn epoch_of(timestamp: Timestamp, config: &EpochConfig) -> EpochId {
    EpochId(timestamp / config.epoch_length)
}

/// The unit of protection: one device's events in one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEpochRecord {
    pub device: DeviceId,
    pub epoch: EpochId,
    events: Vec<Event>,
}

impl DeviceEpochRecord {
    /// Builds a record, checking that every event sits on `device`. Events
    /// are kept in chronological order.
    pub fn new(device: DeviceId, epoch: EpochId, mut events: Vec<Event>) -> Result<Self, ModelError> {
        let mut ids = BTreeSet::new();
        for e in &events {
            if e.device != device {
                return Err(ModelError::DeviceMismatch { event: e.id, expected: device, found: e.device });
            }
            e.validate()?;
            if !ids.insert(e.id) {
                return Err(ModelError::DuplicateEventId(e.id));
            }
        }
        events.sort_by_key(Event::chrono_key);
        Ok(DeviceEpochRecord { device, epoch, events })
    }

    pub fn empty(device: DeviceId, epoch: EpochId) -> Self {
        DeviceEpochRecord { device, epoch, events: Vec::new() }
    }

    /// Checks the epoch invariant against an epoch configuration.
    pub fn check_epochs(&self, config: &EpochConfig) -> Result<(), ModelError> {
        for e in &self.events {
            let found = config.epoch_of(e.timestamp);
            if found != self.epoch {
                return Err(ModelError::EpochMismatch { event: e.id, expected: self.epoch, found });
            }
        }
        Ok(())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The record restricted to events in `public`.
    pub fn public_part(&self, public: &PublicEventSet) -> DeviceEpochRecord {
        DeviceEpochRecord {
            device: self.device,
            epoch: self.epoch,
            events: self.events.iter().filter(|e| public.contains(e)).cloned().collect(),
        }
    }
}

/// A set of device-epoch records with at most one record per key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Database {
    records: BTreeMap<(DeviceId, EpochId), DeviceEpochRecord>,
    event_ids: BTreeSet<EventId>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    /// `D + x`. Fails if `(x.device, x.epoch)` is already present.
    pub fn add_record(&mut self, record: DeviceEpochRecord) -> Result<(), ModelError> {
        let key = (record.device, record.epoch);
        if self.records.contains_key(&key) {
            return Err(ModelError::DuplicateDeviceEpoch { device: record.device, epoch: record.epoch });
        }
        if let Some(dup) = record.events.iter().find(|e| self.event_ids.contains(&e.id)) {
            return Err(ModelError::DuplicateEventId(dup.id));
        }
        self.event_ids.extend(record.events.iter().map(|e| e.id));
        self.records.insert(key, record);
        Ok(())
    }

    /// Consuming variant of [`Database::add_record`].
    pub fn with_record(mut self, record: DeviceEpochRecord) -> Result<Self, ModelError> {
        self.add_record(record)?;
        Ok(self)
    }

    pub fn remove_record(&mut self, device: DeviceId, epoch: EpochId) -> Option<DeviceEpochRecord> {
        let rec = self.records.remove(&(device, epoch))?;
        for e in &rec.events {
            self.event_ids.remove(&e.id);
        }
        Some(rec)
    }

    /// Partitions an event stream into device-epoch records.
    pub fn from_events<I>(events: I, config: &EpochConfig) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = Event>,
    {
        let mut grouped: BTreeMap<(DeviceId, EpochId), Vec<Event>> = BTreeMap::new();
        for e in events {
            grouped.entry((e.device, config.epoch_of(e.timestamp))).or_default().push(e);
        }
        let mut db = Database::new();
        for ((device, epoch), evs) in grouped {
            db.add_record(DeviceEpochRecord::new(device, epoch, evs)?)?;
        }
        Ok(db)
    }

    /// `D_d^e`; empty when the record is absent.
    pub fn events(&self, device: DeviceId, epoch: EpochId) -> &[Event] {
        self.records.get(&(device, epoch)).map(|r| r.events()).unwrap_or(&[])
    }

    /// `D_d^E`, one slice per requested epoch, in the order given.
    pub fn device_epoch_events(&self, device: DeviceId, epochs: &[EpochId]) -> Vec<&[Event]> {
        epochs.iter().map(|&e| self.events(device, e)).collect()
    }

    pub fn record(&self, device: DeviceId, epoch: EpochId) -> Option<&DeviceEpochRecord> {
        self.records.get(&(device, epoch))
    }

    pub fn contains(&self, device: DeviceId, epoch: EpochId) -> bool {
        self.records.contains_key(&(device, epoch))
    }

    pub fn records(&self) -> impl Iterator<Item = &DeviceEpochRecord> {
        self.records.values()
    }

    pub fn events_iter(&self) -> impl Iterator<Item = &Event> {
        self.records.values().flat_map(|r| r.events.iter())
    }

    pub fn devices(&self) -> BTreeSet<DeviceId> {
        self.records.keys().map(|(d, _)| *d).collect()
    }

    pub fn epochs(&self) -> BTreeSet<EpochId> {
        self.records.keys().map(|(_, e)| *e).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn event_count(&self) -> usize {
        self.event_ids.len()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.records.into_values().flat_map(DeviceEpochRecord::into_events).collect()
    }
}

/// Deterministic predicate over events, expressible in configuration files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum EventPredicate {
    Any,
    Nothing,
    Kind { kind: EventKind },
    AttrEquals { key: String, value: String },
    AttrIn { key: String, values: Vec<String> },
    And { all: Vec<EventPredicate> },
    Or { any: Vec<EventPredicate> },
    Not { not: alloc::boxed::Box<EventPredicate> },
    /// `start <= timestamp <= end`.
    TimeWindow { start: Timestamp, end: Timestamp },
}

impl EventPredicate {
    pub fn matches(&self, event: &Event) -> bool {
        match self {
            EventPredicate::Any => true,
            EventPredicate::Nothing => false,
            EventPredicate::Kind { kind } => event.kind == *kind,
            EventPredicate::AttrEquals { key, value } => event.attr(key) == Some(value.as_str()),
            EventPredicate::AttrIn { key, values } => {
                event.attr(key).is_some_and(|v| values.iter().any(|x| x == v))
            }
            EventPredicate::And { all } => all.iter().all(|p| p.matches(event)),
            EventPredicate::Or { any } => any.iter().any(|p| p.matches(event)),
            EventPredicate::Not { not } => !not.matches(event),
            EventPredicate::TimeWindow { start, end } => (*start..=*end).contains(&event.timestamp),
        }
    }

    pub fn kind(kind: EventKind) -> Self {
        EventPredicate::Kind { kind }
    }

    pub fn attr_eq(key: impl Into<String>, value: impl Into<String>) -> Self {
        EventPredicate::AttrEquals { key: key.into(), value: value.into() }
    }

    pub fn and(self, other: EventPredicate) -> Self {
        match self {
            EventPredicate::And { mut all } => {
                all.push(other);
                EventPredicate::And { all }
            }
            p => EventPredicate::And { all: alloc::vec![p, other] },
        }
    }

    /// Impressions whose `key` attribute equals `value`.
    pub fn impressions_with(key: impl Into<String>, value: impl Into<String>) -> Self {
        EventPredicate::kind(EventKind::Impression).and(EventPredicate::attr_eq(key, value))
    }
}

/// Events a fixed querier can observe on its own (e.g. conversions on its
/// site).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PublicEventSet(pub EventPredicate);

impl PublicEventSet {
    /// Conversions whose `site_key` attribute equals `site`.
    pub fn conversions_on(site_key: impl Into<String>, site: impl Into<String>) -> Self {
        PublicEventSet(EventPredicate::kind(EventKind::Conversion).and(EventPredicate::attr_eq(site_key, site)))
    }

    pub fn contains(&self, event: &Event) -> bool {
        self.0.matches(event)
    }
}
