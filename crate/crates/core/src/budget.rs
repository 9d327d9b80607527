//! Pure-DP privacy filters and the per-(querier, device, epoch) store.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::fixed::Fixed;
use crate::model::{DeviceId, EpochId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BudgetError {
    #[error("privacy loss must be non-negative, got {0}")]
    NegativeLoss(Fixed),
    #[error("filter capacity must be non-negative, got {0}")]
    NegativeCapacity(Fixed),
    #[error("consumed budget {consumed} exceeds capacity {capacity}")]
    OverCapacity { consumed: Fixed, capacity: Fixed },
    #[error("noise scale must be positive")]
    ZeroSigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    Continue,
    Halt,
}

/// Adds up consumed budget and halts once a deduction would exceed capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyFilter {
    capacity: Fixed,
    consumed: Fixed,
}

impl PrivacyFilter {
    pub fn new(capacity: Fixed) -> Result<Self, BudgetError> {
        Self::with_consumed(capacity, Fixed::ZERO)
    }

    pub fn with_consumed(capacity: Fixed, consumed: Fixed) -> Result<Self, BudgetError> {
        if capacity.is_negative() {
            return Err(BudgetError::NegativeCapacity(capacity));
        }
        if consumed.is_negative() {
            return Err(BudgetError::NegativeLoss(consumed));
        }
        if consumed > capacity {
            return Err(BudgetError::OverCapacity { consumed, capacity });
        }
        Ok(PrivacyFilter { capacity, consumed })
    }

    /// A filter with no budget left.
    pub fn exhausted(capacity: Fixed) -> Result<Self, BudgetError> {
        Self::with_consumed(capacity, capacity)
    }

    pub fn capacity(&self) -> Fixed {
        self.capacity
    }

    pub fn consumed(&self) -> Fixed {
        self.consumed
    }

    pub fn remaining(&self) -> Fixed {
        self.capacity - self.consumed
    }

    /// Halts, leaving the filter untouched, when `consumed + loss` would
    /// exceed capacity; otherwise records the loss.
    pub fn try_consume(&mut self, loss: Fixed) -> Result<FilterStatus, BudgetError> {
        if loss.is_negative() {
            return Err(BudgetError::NegativeLoss(loss));
        }
        match self.consumed.checked_add(loss) {
            Some(total) if total <= self.capacity => {
                self.consumed = total;
                Ok(FilterStatus::Continue)
            }
            _ => Ok(FilterStatus::Halt),
        }
    }

    /// Whether `loss` would be admitted, without consuming it.
    pub fn can_consume(&self, loss: Fixed) -> bool {
        self.consumed.checked_add(loss).is_some_and(|t| t <= self.capacity)
    }
}

/// Identifies the filter of one device-epoch as seen by one querier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FilterKey {
    pub querier: String,
    pub device: DeviceId,
    pub epoch: EpochId,
}

impl FilterKey {
    pub fn new(querier: impl Into<String>, device: DeviceId, epoch: EpochId) -> Self {
        FilterKey { querier: querier.into(), device, epoch }
    }
}

/// Anything a device can charge privacy loss against.
pub trait FilterStorage {
    /// Atomic check-and-consume on the filter for `key`.
    fn try_consume(&mut self, key: &FilterKey, loss: Fixed) -> Result<FilterStatus, BudgetError>;
}

impl<S: FilterStorage + ?Sized> FilterStorage for &mut S {
    fn try_consume(&mut self, key: &FilterKey, loss: Fixed) -> Result<FilterStatus, BudgetError> {
        (**self).try_consume(key, loss)
    }
}

/// Filters created lazily on first touch with a default capacity, or with
/// a per-record override when one is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterStore {
    default_capacity: Fixed,
    overrides: BTreeMap<FilterKey, Fixed>,
    filters: BTreeMap<FilterKey, PrivacyFilter>,
}

impl FilterStore {
    pub fn new(default_capacity: Fixed) -> Result<Self, BudgetError> {
        if default_capacity.is_negative() {
            return Err(BudgetError::NegativeCapacity(default_capacity));
        }
        Ok(FilterStore { default_capacity, overrides: BTreeMap::new(), filters: BTreeMap::new() })
    }

    pub fn default_capacity(&self) -> Fixed {
        self.default_capacity
    }

    /// Capacity for `key` when it is first touched.
    pub fn set_capacity(&mut self, key: FilterKey, capacity: Fixed) -> Result<(), BudgetError> {
        if capacity.is_negative() {
            return Err(BudgetError::NegativeCapacity(capacity));
        }
        self.overrides.insert(key, capacity);
        Ok(())
    }

    /// Installs a filter in a given state, replacing any existing one.
    pub fn insert_filter(&mut self, key: FilterKey, filter: PrivacyFilter) {
        self.filters.insert(key, filter);
    }

    pub fn capacity_for(&self, key: &FilterKey) -> Fixed {
        self.overrides.get(key).copied().unwrap_or(self.default_capacity)
    }

    pub fn get(&self, key: &FilterKey) -> Option<&PrivacyFilter> {
        self.filters.get(key)
    }

    pub fn consumed(&self, key: &FilterKey) -> Fixed {
        self.filters.get(key).map_or(Fixed::ZERO, PrivacyFilter::consumed)
    }

    pub fn filters(&self) -> impl Iterator<Item = (&FilterKey, &PrivacyFilter)> {
        self.filters.iter()
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Point-in-time copy of every touched filter's consumption.
    pub fn snapshot(&self) -> BTreeMap<FilterKey, Fixed> {
        self.filters.iter().map(|(k, f)| (k.clone(), f.consumed())).collect()
    }
}

impl FilterStorage for FilterStore {
    fn try_consume(&mut self, key: &FilterKey, loss: Fixed) -> Result<FilterStatus, BudgetError> {
        if loss.is_negative() {
            return Err(BudgetError::NegativeLoss(loss));
        }
        if let Some(f) = self.filters.get_mut(key) {
            return f.try_consume(loss);
        }
        let mut f = PrivacyFilter::new(self.capacity_for(key))?;
        let status = f.try_consume(loss)?;
        self.filters.insert(key.clone(), f);
        Ok(status)
    }
}

/// Never halts; records what would have been consumed. Used for shadow
/// executions that compute the unbiased answer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnlimitedBudget {
    consumed: BTreeMap<FilterKey, Fixed>,
}

impl UnlimitedBudget {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> BTreeMap<FilterKey, Fixed> {
        self.consumed.clone()
    }
}

impl FilterStorage for UnlimitedBudget {
    fn try_consume(&mut self, key: &FilterKey, loss: Fixed) -> Result<FilterStatus, BudgetError> {
        if loss.is_negative() {
            return Err(BudgetError::NegativeLoss(loss));
        }
        let c = self.consumed.entry(key.clone()).or_default();
        *c = c.saturating_add(loss);
        Ok(FilterStatus::Continue)
    }
}

/// Pure-DP budget `Δ√2/σ` of a Laplace mechanism with standard deviation
/// `σ` (scale `σ/√2`) for a record whose sensitivity is at most `Δ`.
pub fn compute_individual_budget(delta_upper: f64, sigma: f64) -> Result<f64, BudgetError> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(BudgetError::ZeroSigma);
    }
    Ok(delta_upper * core::f64::consts::SQRT_2 / sigma)
}
