//! Filter store shared between device worker threads.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, PoisonError};

use cookie_monster_core::{BudgetError, FilterKey, FilterStatus, FilterStorage, Fixed, PrivacyFilter};

/// Each filter sits behind its own lock: consumption on one device-epoch
/// never waits on another, and check-and-deduct is atomic per filter.
#[derive(Debug)]
pub struct SharedFilterStore {
    default_capacity: Fixed,
    filters: Mutex<BTreeMap<FilterKey, Arc<Mutex<PrivacyFilter>>>>,
}

impl SharedFilterStore {
    pub fn new(default_capacity: Fixed) -> Result<Self, BudgetError> {
        PrivacyFilter::new(default_capacity)?;
        Ok(SharedFilterStore { default_capacity, filters: Mutex::new(BTreeMap::new()) })
    }

    fn filter(&self, key: &FilterKey) -> Arc<Mutex<PrivacyFilter>> {
        let mut map = self.filters.lock().unwrap_or_else(PoisonError::into_inner);
        map.entry(key.clone())
            .or_insert_with(|| Arc::new(Mutex::new(PrivacyFilter::new(self.default_capacity).expect("checked in new"))))
            .clone()
    }

    pub fn consumed(&self, key: &FilterKey) -> Fixed {
        let map = self.filters.lock().unwrap_or_else(PoisonError::into_inner);
        map.get(key).map_or(Fixed::ZERO, |f| f.lock().unwrap_or_else(PoisonError::into_inner).consumed())
    }

    pub fn snapshot(&self) -> BTreeMap<FilterKey, Fixed> {
        let map = self.filters.lock().unwrap_or_else(PoisonError::into_inner);
        map.iter().map(|(k, f)| (k.clone(), f.lock().unwrap_or_else(PoisonError::into_inner).consumed())).collect()
    }
}

impl FilterStorage for &SharedFilterStore {
    fn try_consume(&mut self, key: &FilterKey, loss: Fixed) -> Result<FilterStatus, BudgetError> {
        let filter = self.filter(key);
        let mut guard = filter.lock().unwrap_or_else(PoisonError::into_inner);
        guard.try_consume(loss)
    }
}
