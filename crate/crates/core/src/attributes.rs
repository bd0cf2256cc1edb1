//! Sparse numeric attribute storage keyed by `(entity, attribute type)`.

use std::collections::BTreeMap;

use crate::error::AttrError;
use crate::graph::{AttrTypeId, EntityId, Interner};

pub type AttrKey = (EntityId, AttrTypeId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttrStatus {
    Observed,
    Missing,
    Imputed,
}

/// A stored attribute slot. `Missing` slots carry `NaN` until imputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttrEntry {
    pub value: f64,
    pub status: AttrStatus,
}

impl AttrEntry {
    pub fn observed(value: f64) -> Self {
        Self {
            value,
            status: AttrStatus::Observed,
        }
    }

    pub fn missing() -> Self {
        Self {
            value: f64::NAN,
            status: AttrStatus::Missing,
        }
    }

    pub fn is_observed(&self) -> bool {
        self.status == AttrStatus::Observed
    }
}

/// Summary of the observed values of one attribute type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeSummary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl TypeSummary {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, Default)]
pub struct AttributeTable {
    types: Interner,
    entries: BTreeMap<AttrKey, AttrEntry>,
}

impl AttributeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_types(types: Interner) -> Self {
        Self {
            types,
            entries: BTreeMap::new(),
        }
    }

    pub fn intern_type(&mut self, label: &str) -> AttrTypeId {
        AttrTypeId(self.types.intern(label))
    }

    pub fn types(&self) -> &Interner {
        &self.types
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn type_id(&self, label: &str) -> Option<AttrTypeId> {
        self.types.get(label).map(AttrTypeId)
    }

    pub fn type_label(&self, id: AttrTypeId) -> &str {
        self.types.label(id.0).unwrap_or("<invalid>")
    }

    pub fn type_ids(&self) -> impl Iterator<Item = AttrTypeId> {
        (0..self.types.len() as u32).map(AttrTypeId)
    }

    pub fn insert(&mut self, key: AttrKey, entry: AttrEntry) {
        self.entries.insert(key, entry);
    }

    pub fn get(&self, key: AttrKey) -> Option<&AttrEntry> {
        self.entries.get(&key)
    }

    /// Records an imputed value for a non-observed slot.
    ///
    /// Observed slots are never overwritten; returns `false` if `key` is
    /// observed or absent.
    pub fn set_imputed(&mut self, key: AttrKey, value: f64) -> bool {
        match self.entries.get_mut(&key) {
            Some(e) if e.status != AttrStatus::Observed => {
                e.value = value;
                e.status = AttrStatus::Imputed;
                true
            }
            _ => false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All slots in `(entity, type)` order.
    pub fn iter(&self) -> impl Iterator<Item = (AttrKey, &AttrEntry)> {
        self.entries.iter().map(|(k, e)| (*k, e))
    }

    /// Slots of one entity in type order.
    pub fn of_entity(&self, e: EntityId) -> impl Iterator<Item = (AttrTypeId, &AttrEntry)> {
        self.entries
            .range((e, AttrTypeId(0))..=(e, AttrTypeId(u32::MAX)))
            .map(|((_, a), entry)| (*a, entry))
    }

    pub fn observed_value(&self, key: AttrKey) -> Option<f64> {
        self.entries
            .get(&key)
            .filter(|e| e.is_observed())
            .map(|e| e.value)
    }

    pub fn observed_of_type(&self, a: AttrTypeId) -> impl Iterator<Item = f64> + '_ {
        self.entries
            .iter()
            .filter(move |((_, t), e)| *t == a && e.is_observed())
            .map(|(_, e)| e.value)
    }

    pub fn summary(&self, a: AttrTypeId) -> Option<TypeSummary> {
        let mut count = 0usize;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for v in self.observed_of_type(a) {
            count += 1;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        (count > 0).then(|| TypeSummary {
            count,
            min,
            max,
            mean: sum / count as f64,
        })
    }

    /// Summaries for every type, indexed by type id.
    pub fn summaries(&self) -> Vec<Option<TypeSummary>> {
        let n = self.types.len();
        let mut acc = vec![(0usize, f64::INFINITY, f64::NEG_INFINITY, 0.0f64); n];
        for ((_, a), e) in &self.entries {
            if e.is_observed() {
                let s = &mut acc[a.index()];
                s.0 += 1;
                s.1 = s.1.min(e.value);
                s.2 = s.2.max(e.value);
                s.3 += e.value;
            }
        }
        acc.into_iter()
            .map(|(count, min, max, sum)| {
                (count > 0).then(|| TypeSummary {
                    count,
                    min,
                    max,
                    mean: sum / count as f64,
                })
            })
            .collect()
    }

    /// `max − min` over observed values of type `a`.
    pub fn attr_range(&self, a: AttrTypeId) -> Result<f64, AttrError> {
        self.checked_summary(a).map(|s| s.range())
    }

    pub fn observed_mean(&self, a: AttrTypeId) -> Result<f64, AttrError> {
        self.checked_summary(a).map(|s| s.mean)
    }

    fn checked_summary(&self, a: AttrTypeId) -> Result<TypeSummary, AttrError> {
        if a.index() >= self.types.len() {
            return Err(AttrError::UnknownType(a.0));
        }
        self.summary(a)
            .ok_or_else(|| AttrError::NoObserved(self.type_label(a).to_owned()))
    }

    pub fn count_status(&self, status: AttrStatus) -> usize {
        self.entries.values().filter(|e| e.status == status).count()
    }
}
