use std::collections::BTreeMap;

use crate::model::{TxRef, TxValidity};

/// Validation results waiting for the committer. Each entry is written at
/// most once and removed when popped.
#[derive(Debug, Clone, Default)]
pub struct ResultMap {
    map: BTreeMap<TxRef, TxValidity>,
}

impl ResultMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false, leaving the map unchanged, if `r` already has a result.
    pub fn insert(&mut self, r: TxRef, v: TxValidity) -> bool {
        match self.map.entry(r) {
            std::collections::btree_map::Entry::Occupied(_) => false,
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(v);
                true
            }
        }
    }

    pub fn get(&self, r: TxRef) -> Option<TxValidity> {
        self.map.get(&r).copied()
    }

    pub fn pop(&mut self, r: TxRef) -> Option<TxValidity> {
        self.map.remove(&r)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
