use std::collections::{BTreeMap, BTreeSet};

use super::StateError;
use crate::model::{ContractId, StateKey, Version, WriteEntry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirtyEntry {
    pub version: Version,
    pub value: Vec<u8>,
    pub is_delete: bool,
}

/// Writes of validated but uncommitted transactions. Each key keeps its
/// full version list so out-of-order application is caught.
#[derive(Debug, Clone, Default)]
pub struct DirtyStateBuffer {
    entries: BTreeMap<StateKey, Vec<DirtyEntry>>,
    by_block: BTreeMap<u64, BTreeSet<StateKey>>,
}

impl DirtyStateBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of keys with at least one pending entry.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn latest(&self, key: &StateKey) -> Option<&DirtyEntry> {
        self.entries.get(key).and_then(|l| l.last())
    }

    pub fn versions(&self, key: &StateKey) -> &[DirtyEntry] {
        self.entries.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Checks that every write can be appended at `version`.
    pub fn check_apply<'a>(&self, version: Version, writes: impl IntoIterator<Item = &'a WriteEntry>) -> Result<(), StateError> {
        for w in writes {
            if let Some(last) = self.latest(&w.key) {
                if last.version >= version {
                    return Err(StateError::DirtyOrder {
                        key: w.key.clone(),
                        last: last.version,
                        got: version,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn apply<'a>(&mut self, version: Version, writes: impl IntoIterator<Item = &'a WriteEntry> + Clone) -> Result<(), StateError> {
        self.check_apply(version, writes.clone())?;
        for w in writes {
            self.entries.entry(w.key.clone()).or_default().push(DirtyEntry {
                version,
                value: w.value.clone(),
                is_delete: w.is_delete,
            });
            self.by_block.entry(version.block).or_default().insert(w.key.clone());
        }
        Ok(())
    }

    /// Drops every entry whose version belongs to `block`.
    pub fn purge_block(&mut self, block: u64) {
        let Some(keys) = self.by_block.remove(&block) else {
            return;
        };
        for key in keys {
            if let Some(list) = self.entries.get_mut(&key) {
                list.retain(|e| e.version.block != block);
                if list.is_empty() {
                    self.entries.remove(&key);
                }
            }
        }
    }

    /// Latest entry per key of `contract` in `[start, end)`, tombstones included.
    pub fn range<'a>(
        &'a self,
        contract: &ContractId,
        start: &[u8],
        end: Option<&'a [u8]>,
    ) -> impl Iterator<Item = (&'a StateKey, &'a DirtyEntry)> + 'a {
        let lo = StateKey::new(contract.clone(), start.to_vec());
        let contract = contract.clone();
        self.entries
            .range(lo..)
            .take_while(move |(k, _)| k.contract == contract && end.is_none_or(|e| k.key.as_slice() < e))
            .filter_map(|(k, l)| l.last().map(|e| (k, e)))
    }

    pub fn keys(&self) -> impl Iterator<Item = &StateKey> {
        self.entries.keys()
    }
}
