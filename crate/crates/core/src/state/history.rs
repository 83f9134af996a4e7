use crate::model::{StateKey, Version};

/// Append-only `(key, version)` record per committed valid write.
#[derive(Debug, Clone, Default)]
pub struct HistoryDb {
    records: Vec<(StateKey, Version)>,
}

impl HistoryDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, key: StateKey, version: Version) {
        self.records.push((key, version));
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scan(&self) -> impl Iterator<Item = &(StateKey, Version)> {
        self.records.iter()
    }

    pub fn versions_of<'a>(&'a self, key: &'a StateKey) -> impl Iterator<Item = Version> + 'a {
        self.records.iter().filter(move |(k, _)| k == key).map(|(_, v)| *v)
    }
}
