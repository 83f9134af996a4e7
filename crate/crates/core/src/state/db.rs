use std::collections::BTreeMap;

use crate::codec::Encoder;
use crate::digest::Digest;
use crate::model::{ContractId, StateKey, Version};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedValue {
    pub value: Vec<u8>,
    pub version: Version,
}

/// Committed state, ordered by key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StateDb {
    entries: BTreeMap<StateKey, VersionedValue>,
}

impl StateDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &StateKey) -> Option<&VersionedValue> {
        self.entries.get(key)
    }

    pub fn put(&mut self, key: StateKey, value: Vec<u8>, version: Version) {
        self.entries.insert(key, VersionedValue { value, version });
    }

    pub fn delete(&mut self, key: &StateKey) -> Option<VersionedValue> {
        self.entries.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &VersionedValue)> {
        self.entries.iter()
    }

    /// Entries of `contract` with keys in `[start, end)`.
    pub fn range<'a>(
        &'a self,
        contract: &ContractId,
        start: &[u8],
        end: Option<&'a [u8]>,
    ) -> impl Iterator<Item = (&'a StateKey, &'a VersionedValue)> + 'a {
        let lo = StateKey::new(contract.clone(), start.to_vec());
        let contract = contract.clone();
        self.entries
            .range(lo..)
            .take_while(move |(k, _)| k.contract == contract && end.is_none_or(|e| k.key.as_slice() < e))
    }

    /// Approximate storage footprint: key, value and a 12-byte version.
    pub fn byte_size(&self) -> u64 {
        self.entries
            .iter()
            .map(|(k, v)| (k.contract.as_str().len() + k.key.len() + v.value.len() + 12) as u64)
            .sum()
    }

    /// Digest over all entries accepted by `keep`, in key order.
    pub fn digest_where(&self, keep: impl Fn(&StateKey) -> bool) -> Digest {
        let mut e = Encoder::new();
        for (k, v) in self.entries.iter().filter(|(k, _)| keep(k)) {
            e.str(k.contract.as_str()).bytes(&k.key).u64(v.version.block).u32(v.version.tx).bytes(&v.value);
        }
        Digest::of(e.as_slice())
    }

    pub fn digest(&self) -> Digest {
        self.digest_where(|_| true)
    }

    /// Copy restricted to keys accepted by `keep`.
    pub fn restricted(&self, keep: impl Fn(&StateKey) -> bool) -> StateDb {
        StateDb {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: StateDb) {
        self.entries.extend(other.entries);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_is_half_open_and_contract_bound() {
        let mut db = StateDb::new();
        for (c, k) in [("A", "k1"), ("A", "k3"), ("A", "k5"), ("B", "k2")] {
            db.put(StateKey::new(c, k.as_bytes().to_vec()), b"v".to_vec(), Version::new(0, 0));
        }
        let keys: Vec<_> = db
            .range(&"A".into(), b"k1", Some(b"k5"))
            .map(|(k, _)| k.key.clone())
            .collect();
        assert_eq!(keys, vec![b"k1".to_vec(), b"k3".to_vec()]);
        assert_eq!(db.range(&"A".into(), b"k4", None).count(), 1);
        assert_eq!(db.range(&"A".into(), b"z", None).count(), 0);
    }

    #[test]
    fn digest_tracks_versions() {
        let mut a = StateDb::new();
        a.put(StateKey::new("A", b"k".to_vec()), b"v".to_vec(), Version::new(1, 0));
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.put(StateKey::new("A", b"k".to_vec()), b"v".to_vec(), Version::new(1, 1));
        assert_ne!(a.digest(), b.digest());
    }
}
