//! Reference validator: one transaction at a time, in block order, against
//! a plain ordered map. Shares no validation code with the peer.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ops::Bound;
use std::sync::Arc;

use crate::codec::Encoder;
use crate::digest::Digest;
use crate::model::{Block, ContractId, EndorsementPolicy, KeyRegistry, StateKey, Transaction, TxValidity, Version};

/// Versioned key-value state with cheaply clonable values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    entries: BTreeMap<StateKey, (Arc<[u8]>, Version)>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &StateKey) -> Option<(&[u8], Version)> {
        self.entries.get(key).map(|(v, ver)| (&v[..], *ver))
    }

    pub fn version(&self, key: &StateKey) -> Option<Version> {
        self.entries.get(key).map(|(_, v)| *v)
    }

    pub fn put(&mut self, key: StateKey, value: &[u8], version: Version) {
        self.entries.insert(key, (Arc::from(value), version));
    }

    pub fn delete(&mut self, key: &StateKey) {
        self.entries.remove(key);
    }

    /// Keys of `contract` in `[start, end)`, in order.
    pub fn range<'a>(
        &'a self,
        contract: &ContractId,
        start: &[u8],
        end: Option<&[u8]>,
    ) -> impl Iterator<Item = (&'a StateKey, Version)> + 'a {
        let lo = StateKey::new(contract.clone(), start.to_vec());
        let hi = match end {
            Some(e) => Bound::Excluded(StateKey::new(contract.clone(), e.to_vec())),
            None => Bound::Excluded(StateKey::new(ContractId::new(format!("{}\0", contract.as_str())), Vec::new())),
        };
        self.entries.range((Bound::Included(lo), hi)).map(|(k, (_, v))| (k, *v))
    }

    pub fn keys_of<'a>(&'a self, contract: &'a ContractId) -> impl Iterator<Item = &'a StateKey> + 'a {
        self.range(contract, b"", None).map(|(k, _)| k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &[u8], Version)> {
        self.entries.iter().map(|(k, (v, ver))| (k, &v[..], *ver))
    }

    /// Digest over entries accepted by `keep`, in key order. Each entry is
    /// contract, key, version block, version index and value.
    pub fn digest_where(&self, keep: impl Fn(&StateKey) -> bool) -> Digest {
        let mut e = Encoder::new();
        for (k, (v, ver)) in self.entries.iter().filter(|(k, _)| keep(k)) {
            e.str(k.contract.as_str()).bytes(&k.key).u64(ver.block).u32(ver.tx).bytes(v);
        }
        Digest::of(e.as_slice())
    }

    pub fn digest(&self) -> Digest {
        self.digest_where(|_| true)
    }

    pub fn byte_size(&self) -> u64 {
        self.entries
            .iter()
            .map(|(k, (v, _))| (k.contract.as_str().len() + k.key.len() + v.len() + 12) as u64)
            .sum()
    }
}

/// Serial validate-then-commit over a block stream.
#[derive(Debug, Clone)]
pub struct SerialOracle {
    state: WorldState,
    seen: HashSet<Digest>,
    keys: KeyRegistry,
    height: Option<u64>,
}

impl SerialOracle {
    pub fn new(keys: KeyRegistry) -> Self {
        SerialOracle {
            state: WorldState::new(),
            seen: HashSet::new(),
            keys,
            height: None,
        }
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn height(&self) -> Option<u64> {
        self.height
    }

    pub fn has_seen(&self, id: &Digest) -> bool {
        self.seen.contains(id)
    }

    /// Applies every write of the genesis block.
    pub fn genesis(&mut self, block: &Block) {
        for (i, tx) in block.txs.iter().enumerate() {
            self.seen.insert(tx.tx_id);
            self.apply(tx, Version::new(block.number, i as u32));
        }
        self.height = Some(block.number);
    }

    /// Validates each transaction against the state left by the previous
    /// valid ones, applies the valid ones, and returns the flags.
    pub fn validate_block(&mut self, block: &Block) -> Vec<TxValidity> {
        let mut flags = Vec::with_capacity(block.txs.len());
        for (i, tx) in block.txs.iter().enumerate() {
            let v = if !self.seen.insert(tx.tx_id) {
                TxValidity::InvalidDuplicate
            } else {
                self.check(tx)
            };
            if v.is_valid() {
                self.apply(tx, Version::new(block.number, i as u32));
            }
            flags.push(v);
        }
        self.height = Some(block.number);
        flags
    }

    fn check(&self, tx: &Transaction) -> TxValidity {
        let mut stale: BTreeSet<ContractId> = BTreeSet::new();
        for r in &tx.read_set {
            if self.state.version(&r.key) != r.version {
                stale.insert(r.key.scope());
            }
        }
        for rq in &tx.range_queries {
            let now: Vec<(&StateKey, Version)> = self.state.range(&rq.contract, &rq.start_key, rq.end_key.as_deref()).collect();
            let same = now.len() == rq.observed_reads.len()
                && now.iter().zip(&rq.observed_reads).all(|((k, v), o)| **k == o.key && Some(*v) == o.version);
            if !same {
                stale.insert(rq.contract.clone());
            }
        }
        if !stale.is_empty() {
            return TxValidity::InvalidSerializability;
        }
        let response = tx.response_bytes();
        for c in &tx.invoked_contracts {
            let Some((raw, _)) = self.state.get(&StateKey::policy(c)) else {
                return TxValidity::InvalidEndorsement;
            };
            let Ok(policy) = EndorsementPolicy::from_bytes(raw) else {
                return TxValidity::InvalidEndorsement;
            };
            let good: BTreeSet<_> = tx
                .endorsements
                .iter()
                .filter(|e| policy.required_orgs.contains(&e.org) && self.keys.verify(&e.org, &response, &e.signature))
                .map(|e| e.org.clone())
                .collect();
            if (good.len() as u32) < policy.threshold {
                return TxValidity::InvalidEndorsement;
            }
        }
        TxValidity::Valid
    }

    fn apply(&mut self, tx: &Transaction, at: Version) {
        for w in &tx.write_set {
            if w.is_delete {
                self.state.delete(&w.key);
            } else {
                self.state.put(w.key.clone(), &w.value, at);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleOutcome {
    /// Flags per block, starting with block 1.
    pub bitmaps: Vec<Vec<TxValidity>>,
    pub state: WorldState,
}

impl OracleOutcome {
    pub fn digest(&self) -> Digest {
        self.state.digest()
    }
}

/// Runs the oracle over `genesis` followed by `blocks`.
pub fn serial_oracle(genesis: &Block, blocks: &[Block], keys: &KeyRegistry) -> OracleOutcome {
    let mut o = SerialOracle::new(keys.clone());
    o.genesis(genesis);
    let bitmaps = blocks.iter().map(|b| o.validate_block(b)).collect();
    OracleOutcome {
        bitmaps,
        state: o.state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{distributed_fixture, pipeline_fixture};
    use crate::model::TxValidity::*;

    #[test]
    fn reproduces_pipeline_fixture_bitmap() {
        let fx = pipeline_fixture();
        let out = serial_oracle(&fx.genesis, &fx.blocks, &fx.keys);
        let flat: Vec<_> = out.bitmaps.concat();
        assert_eq!(flat, [Valid, InvalidSerializability, Valid, Valid, InvalidSerializability, Valid]);
    }

    #[test]
    fn reproduces_distributed_fixture_verdicts() {
        let fx = distributed_fixture();
        let out = serial_oracle(&fx.genesis, std::slice::from_ref(&fx.block), &fx.keys);
        assert_eq!(out.bitmaps, vec![vec![Valid, Valid, InvalidSerializability]]);
    }

    #[test]
    fn range_excludes_other_contracts() {
        let mut w = WorldState::new();
        w.put(StateKey::new("S1", b"a".to_vec()), b"1", Version::new(0, 0));
        w.put(StateKey::new("S1", b"b".to_vec()), b"1", Version::new(0, 1));
        w.put(StateKey::new("S10", b"a".to_vec()), b"1", Version::new(0, 2));
        let c = ContractId::new("S1");
        assert_eq!(w.range(&c, b"", None).count(), 2);
        assert_eq!(w.range(&c, b"a", Some(b"b")).count(), 1);
    }
}
