//! Per-transaction modification index, as-of-block state snapshots and
//! seeding of a joining peer from snapshot manifests.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::digest::Digest;
use crate::model::{ContractId, StateKey, TxRef, Version, POLICY_NAMESPACE};
use crate::state::StateEngine;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModRecord {
    pub key: Vec<u8>,
    pub is_delete: bool,
    pub is_deferred: bool,
}

/// `(contract, block, tx) -> writes` for every committed valid or deferred
/// transaction. Contracts are raw key namespaces, so policy writes sit
/// under the policy namespace.
#[derive(Debug, Clone, Default)]
pub struct ModificationIndex {
    entries: BTreeMap<(ContractId, u64, u32), Vec<ModRecord>>,
    deferred: BTreeMap<TxRef, BTreeSet<ContractId>>,
}

impl ModificationIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record(&mut self, contract: ContractId, r: TxRef, records: Vec<ModRecord>) {
        if records.iter().any(|m| m.is_deferred) {
            self.deferred.entry(r).or_default().insert(contract.clone());
        }
        self.entries.entry((contract, r.block, r.index)).or_default().extend(records);
    }

    /// Clears the deferred mark of `r`'s records, or drops them if the
    /// transaction turned out invalid.
    pub fn finalize(&mut self, r: TxRef, valid: bool) {
        let Some(contracts) = self.deferred.remove(&r) else {
            return;
        };
        for c in contracts {
            let k = (c, r.block, r.index);
            if valid {
                if let Some(recs) = self.entries.get_mut(&k) {
                    for m in recs {
                        m.is_deferred = false;
                    }
                }
            } else {
                self.entries.remove(&k);
            }
        }
    }

    pub fn get(&self, contract: &ContractId, r: TxRef) -> Option<&[ModRecord]> {
        self.entries.get(&(contract.clone(), r.block, r.index)).map(Vec::as_slice)
    }

    /// Records of `contract` in blocks `0..=up_to`, ascending.
    pub fn scan(&self, contract: &ContractId, up_to: u64) -> impl DoubleEndedIterator<Item = (TxRef, &[ModRecord])> {
        let lo = (contract.clone(), 0u64, 0u32);
        let hi = (contract.clone(), up_to.saturating_add(1), 0u32);
        let range = if up_to == u64::MAX {
            self.entries.range(lo..=(contract.clone(), u64::MAX, u32::MAX))
        } else {
            self.entries.range(lo..hi)
        };
        range.map(|((_, b, i), recs)| (TxRef::new(*b, *i), recs.as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContractId, TxRef, &[ModRecord])> {
        self.entries
            .iter()
            .map(|((c, b, i), recs)| (c, TxRef::new(*b, *i), recs.as_slice()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("snapshot block {requested} is beyond height {height:?}")]
    FutureBlock { requested: u64, height: Option<u64> },
    #[error("contract {0} is not covered by the supplied manifests")]
    FilterNotCovered(ContractId),
    #[error("manifest for {contract} is as of block {got}, expected {expected}")]
    HeightMismatch { contract: ContractId, expected: u64, got: u64 },
    #[error("joining peer must have a sparse filter")]
    FullFilter,
    #[error("block {0} missing from the block store")]
    MissingBlock(u64),
    #[error("manifest body digest mismatch")]
    DigestMismatch,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub version: Version,
}

/// State of one key namespace as of a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotManifest {
    pub contract: ContractId,
    pub as_of_block: u64,
    pub entries: Vec<ManifestEntry>,
}

impl SnapshotManifest {
    fn body(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        for m in &self.entries {
            e.bytes(&m.key).u64(m.version.block).u32(m.version.tx).bytes(&m.value);
        }
        e.finish()
    }

    /// Header `(contract, as-of block, entry count, body digest)` then the
    /// sorted `(key, version, value)` records, all length-prefixed.
    pub fn to_bytes(&self) -> Vec<u8> {
        let body = self.body();
        let mut e = Encoder::with_capacity(body.len() + 64);
        e.str(self.contract.as_str())
            .u64(self.as_of_block)
            .len(self.entries.len())
            .digest(&Digest::of(&body))
            .raw(&body);
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut d = Decoder::new(bytes);
        let contract = ContractId::new(d.str("contract id")?);
        let as_of_block = d.u64()?;
        let n = d.len()?;
        let digest = d.digest()?;
        let body_start = d.position();
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let key = d.bytes()?;
            let version = Version::new(d.u64()?, d.u32()?);
            let value = d.bytes()?;
            entries.push(ManifestEntry { key, value, version });
        }
        if Digest::of(&bytes[body_start..d.position()]) != digest {
            return Err(SnapshotError::DigestMismatch);
        }
        d.finish()?;
        for w in entries.windows(2) {
            if w[0].key >= w[1].key {
                return Err(SnapshotError::Codec(CodecError::Malformed {
                    what: "manifest",
                    reason: "keys not strictly sorted".into(),
                }));
            }
        }
        Ok(SnapshotManifest {
            contract,
            as_of_block,
            entries,
        })
    }

    pub fn byte_size(&self) -> u64 {
        self.to_bytes().len() as u64
    }

    fn state_key(&self, key: &[u8]) -> StateKey {
        StateKey::new(self.contract.clone(), key.to_vec())
    }
}

/// Last non-deferred operation on each key of `contract` in blocks `0..=b`.
fn last_ops(engine: &StateEngine, contract: &ContractId, b: u64) -> BTreeMap<Vec<u8>, (TxRef, bool)> {
    let mut last = BTreeMap::new();
    for (r, recs) in engine.mods().scan(contract, b) {
        for m in recs.iter().filter(|m| !m.is_deferred) {
            last.insert(m.key.clone(), (r, m.is_delete));
        }
    }
    last
}

fn value_written_by(engine: &StateEngine, r: TxRef, key: &StateKey) -> Result<Vec<u8>, SnapshotError> {
    let stored = engine.blocks().get(r.block).ok_or(SnapshotError::MissingBlock(r.block))?;
    let tx = stored.block.tx_at(r.index).ok_or(SnapshotError::MissingBlock(r.block))?;
    tx.write_set
        .iter()
        .find(|w| &w.key == key)
        .map(|w| w.value.clone())
        .ok_or(SnapshotError::MissingBlock(r.block))
}

/// Value of `key` as of block `b`, taken from the write-set of the last
/// transaction in `0..=b` that wrote it. `None` if that write was a delete
/// or the key was never written.
pub fn recover_value(
    engine: &StateEngine,
    contract: &ContractId,
    key: &[u8],
    b: u64,
) -> Result<Option<(Vec<u8>, Version)>, SnapshotError> {
    for (r, recs) in engine.mods().scan(contract, b).rev() {
        if let Some(m) = recs.iter().find(|m| m.key == key && !m.is_deferred) {
            if m.is_delete {
                return Ok(None);
            }
            let sk = StateKey::new(contract.clone(), key.to_vec());
            return Ok(Some((value_written_by(engine, r, &sk)?, r.version())));
        }
    }
    Ok(None)
}

/// State of key namespace `contract` as of block `b`. Live values are
/// copied from the state DB when their version is the last write in
/// `0..=b`; overwritten or deleted ones are recovered from the block store.
/// Writes of unresolved deferred transactions are excluded.
pub fn extract_snapshot(engine: &StateEngine, contract: &ContractId, b: u64) -> Result<SnapshotManifest, SnapshotError> {
    if engine.height().is_none_or(|h| b > h) {
        return Err(SnapshotError::FutureBlock {
            requested: b,
            height: engine.height(),
        });
    }
    let mut entries = Vec::new();
    for (key, (r, is_delete)) in last_ops(engine, contract, b) {
        if is_delete {
            continue;
        }
        let sk = StateKey::new(contract.clone(), key.clone());
        let value = match engine.db().get(&sk) {
            Some(live) if live.version == r.version() => live.value.clone(),
            _ => value_written_by(engine, r, &sk)?,
        };
        entries.push(ManifestEntry {
            key,
            value,
            version: r.version(),
        });
    }
    Ok(SnapshotManifest {
        contract: contract.clone(),
        as_of_block: b,
        entries,
    })
}

/// Manifests covering `contracts`: one per contract plus one policy
/// manifest holding only their policies.
pub fn extract_for_contracts(
    engine: &StateEngine,
    contracts: &BTreeSet<ContractId>,
    b: u64,
) -> Result<Vec<SnapshotManifest>, SnapshotError> {
    let mut out = Vec::new();
    for c in contracts {
        out.push(extract_snapshot(engine, c, b)?);
    }
    let mut policy = extract_snapshot(engine, &ContractId::new(POLICY_NAMESPACE), b)?;
    policy
        .entries
        .retain(|e| contracts.iter().any(|c| c.as_str().as_bytes() == e.key.as_slice()));
    out.push(policy);
    Ok(out)
}

/// Seeds a fresh engine from manifests taken at `from_height` and sets the
/// chain tip so the next block expected is `from_height + 1`.
pub fn seed_from_manifests(
    engine: &mut StateEngine,
    manifests: &[SnapshotManifest],
    from_height: u64,
    tip_hash: Digest,
) -> Result<(), SnapshotError> {
    let contracts = engine.scope().contracts().cloned().ok_or(SnapshotError::FullFilter)?;
    for c in &contracts {
        let m = manifests
            .iter()
            .find(|m| &m.contract == c)
            .ok_or_else(|| SnapshotError::FilterNotCovered(c.clone()))?;
        if m.as_of_block != from_height {
            return Err(SnapshotError::HeightMismatch {
                contract: c.clone(),
                expected: from_height,
                got: m.as_of_block,
            });
        }
    }
    for m in manifests {
        if m.as_of_block != from_height {
            return Err(SnapshotError::HeightMismatch {
                contract: m.contract.clone(),
                expected: from_height,
                got: m.as_of_block,
            });
        }
        for e in &m.entries {
            let sk = m.state_key(&e.key);
            if engine.scope().admits_key(&sk) {
                engine.seed(sk, e.value.clone(), e.version);
            }
        }
    }
    engine.set_base(from_height, tip_hash);
    Ok(())
}
