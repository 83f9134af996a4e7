//! Versioned committed state, the dirty buffer of validated but uncommitted
//! writes, the block store and the history records.

mod blockstore;
mod db;
mod dirty;
mod history;

use std::collections::BTreeMap;

use thiserror::Error;

pub use blockstore::{BlockStore, StoredBlock};
pub use db::{StateDb, VersionedValue};
pub use dirty::{DirtyEntry, DirtyStateBuffer};
pub use history::HistoryDb;

use crate::codec::CodecError;
use crate::digest::Digest;
use crate::model::{Block, ContractId, StateKey, Transaction, TxRef, TxValidity, Version, WriteEntry};
use crate::snapshot::{ModRecord, ModificationIndex};
use crate::sparse::{DeliveredBlock, Filter};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("expected block {expected}, got {got}")]
    NonContiguousBlock { expected: u64, got: u64 },
    #[error("block {block} has {txs} transactions but {flags} flags")]
    FlagCountMismatch { block: u64, flags: usize, txs: usize },
    #[error("dirty write to {key} at {got:?} does not follow {last:?}")]
    DirtyOrder { key: StateKey, last: Version, got: Version },
    #[error("block {0} is not in the block store")]
    UnknownBlock(u64),
    #[error("transaction {0} is not deferred")]
    NotDeferred(TxRef),
    #[error("block store corrupt: {0}")]
    Corrupt(String),
    #[error("block store i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

impl StateError {
    fn io(e: std::io::Error) -> Self {
        StateError::Io(e.to_string())
    }
}

/// Counts produced by one block commit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommitStats {
    pub valid: usize,
    pub invalid: usize,
    pub deferred: usize,
    pub not_validated: usize,
    pub writes_applied: usize,
}

/// A peer's storage. Only states inside `scope` are ever stored.
#[derive(Debug)]
pub struct StateEngine {
    scope: Filter,
    db: StateDb,
    dirty: DirtyStateBuffer,
    blocks: BlockStore,
    history: HistoryDb,
    mods: ModificationIndex,
    height: Option<u64>,
    last_hash: Digest,
}

impl StateEngine {
    pub fn new(scope: Filter, blocks: BlockStore) -> Self {
        StateEngine {
            scope,
            db: StateDb::new(),
            dirty: DirtyStateBuffer::new(),
            blocks,
            history: HistoryDb::new(),
            mods: ModificationIndex::new(),
            height: None,
            last_hash: Digest::ZERO,
        }
    }

    pub fn in_memory(scope: Filter) -> Self {
        Self::new(scope, BlockStore::in_memory())
    }

    pub fn scope(&self) -> &Filter {
        &self.scope
    }

    /// Replaces the filter. Used when a donor peer sheds contracts after a
    /// joiner takes them over; states outside the new scope are dropped.
    pub fn set_scope(&mut self, scope: Filter) {
        self.db = self.db.restricted(|k| scope.admits_key(k));
        self.scope = scope;
    }

    pub fn db(&self) -> &StateDb {
        &self.db
    }

    pub fn dirty(&self) -> &DirtyStateBuffer {
        &self.dirty
    }

    pub fn blocks(&self) -> &BlockStore {
        &self.blocks
    }

    pub fn history(&self) -> &HistoryDb {
        &self.history
    }

    pub fn mods(&self) -> &ModificationIndex {
        &self.mods
    }

    /// Last committed block number.
    pub fn height(&self) -> Option<u64> {
        self.height
    }

    pub fn last_hash(&self) -> Digest {
        self.last_hash
    }

    /// Latest dirty entry for `key` if any, otherwise the committed entry.
    pub fn read_through(&self, key: &StateKey) -> Option<(&[u8], Version)> {
        match self.dirty.latest(key) {
            Some(e) if e.is_delete => None,
            Some(e) => Some((e.value.as_slice(), e.version)),
            None => self.db.get(key).map(|v| (v.value.as_slice(), v.version)),
        }
    }

    pub fn read_version(&self, key: &StateKey) -> Option<Version> {
        self.read_through(key).map(|(_, v)| v)
    }

    /// Key-ordered merge of dirty and committed state over `[start, end)`.
    pub fn range_through(&self, contract: &ContractId, start: &[u8], end: Option<&[u8]>) -> Vec<(StateKey, Vec<u8>, Version)> {
        let mut merged: BTreeMap<&StateKey, Option<(&[u8], Version)>> = self
            .db
            .range(contract, start, end)
            .map(|(k, v)| (k, Some((v.value.as_slice(), v.version))))
            .collect();
        for (k, e) in self.dirty.range(contract, start, end) {
            merged.insert(k, (!e.is_delete).then_some((e.value.as_slice(), e.version)));
        }
        merged
            .into_iter()
            .filter_map(|(k, v)| v.map(|(val, ver)| (k.clone(), val.to_vec(), ver)))
            .collect()
    }

    /// Buffers the in-scope writes of a just-validated transaction.
    pub fn apply_dirty(&mut self, tx_ref: TxRef, writes: &[WriteEntry]) -> Result<(), StateError> {
        let scope = &self.scope;
        let scoped: Vec<&WriteEntry> = writes.iter().filter(|w| scope.admits_key(&w.key)).collect();
        self.dirty.apply(tx_ref.version(), scoped)
    }

    /// Stores block 0 with every transaction valid and applies its writes.
    pub fn commit_genesis(&mut self, block: Block) -> Result<CommitStats, StateError> {
        let flags = vec![TxValidity::Valid; block.txs.len()];
        self.commit_block(DeliveredBlock::Full(block), flags)
    }

    /// Appends the block, applies valid in-scope writes at their
    /// `(block, index)` version, records history and modifications, and
    /// purges the block's dirty entries.
    pub fn commit_block(&mut self, block: DeliveredBlock, flags: Vec<TxValidity>) -> Result<CommitStats, StateError> {
        let number = block.number();
        let expected = self.height.map_or(number, |h| h + 1);
        if number != expected || (self.height.is_none() && !self.blocks.is_empty()) {
            return Err(StateError::NonContiguousBlock { expected, got: number });
        }
        if flags.len() != block.tx_count() {
            return Err(StateError::FlagCountMismatch {
                block: number,
                flags: flags.len(),
                txs: block.tx_count(),
            });
        }
        let mut stats = CommitStats::default();
        for f in &flags {
            match f {
                TxValidity::Valid => stats.valid += 1,
                TxValidity::Deferred => stats.deferred += 1,
                TxValidity::NotValidated => stats.not_validated += 1,
                _ => stats.invalid += 1,
            }
        }
        for (index, tx) in block.present_txs() {
            let r = TxRef::new(number, index);
            match flags[index as usize] {
                TxValidity::Valid => {
                    stats.writes_applied += self.apply_committed(r, &tx);
                    self.record_mods(r, &tx, false);
                }
                TxValidity::Deferred => self.record_mods(r, &tx, true),
                _ => {}
            }
        }
        self.dirty.purge_block(number);
        self.last_hash = block.block_hash();
        self.blocks.append(block, flags)?;
        self.height = Some(number);
        Ok(stats)
    }

    fn apply_committed(&mut self, r: TxRef, tx: &Transaction) -> usize {
        let mut n = 0;
        for w in tx.write_set.iter().filter(|w| self.scope.admits_key(&w.key)) {
            if w.is_delete {
                self.db.delete(&w.key);
            } else {
                self.db.put(w.key.clone(), w.value.clone(), r.version());
            }
            self.history.append(w.key.clone(), r.version());
            n += 1;
        }
        n
    }

    fn record_mods(&mut self, r: TxRef, tx: &Transaction, deferred: bool) {
        let mut per_contract: BTreeMap<ContractId, Vec<ModRecord>> = BTreeMap::new();
        for w in tx.write_set.iter().filter(|w| self.scope.admits_key(&w.key)) {
            per_contract.entry(w.key.contract.clone()).or_default().push(ModRecord {
                key: w.key.key.clone(),
                is_delete: w.is_delete,
                is_deferred: deferred,
            });
        }
        for (c, recs) in per_contract {
            self.mods.record(c, r, recs);
        }
    }

    /// Finalizes a transaction committed with the deferred flag.
    pub fn resolve_deferred(&mut self, r: TxRef, validity: TxValidity) -> Result<usize, StateError> {
        let stored = self.blocks.get(r.block).ok_or(StateError::UnknownBlock(r.block))?;
        if stored.flags.get(r.index as usize) != Some(&TxValidity::Deferred) {
            return Err(StateError::NotDeferred(r));
        }
        let tx = stored.block.tx_at(r.index).cloned().ok_or(StateError::NotDeferred(r))?;
        self.blocks.set_flag(r.block, r.index, validity)?;
        let applied = if validity.is_valid() {
            self.mods.finalize(r, true);
            self.apply_committed(r, &tx)
        } else {
            self.mods.finalize(r, false);
            0
        };
        Ok(applied)
    }

    /// Seeds committed state directly, for a peer joining from a snapshot.
    pub fn seed(&mut self, key: StateKey, value: Vec<u8>, version: Version) {
        self.db.put(key, value, version);
    }

    /// Marks the chain as starting after `height` with tip `hash`.
    pub fn set_base(&mut self, height: u64, hash: Digest) {
        self.height = Some(height);
        self.last_hash = hash;
    }

    /// Rebuilds the committed state of `scope` by replaying the stored blocks.
    pub fn replay(blocks: &BlockStore, scope: &Filter) -> StateDb {
        let mut db = StateDb::new();
        for sb in blocks.iter() {
            let number = sb.block.number();
            for (index, tx) in sb.block.present_txs() {
                if sb.flags[index as usize] != TxValidity::Valid {
                    continue;
                }
                for w in tx.write_set.iter().filter(|w| scope.admits_key(&w.key)) {
                    if w.is_delete {
                        db.delete(&w.key);
                    } else {
                        db.put(w.key.clone(), w.value.clone(), Version::new(number, index));
                    }
                }
            }
        }
        db
    }

    pub fn sync(&mut self) -> Result<(), StateError> {
        self.blocks.sync()
    }
}
