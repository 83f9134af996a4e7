//! Cross-peer agreement for transactions spanning several sparse peers.
//!
//! Each peer validates the contracts of a transaction that its filter
//! holds and broadcasts one verdict per contract. A transaction is valid
//! once every invoked contract has a valid verdict and invalid as soon as
//! any verdict is invalid.

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{CodecError, Decoder, Encoder};
use crate::model::{ContractId, TxRef, TxValidity};
use crate::sparse::PeerId;
use crate::validate::merge_outcomes;

/// How the committer treats transactions still waiting on remote verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CommitMode {
    /// Commit the rest of the block and finalize the transaction later.
    #[default]
    Deferred,
    /// Block until every verdict has arrived.
    Strawman,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractVerdict {
    pub tx_ref: TxRef,
    pub contract: ContractId,
    /// `Valid` or one of the invalid codes.
    pub verdict: TxValidity,
    pub from_peer: PeerId,
}

impl ContractVerdict {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(self.tx_ref.block)
            .u32(self.tx_ref.index)
            .str(self.contract.as_str())
            .u8(self.verdict.code())
            .str(self.from_peer.as_str());
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let tx_ref = TxRef::new(d.u64()?, d.u32()?);
        let contract = ContractId::new(d.str("contract id")?);
        let code = d.u8()?;
        let verdict = match TxValidity::from_code(code) {
            Some(v @ (TxValidity::Valid | TxValidity::InvalidSerializability | TxValidity::InvalidEndorsement)) => v,
            _ => return Err(CodecError::BadTag { what: "verdict", tag: code }),
        };
        let from_peer = PeerId::new(d.str("peer id")?);
        d.finish()?;
        Ok(ContractVerdict {
            tx_ref,
            contract,
            verdict,
            from_peer,
        })
    }
}

/// Verdict bookkeeping for one cross-filter transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingDistributedTx {
    pub tx_ref: TxRef,
    pub required: BTreeSet<ContractId>,
    pub received: BTreeMap<ContractId, TxValidity>,
    /// Set once this peer has validated its own contracts.
    pub local_done: bool,
}

impl PendingDistributedTx {
    pub fn new(tx_ref: TxRef, required: impl IntoIterator<Item = ContractId>) -> Self {
        PendingDistributedTx {
            tx_ref,
            required: required.into_iter().collect(),
            received: BTreeMap::new(),
            local_done: false,
        }
    }

    /// Records a verdict; the first one per contract wins.
    pub fn merge(&mut self, contract: ContractId, verdict: TxValidity) {
        if self.required.contains(&contract) {
            self.received.entry(contract).or_insert(verdict);
        }
    }

    /// Terminal outcome if one is already determined. A serializability
    /// failure decides at once; anything else needs every contract's
    /// verdict so all peers record the same flag.
    pub fn decision(&self) -> Option<TxValidity> {
        if self.received.values().any(|v| *v == TxValidity::InvalidSerializability) {
            return Some(TxValidity::InvalidSerializability);
        }
        (self.received.len() == self.required.len()).then(|| merge_outcomes(self.received.values().copied()))
    }
}

/// A transaction committed with the deferred flag and the local
/// transactions deferred because they depend on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeferredRecord {
    pub tx_ref: TxRef,
    pub block_number: u64,
    pub dependents: BTreeSet<TxRef>,
}

/// Verdicts for blocks this peer has not received yet.
#[derive(Debug, Clone, Default)]
pub struct VerdictBuffer {
    capacity: usize,
    held: BTreeMap<TxRef, Vec<ContractVerdict>>,
    len: usize,
}

impl VerdictBuffer {
    pub fn new(capacity: usize) -> Self {
        VerdictBuffer {
            capacity,
            held: BTreeMap::new(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Returns the verdict back when the buffer is full.
    pub fn push(&mut self, v: ContractVerdict) -> Result<(), ContractVerdict> {
        if self.len >= self.capacity {
            return Err(v);
        }
        self.len += 1;
        self.held.entry(v.tx_ref).or_default().push(v);
        Ok(())
    }

    pub fn take(&mut self, r: TxRef) -> Vec<ContractVerdict> {
        let v = self.held.remove(&r).unwrap_or_default();
        self.len -= v.len();
        v
    }

    /// Drops everything held for blocks up to `block`.
    pub fn drain_through(&mut self, block: u64) -> Vec<ContractVerdict> {
        let keep = self.held.split_off(&TxRef::new(block + 1, 0));
        let out: Vec<_> = std::mem::replace(&mut self.held, keep).into_values().flatten().collect();
        self.len -= out.len();
        out
    }
}
