//! Ledger vocabulary shared by every other module: keys, versions,
//! transactions, blocks and endorsement policies.

mod block;
mod policy;
mod tx;

use std::borrow::Borrow;
use std::fmt;

use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};

pub use block::{seal_block, Block};
pub use policy::{EndorsementPolicy, KeyRegistry, OrgId};
pub use tx::{compute_tx_id, Endorsement, Proposal, RwSet, Transaction};

/// Namespace holding each contract's endorsement policy, keyed by contract id.
pub const POLICY_NAMESPACE: &str = "_policy";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("block has no transactions")]
    EmptyBlock,
    #[error("contract identifier must be non-empty")]
    EmptyContract,
    #[error("transaction touches no contract")]
    NoContracts,
    #[error("write set holds more than one entry for {0}")]
    DuplicateWrite(StateKey),
    #[error("read set holds conflicting versions for {0}")]
    ConflictingRead(StateKey),
    #[error("delete of {0} carries a value")]
    DeleteWithValue(StateKey),
    #[error("invalid range query on {contract}: {reason}")]
    InvalidRange { contract: ContractId, reason: String },
    #[error("invalid endorsement policy for {contract}: {reason}")]
    InvalidPolicy { contract: ContractId, reason: String },
}

/// Smart-contract identifier.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContractId(String);

impl ContractId {
    pub fn new(id: impl Into<String>) -> Self {
        ContractId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_policy_namespace(&self) -> bool {
        self.0 == POLICY_NAMESPACE
    }
}

impl Borrow<str> for ContractId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ContractId {
    fn from(s: &str) -> Self {
        ContractId::new(s)
    }
}

impl fmt::Debug for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A state key namespaced by the contract that owns it.
///
/// Ordering is lexicographic on `(contract, key)`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey {
    pub contract: ContractId,
    pub key: Vec<u8>,
}

impl StateKey {
    pub fn new(contract: impl Into<ContractId>, key: impl Into<Vec<u8>>) -> Self {
        StateKey {
            contract: contract.into(),
            key: key.into(),
        }
    }

    /// The reserved key under which `contract`'s endorsement policy is stored.
    pub fn policy(contract: &ContractId) -> Self {
        StateKey {
            contract: ContractId::new(POLICY_NAMESPACE),
            key: contract.as_str().as_bytes().to_vec(),
        }
    }

    pub fn is_policy(&self) -> bool {
        self.contract.is_policy_namespace()
    }

    /// The contract this key belongs to for filtering and scoping. Policy
    /// keys belong to the contract whose policy they hold.
    pub fn scope(&self) -> ContractId {
        if self.is_policy() {
            ContractId::new(String::from_utf8_lossy(&self.key).into_owned())
        } else {
            self.contract.clone()
        }
    }

    pub fn in_scope(&self, contract: &str) -> bool {
        if self.is_policy() {
            self.key == contract.as_bytes()
        } else {
            self.contract.as_str() == contract
        }
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.str(self.contract.as_str()).bytes(&self.key);
    }

    pub(crate) fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let contract = d.str("contract id")?;
        if contract.is_empty() {
            return Err(CodecError::Malformed {
                what: "state key",
                reason: "empty contract".into(),
            });
        }
        Ok(StateKey {
            contract: ContractId(contract),
            key: d.bytes()?,
        })
    }
}

impl fmt::Debug for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.contract, String::from_utf8_lossy(&self.key))
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Version stamp of a state: the (block, transaction index) of its last valid write.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Version {
    pub block: u64,
    pub tx: u32,
}

impl Version {
    pub const fn new(block: u64, tx: u32) -> Self {
        Version { block, tx }
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.u64(self.block).u32(self.tx);
    }

    pub(crate) fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Version {
            block: d.u64()?,
            tx: d.u32()?,
        })
    }

    pub(crate) fn encode_opt(v: &Option<Version>, e: &mut Encoder) {
        match v {
            None => {
                e.u8(0);
            }
            Some(v) => {
                e.u8(1);
                v.encode(e);
            }
        }
    }

    pub(crate) fn decode_opt(d: &mut Decoder<'_>) -> Result<Option<Version>, CodecError> {
        match d.u8()? {
            0 => Ok(None),
            1 => Ok(Some(Version::decode(d)?)),
            tag => Err(CodecError::BadTag {
                what: "optional version",
                tag,
            }),
        }
    }
}

impl fmt::Debug for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.block, self.tx)
    }
}

/// Position of a transaction in the chain. Its writes are stamped with the
/// matching [`Version`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TxRef {
    pub block: u64,
    pub index: u32,
}

impl TxRef {
    pub const fn new(block: u64, index: u32) -> Self {
        TxRef { block, index }
    }

    pub fn version(&self) -> Version {
        Version::new(self.block, self.index)
    }
}

impl fmt::Debug for TxRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.block, self.index)
    }
}

impl fmt::Display for TxRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadEntry {
    pub key: StateKey,
    /// `None` when the key did not exist at simulation time.
    pub version: Option<Version>,
}

impl ReadEntry {
    pub fn new(key: StateKey, version: Option<Version>) -> Self {
        ReadEntry { key, version }
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        self.key.encode(e);
        Version::encode_opt(&self.version, e);
    }

    pub(crate) fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(ReadEntry {
            key: StateKey::decode(d)?,
            version: Version::decode_opt(d)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteEntry {
    pub key: StateKey,
    pub value: Vec<u8>,
    pub is_delete: bool,
}

impl WriteEntry {
    pub fn put(key: StateKey, value: impl Into<Vec<u8>>) -> Self {
        WriteEntry {
            key,
            value: value.into(),
            is_delete: false,
        }
    }

    pub fn delete(key: StateKey) -> Self {
        WriteEntry {
            key,
            value: Vec::new(),
            is_delete: true,
        }
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        self.key.encode(e);
        e.bytes(&self.value).bool(self.is_delete);
    }

    pub(crate) fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let w = WriteEntry {
            key: StateKey::decode(d)?,
            value: d.bytes()?,
            is_delete: d.bool()?,
        };
        if w.is_delete && !w.value.is_empty() {
            return Err(CodecError::Malformed {
                what: "write entry",
                reason: "delete with value".into(),
            });
        }
        Ok(w)
    }
}

/// A range query performed during simulation together with what it observed.
///
/// The range is half-open: `[start_key, end_key)`, with `None` meaning the
/// rest of the contract's key space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeQueryInfo {
    pub contract: ContractId,
    pub start_key: Vec<u8>,
    pub end_key: Option<Vec<u8>>,
    pub observed_reads: Vec<ReadEntry>,
}

impl RangeQueryInfo {
    pub fn contains(&self, key: &StateKey) -> bool {
        key.contract == self.contract && self.contains_raw(&key.key)
    }

    pub fn contains_raw(&self, key: &[u8]) -> bool {
        key >= self.start_key.as_slice() && self.end_key.as_deref().is_none_or(|end| key < end)
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidRange {
            contract: self.contract.clone(),
            reason: reason.to_string(),
        };
        if self.contract.as_str().is_empty() {
            return Err(ModelError::EmptyContract);
        }
        if let Some(end) = &self.end_key {
            if self.start_key >= *end {
                return Err(bad("start key must precede end key"));
            }
        }
        for pair in self.observed_reads.windows(2) {
            if pair[0].key >= pair[1].key {
                return Err(bad("observed reads must be strictly sorted"));
            }
        }
        for r in &self.observed_reads {
            if !self.contains(&r.key) {
                return Err(bad("observed read outside the range"));
            }
            if r.version.is_none() {
                return Err(bad("observed read without a version"));
            }
        }
        Ok(())
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.str(self.contract.as_str()).bytes(&self.start_key);
        match &self.end_key {
            None => e.u8(0),
            Some(k) => e.u8(1).bytes(k),
        };
        e.len(self.observed_reads.len());
        for r in &self.observed_reads {
            r.encode(e);
        }
    }

    pub(crate) fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let contract = ContractId(d.str("contract id")?);
        let start_key = d.bytes()?;
        let end_key = match d.u8()? {
            0 => None,
            1 => Some(d.bytes()?),
            tag => return Err(CodecError::BadTag { what: "range end", tag }),
        };
        let n = d.len()?;
        let mut observed_reads = Vec::with_capacity(n);
        for _ in 0..n {
            observed_reads.push(ReadEntry::decode(d)?);
        }
        Ok(RangeQueryInfo {
            contract,
            start_key,
            end_key,
            observed_reads,
        })
    }
}

/// Outcome recorded for a transaction in a committed block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum TxValidity {
    Valid = 0,
    InvalidSerializability = 1,
    InvalidEndorsement = 2,
    InvalidDuplicate = 3,
    NotValidated = 4,
    Deferred = 5,
}

impl TxValidity {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => TxValidity::Valid,
            1 => TxValidity::InvalidSerializability,
            2 => TxValidity::InvalidEndorsement,
            3 => TxValidity::InvalidDuplicate,
            4 => TxValidity::NotValidated,
            5 => TxValidity::Deferred,
            _ => return None,
        })
    }

    pub fn is_valid(self) -> bool {
        self == TxValidity::Valid
    }

    pub fn is_invalid(self) -> bool {
        matches!(
            self,
            TxValidity::InvalidSerializability
                | TxValidity::InvalidEndorsement
                | TxValidity::InvalidDuplicate
        )
    }

    /// Short label used in text dumps.
    pub fn label(self) -> &'static str {
        match self {
            TxValidity::Valid => "V",
            TxValidity::InvalidSerializability => "I-ser",
            TxValidity::InvalidEndorsement => "I-end",
            TxValidity::InvalidDuplicate => "I-dup",
            TxValidity::NotValidated => "NV",
            TxValidity::Deferred => "D",
        }
    }
}
