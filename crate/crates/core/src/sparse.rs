//! Transaction-selection filters, sparse blocks and duplicate detection.
//!
//! A sparse block carries only the transactions matching a peer's filter
//! plus the full leaf vector of transaction ids, so the receiving peer can
//! recompute the Merkle root and check the hash chain without the rest of
//! the block.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::digest::Digest;
use crate::merkle::merkle_root;
use crate::model::{Block, ContractId, StateKey, Transaction};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(String);

impl PeerId {
    pub fn new(id: impl Into<String>) -> Self {
        PeerId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for PeerId {
    fn from(s: &str) -> Self {
        PeerId::new(s)
    }
}

impl fmt::Debug for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("sparse filter for {0} must name at least one contract")]
pub struct EmptyFilter(pub PeerId);

/// The set of contracts a peer validates and commits. `None` is the
/// universal set of a full peer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filter {
    pub peer_id: PeerId,
    contracts: Option<BTreeSet<ContractId>>,
}

impl Filter {
    pub fn full(peer_id: PeerId) -> Self {
        Filter {
            peer_id,
            contracts: None,
        }
    }

    pub fn sparse(peer_id: PeerId, contracts: impl IntoIterator<Item = ContractId>) -> Result<Self, EmptyFilter> {
        let contracts: BTreeSet<_> = contracts.into_iter().collect();
        if contracts.is_empty() {
            return Err(EmptyFilter(peer_id));
        }
        Ok(Filter {
            peer_id,
            contracts: Some(contracts),
        })
    }

    pub fn is_full(&self) -> bool {
        self.contracts.is_none()
    }

    pub fn contracts(&self) -> Option<&BTreeSet<ContractId>> {
        self.contracts.as_ref()
    }

    pub fn admits_contract(&self, contract: &str) -> bool {
        self.contracts.as_ref().is_none_or(|s| s.contains(contract))
    }

    pub fn admits_key(&self, key: &StateKey) -> bool {
        match &self.contracts {
            None => true,
            Some(set) => set.iter().any(|c| key.in_scope(c.as_str())),
        }
    }

    /// A transaction is admitted if any contract it invokes is in the filter.
    pub fn admits_tx(&self, tx: &Transaction) -> bool {
        tx.invoked_contracts.iter().any(|c| self.admits_contract(c.as_str()))
    }

    /// True if every contract `tx` invokes is local to this filter.
    pub fn covers_tx(&self, tx: &Transaction) -> bool {
        tx.invoked_contracts.iter().all(|c| self.admits_contract(c.as_str()))
    }

    pub fn with_peer(&self, peer_id: PeerId) -> Filter {
        Filter {
            peer_id,
            contracts: self.contracts.clone(),
        }
    }

    fn encode(&self, e: &mut Encoder) {
        e.str(self.peer_id.as_str());
        match &self.contracts {
            None => {
                e.u8(0);
            }
            Some(set) => {
                e.u8(1).len(set.len());
                for c in set {
                    e.str(c.as_str());
                }
            }
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let peer_id = PeerId::new(d.str("peer id")?);
        match d.u8()? {
            0 => Ok(Filter::full(peer_id)),
            1 => {
                let n = d.len()?;
                let mut set = BTreeSet::new();
                for _ in 0..n {
                    set.insert(ContractId::new(d.str("contract id")?));
                }
                Filter::sparse(peer_id, set).map_err(|e| CodecError::Malformed {
                    what: "filter",
                    reason: e.to_string(),
                })
            }
            tag => Err(CodecError::BadTag { what: "filter", tag }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseBlock {
    pub number: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub block_hash: Digest,
    pub applied_filter: Filter,
    /// One leaf per original transaction; doubles as the full T-ID list.
    pub merkle_leaves: Vec<Digest>,
    /// `(original index, transaction)` in ascending index order.
    pub included: Vec<(u32, Arc<Transaction>)>,
}

impl SparseBlock {
    pub fn all_tx_ids(&self) -> &[Digest] {
        &self.merkle_leaves
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.u64(self.number)
            .digest(&self.prev_hash)
            .digest(&self.merkle_root)
            .digest(&self.block_hash);
        self.applied_filter.encode(e);
        e.len(self.merkle_leaves.len());
        for l in &self.merkle_leaves {
            e.digest(l);
        }
        e.len(self.included.len());
        for (idx, tx) in &self.included {
            e.u32(*idx).bytes(&tx.to_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(256 + self.merkle_leaves.len() * 32 + self.included.len() * 256);
        self.encode(&mut e);
        e.finish()
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let number = d.u64()?;
        let prev_hash = d.digest()?;
        let merkle_root = d.digest()?;
        let block_hash = d.digest()?;
        let applied_filter = Filter::decode(d)?;
        let n = d.len()?;
        let mut merkle_leaves = Vec::with_capacity(n);
        for _ in 0..n {
            merkle_leaves.push(d.digest()?);
        }
        let n = d.len()?;
        let mut included = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = d.u32()?;
            let bytes = d.bytes()?;
            included.push((idx, Arc::new(Transaction::from_bytes(&bytes)?)));
        }
        Ok(SparseBlock {
            number,
            prev_hash,
            merkle_root,
            block_hash,
            applied_filter,
            merkle_leaves,
            included,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let sb = Self::decode(&mut d)?;
        d.finish()?;
        Ok(sb)
    }
}

/// Applies `filter` to a sealed block. A transaction invoking several
/// contracts is included if any of them is in the filter.
pub fn make_sparse(block: &Block, filter: &Filter) -> SparseBlock {
    SparseBlock {
        number: block.number,
        prev_hash: block.prev_hash,
        merkle_root: block.merkle_root,
        block_hash: block.block_hash,
        applied_filter: filter.clone(),
        merkle_leaves: block.tx_ids(),
        included: block
            .txs
            .iter()
            .enumerate()
            .filter(|(_, tx)| filter.admits_tx(tx))
            .map(|(i, tx)| (i as u32, tx.clone()))
            .collect(),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SparseRejection {
    #[error("previous hash does not match the local chain")]
    PrevHashMismatch,
    #[error("merkle root does not match the leaf vector")]
    RootMismatch,
    #[error("block hash does not match the header")]
    BlockHashMismatch,
    #[error("included transaction at {0} does not hash to its leaf")]
    LeafMismatch(u32),
    #[error("included index {0} out of range or out of order")]
    BadIndex(u32),
    #[error("included transaction at {0} does not match the applied filter")]
    FilterMismatch(u32),
}

/// Verifies a sparse block against the expected previous hash.
pub fn verify_sparse(sb: &SparseBlock, expected_prev_hash: &Digest) -> Result<(), SparseRejection> {
    if sb.prev_hash != *expected_prev_hash {
        return Err(SparseRejection::PrevHashMismatch);
    }
    if merkle_root(&sb.merkle_leaves).ok() != Some(sb.merkle_root) {
        return Err(SparseRejection::RootMismatch);
    }
    if Block::header_hash(sb.number, &sb.prev_hash, &sb.merkle_root) != sb.block_hash {
        return Err(SparseRejection::BlockHashMismatch);
    }
    let mut last: Option<u32> = None;
    for (idx, tx) in &sb.included {
        if last.is_some_and(|l| *idx <= l) || *idx as usize >= sb.merkle_leaves.len() {
            return Err(SparseRejection::BadIndex(*idx));
        }
        last = Some(*idx);
        let leaf = sb.merkle_leaves[*idx as usize];
        if tx.tx_id != leaf || !tx.id_matches_content() {
            return Err(SparseRejection::LeafMismatch(*idx));
        }
        if !sb.applied_filter.admits_tx(tx) {
            return Err(SparseRejection::FilterMismatch(*idx));
        }
    }
    Ok(())
}

/// Exact set of every transaction id seen so far.
#[derive(Debug, Clone, Default)]
pub struct DuplicateTracker {
    seen: HashSet<Digest>,
}

impl DuplicateTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: impl IntoIterator<Item = Digest>) -> Self {
        DuplicateTracker {
            seen: ids.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.seen.contains(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &Digest> {
        self.seen.iter()
    }

    /// Returns the indices whose id was already seen, including repeats
    /// within `all_tx_ids`, and records the new ids.
    pub fn check_duplicates(&mut self, all_tx_ids: &[Digest]) -> BTreeSet<usize> {
        all_tx_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| !self.seen.insert(**id))
            .map(|(i, _)| i)
            .collect()
    }
}

/// A block as delivered to a peer: either the full block or a sparse one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveredBlock {
    Full(Block),
    Sparse(SparseBlock),
}

impl DeliveredBlock {
    pub fn number(&self) -> u64 {
        match self {
            DeliveredBlock::Full(b) => b.number,
            DeliveredBlock::Sparse(s) => s.number,
        }
    }

    pub fn prev_hash(&self) -> Digest {
        match self {
            DeliveredBlock::Full(b) => b.prev_hash,
            DeliveredBlock::Sparse(s) => s.prev_hash,
        }
    }

    pub fn block_hash(&self) -> Digest {
        match self {
            DeliveredBlock::Full(b) => b.block_hash,
            DeliveredBlock::Sparse(s) => s.block_hash,
        }
    }

    pub fn tx_count(&self) -> usize {
        match self {
            DeliveredBlock::Full(b) => b.txs.len(),
            DeliveredBlock::Sparse(s) => s.merkle_leaves.len(),
        }
    }

    pub fn all_tx_ids(&self) -> Vec<Digest> {
        match self {
            DeliveredBlock::Full(b) => b.tx_ids(),
            DeliveredBlock::Sparse(s) => s.merkle_leaves.clone(),
        }
    }

    /// Transactions physically present, with their original index.
    pub fn present_txs(&self) -> Vec<(u32, Arc<Transaction>)> {
        match self {
            DeliveredBlock::Full(b) => b.txs.iter().enumerate().map(|(i, t)| (i as u32, t.clone())).collect(),
            DeliveredBlock::Sparse(s) => s.included.clone(),
        }
    }

    pub fn tx_at(&self, index: u32) -> Option<&Arc<Transaction>> {
        match self {
            DeliveredBlock::Full(b) => b.txs.get(index as usize),
            DeliveredBlock::Sparse(s) => s
                .included
                .binary_search_by_key(&index, |(i, _)| *i)
                .ok()
                .map(|pos| &s.included[pos].1),
        }
    }

    pub fn verify(&self, expected_prev_hash: &Digest) -> Result<(), SparseRejection> {
        match self {
            DeliveredBlock::Full(b) => {
                if b.prev_hash != *expected_prev_hash {
                    return Err(SparseRejection::PrevHashMismatch);
                }
                if b.verify_integrity() {
                    Ok(())
                } else {
                    Err(SparseRejection::RootMismatch)
                }
            }
            DeliveredBlock::Sparse(s) => verify_sparse(s, expected_prev_hash),
        }
    }

    pub fn encode(&self, e: &mut Encoder) {
        match self {
            DeliveredBlock::Full(b) => {
                e.u8(0);
                b.encode(e);
            }
            DeliveredBlock::Sparse(s) => {
                e.u8(1);
                s.encode(e);
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode(&mut e);
        e.finish()
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        match d.u8()? {
            0 => Ok(DeliveredBlock::Full(Block::decode(d)?)),
            1 => Ok(DeliveredBlock::Sparse(SparseBlock::decode(d)?)),
            tag => Err(CodecError::BadTag { what: "delivered block", tag }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{seal_block, RwSet};

    fn tx(contracts: &[&str], tag: &str) -> Arc<Transaction> {
        let mut rw = RwSet::new();
        for c in contracts {
            rw = rw.write(StateKey::new(*c, tag.as_bytes().to_vec()), b"v".to_vec());
        }
        Arc::new(rw.into_proposal().unwrap().into_transaction(vec![]))
    }

    fn filter(cs: &[&str]) -> Filter {
        Filter::sparse(PeerId::new("p"), cs.iter().map(|c| ContractId::new(*c))).unwrap()
    }

    fn table4_block() -> Block {
        seal_block(
            1,
            Digest::ZERO,
            vec![tx(&["S1"], "t1"), tx(&["S1", "S2"], "t2"), tx(&["S1", "S2", "S3"], "t3")],
        )
        .unwrap()
    }

    #[test]
    fn universal_filter_keeps_everything() {
        let b = table4_block();
        let sb = make_sparse(&b, &Filter::full(PeerId::new("p")));
        assert_eq!(sb.included.len(), 3);
        assert_eq!(verify_sparse(&sb, &Digest::ZERO), Ok(()));
    }

    #[test]
    fn s2_filter_selects_t2_and_t3() {
        let sb = make_sparse(&table4_block(), &filter(&["S2"]));
        let idx: Vec<u32> = sb.included.iter().map(|(i, _)| *i).collect();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn filter_matching_nothing_keeps_ids() {
        let b = table4_block();
        let sb = make_sparse(&b, &filter(&["S9"]));
        assert!(sb.included.is_empty());
        assert_eq!(sb.all_tx_ids(), b.tx_ids().as_slice());
        assert_eq!(verify_sparse(&sb, &Digest::ZERO), Ok(()));
    }

    #[test]
    fn tampered_tx_rejected() {
        let mut sb = make_sparse(&table4_block(), &filter(&["S1"]));
        let mut t = (*sb.included[0].1).clone();
        t.write_set[0].value = b"w".to_vec();
        sb.included[0].1 = Arc::new(t);
        assert_eq!(verify_sparse(&sb, &Digest::ZERO), Err(SparseRejection::LeafMismatch(0)));
    }

    #[test]
    fn substituted_id_list_rejected() {
        let mut sb = make_sparse(&table4_block(), &filter(&["S1"]));
        sb.merkle_leaves[2] = Digest::of(b"forged");
        assert_eq!(verify_sparse(&sb, &Digest::ZERO), Err(SparseRejection::RootMismatch));
    }

    #[test]
    fn reordering_rejected() {
        let mut sb = make_sparse(&table4_block(), &filter(&["S1"]));
        sb.included.swap(0, 1);
        assert!(verify_sparse(&sb, &Digest::ZERO).is_err());
    }

    #[test]
    fn wrong_prev_hash_rejected() {
        let sb = make_sparse(&table4_block(), &filter(&["S1"]));
        assert_eq!(
            verify_sparse(&sb, &Digest::of(b"x")),
            Err(SparseRejection::PrevHashMismatch)
        );
    }

    #[test]
    fn duplicates_detected_across_and_within_blocks() {
        let a = Digest::of(b"a");
        let b = Digest::of(b"b");
        let mut d = DuplicateTracker::new();
        assert!(d.check_duplicates(&[a, b]).is_empty());
        assert_eq!(d.check_duplicates(&[Digest::of(b"c"), a]), BTreeSet::from([1]));
        let e = Digest::of(b"e");
        assert_eq!(d.check_duplicates(&[e, e]), BTreeSet::from([1]));
    }

    #[test]
    fn sparse_bytes_round_trip() {
        let sb = make_sparse(&table4_block(), &filter(&["S2", "S3"]));
        assert_eq!(SparseBlock::from_bytes(&sb.to_bytes()).unwrap(), sb);
    }
}
