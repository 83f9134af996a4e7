use std::collections::BTreeSet;

use super::{ContractId, KeyRegistry, ModelError, OrgId, RangeQueryInfo, ReadEntry, StateKey, WriteEntry};
use crate::codec::{CodecError, Decoder, Encoder};
use crate::digest::Digest;

/// Raw simulation output before canonicalization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RwSet {
    pub reads: Vec<ReadEntry>,
    pub writes: Vec<WriteEntry>,
    pub ranges: Vec<RangeQueryInfo>,
}

impl RwSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(mut self, key: StateKey, version: Option<super::Version>) -> Self {
        self.reads.push(ReadEntry::new(key, version));
        self
    }

    pub fn write(mut self, key: StateKey, value: impl Into<Vec<u8>>) -> Self {
        self.writes.push(WriteEntry::put(key, value));
        self
    }

    pub fn delete(mut self, key: StateKey) -> Self {
        self.writes.push(WriteEntry::delete(key));
        self
    }

    pub fn range(mut self, rq: RangeQueryInfo) -> Self {
        self.ranges.push(rq);
        self
    }

    /// Validates the invariants and brings the set into canonical order:
    /// entries are grouped per contract in invoked-contract order and sorted
    /// by key within a contract.
    pub fn into_proposal(mut self) -> Result<Proposal, ModelError> {
        let sort_key = |k: &StateKey| (k.scope(), k.clone());

        for k in self.reads.iter().map(|r| &r.key).chain(self.writes.iter().map(|w| &w.key)) {
            if k.contract.as_str().is_empty() || (k.is_policy() && k.key.is_empty()) {
                return Err(ModelError::EmptyContract);
            }
        }

        self.reads.sort_by_cached_key(|r| sort_key(&r.key));
        let mut reads: Vec<ReadEntry> = Vec::with_capacity(self.reads.len());
        for r in self.reads {
            match reads.last() {
                Some(prev) if prev.key == r.key => {
                    if prev.version != r.version {
                        return Err(ModelError::ConflictingRead(r.key));
                    }
                }
                _ => reads.push(r),
            }
        }

        self.writes.sort_by_cached_key(|w| sort_key(&w.key));
        for pair in self.writes.windows(2) {
            if pair[0].key == pair[1].key {
                return Err(ModelError::DuplicateWrite(pair[0].key.clone()));
            }
        }
        for w in &self.writes {
            if w.is_delete && !w.value.is_empty() {
                return Err(ModelError::DeleteWithValue(w.key.clone()));
            }
        }

        for rq in &self.ranges {
            rq.check()?;
        }
        self.ranges.sort_by(|a, b| {
            (&a.contract, &a.start_key, &a.end_key).cmp(&(&b.contract, &b.start_key, &b.end_key))
        });

        let invoked: BTreeSet<ContractId> = reads
            .iter()
            .map(|r| r.key.scope())
            .chain(self.writes.iter().map(|w| w.key.scope()))
            .chain(self.ranges.iter().map(|r| r.contract.clone()))
            .collect();
        if invoked.is_empty() {
            return Err(ModelError::NoContracts);
        }

        Ok(Proposal {
            invoked_contracts: invoked.into_iter().collect(),
            read_set: reads,
            write_set: self.writes,
            range_queries: self.ranges,
        })
    }
}

/// A canonical read-write set awaiting endorsement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub invoked_contracts: Vec<ContractId>,
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    pub range_queries: Vec<RangeQueryInfo>,
}

impl Proposal {
    /// The canonical bytes endorsers sign.
    pub fn response_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(256);
        self.encode(&mut e);
        e.finish()
    }

    fn encode(&self, e: &mut Encoder) {
        encode_rw_parts(
            e,
            &self.invoked_contracts,
            &self.read_set,
            &self.write_set,
            &self.range_queries,
        );
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let n = d.len()?;
        let mut invoked_contracts = Vec::with_capacity(n);
        for _ in 0..n {
            invoked_contracts.push(ContractId::new(d.str("contract id")?));
        }
        let n = d.len()?;
        let mut read_set = Vec::with_capacity(n);
        for _ in 0..n {
            read_set.push(ReadEntry::decode(d)?);
        }
        let n = d.len()?;
        let mut write_set = Vec::with_capacity(n);
        for _ in 0..n {
            write_set.push(WriteEntry::decode(d)?);
        }
        let n = d.len()?;
        let mut range_queries = Vec::with_capacity(n);
        for _ in 0..n {
            range_queries.push(RangeQueryInfo::decode(d)?);
        }
        Ok(Proposal {
            invoked_contracts,
            read_set,
            write_set,
            range_queries,
        })
    }

    /// Endorses the proposal with each org's keyed digest.
    pub fn endorse<'a>(self, keys: &KeyRegistry, orgs: impl IntoIterator<Item = &'a OrgId>) -> Transaction {
        let response = self.response_bytes();
        let endorsements = orgs
            .into_iter()
            .map(|org| Endorsement {
                org: org.clone(),
                signature: keys.sign(org, &response),
            })
            .collect();
        self.into_transaction(endorsements)
    }

    pub fn into_transaction(self, endorsements: Vec<Endorsement>) -> Transaction {
        let mut tx = Transaction {
            tx_id: Digest::ZERO,
            invoked_contracts: self.invoked_contracts,
            read_set: self.read_set,
            write_set: self.write_set,
            range_queries: self.range_queries,
            endorsements,
        };
        tx.tx_id = compute_tx_id(&tx);
        tx
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub org: OrgId,
    /// Keyed digest over the canonical response bytes.
    pub signature: Digest,
}

/// An endorsed transaction, the unit of validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Digest,
    pub invoked_contracts: Vec<ContractId>,
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    pub range_queries: Vec<RangeQueryInfo>,
    pub endorsements: Vec<Endorsement>,
}

/// Digest of the canonical transaction bytes, excluding the id field itself.
pub fn compute_tx_id(tx: &Transaction) -> Digest {
    let mut e = Encoder::with_capacity(256);
    tx.encode_body(&mut e);
    Digest::of(e.as_slice())
}

impl Transaction {
    fn encode_rw(&self, e: &mut Encoder) {
        encode_rw_parts(
            e,
            &self.invoked_contracts,
            &self.read_set,
            &self.write_set,
            &self.range_queries,
        );
    }

    pub fn response_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(256);
        self.encode_rw(&mut e);
        e.finish()
    }

    pub fn invokes(&self, contract: &str) -> bool {
        self.invoked_contracts.iter().any(|c| c.as_str() == contract)
    }

    pub fn id_matches_content(&self) -> bool {
        compute_tx_id(self) == self.tx_id
    }

    fn encode_body(&self, e: &mut Encoder) {
        self.encode_rw(e);
        e.len(self.endorsements.len());
        for en in &self.endorsements {
            e.str(en.org.as_str()).digest(&en.signature);
        }
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.digest(&self.tx_id);
        self.encode_body(e);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(256);
        self.encode(&mut e);
        e.finish()
    }

    /// Decodes a transaction, rejecting any encoding that is not in canonical
    /// form. The id field is decoded as-is; use [`Self::id_matches_content`]
    /// to check it.
    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let tx_id = d.digest()?;
        let proposal = Proposal::decode(d)?;
        let n = d.len()?;
        let mut endorsements = Vec::with_capacity(n);
        for _ in 0..n {
            endorsements.push(Endorsement {
                org: OrgId::new(d.str("org id")?),
                signature: d.digest()?,
            });
        }
        let canonical = RwSet {
            reads: proposal.read_set.clone(),
            writes: proposal.write_set.clone(),
            ranges: proposal.range_queries.clone(),
        }
        .into_proposal()
        .map_err(|e| CodecError::Malformed {
            what: "transaction",
            reason: e.to_string(),
        })?;
        if canonical != proposal {
            return Err(CodecError::Malformed {
                what: "transaction",
                reason: "read-write set not in canonical form".into(),
            });
        }
        Ok(Transaction {
            tx_id,
            invoked_contracts: proposal.invoked_contracts,
            read_set: proposal.read_set,
            write_set: proposal.write_set,
            range_queries: proposal.range_queries,
            endorsements,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let tx = Self::decode(&mut d)?;
        d.finish()?;
        Ok(tx)
    }
}

fn encode_rw_parts(
    e: &mut Encoder,
    invoked: &[ContractId],
    reads: &[ReadEntry],
    writes: &[WriteEntry],
    ranges: &[RangeQueryInfo],
) {
    e.len(invoked.len());
    for c in invoked {
        e.str(c.as_str());
    }
    e.len(reads.len());
    for r in reads {
        r.encode(e);
    }
    e.len(writes.len());
    for w in writes {
        w.encode(e);
    }
    e.len(ranges.len());
    for rq in ranges {
        rq.encode(e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Version;

    fn key(c: &str, k: &str) -> StateKey {
        StateKey::new(c, k.as_bytes().to_vec())
    }

    fn sample(value: &[u8]) -> Transaction {
        RwSet::new()
            .read(key("S1", "a"), Some(Version::new(1, 0)))
            .write(key("S1", "b"), value.to_vec())
            .into_proposal()
            .unwrap()
            .into_transaction(vec![])
    }

    #[test]
    fn identical_transactions_share_an_id() {
        assert_eq!(sample(b"x").tx_id, sample(b"x").tx_id);
    }

    #[test]
    fn one_changed_write_value_changes_the_id() {
        let a = sample(b"x");
        let b = sample(b"y");
        assert_ne!(compute_tx_id(&a), compute_tx_id(&b));
    }

    #[test]
    fn read_only_transaction_has_an_id() {
        let tx = RwSet::new()
            .read(key("S1", "a"), None)
            .into_proposal()
            .unwrap()
            .into_transaction(vec![]);
        assert!(tx.write_set.is_empty());
        assert!(tx.id_matches_content());
        assert_ne!(tx.tx_id, Digest::ZERO);
    }

    #[test]
    fn invoked_contracts_follow_entries() {
        let tx = RwSet::new()
            .read(key("S2", "a"), None)
            .write(key("S1", "b"), b"v".to_vec())
            .read(StateKey::policy(&"S3".into()), Some(Version::new(0, 0)))
            .into_proposal()
            .unwrap();
        let names: Vec<_> = tx.invoked_contracts.iter().map(|c| c.as_str()).collect();
        assert_eq!(names, vec!["S1", "S2", "S3"]);
    }

    #[test]
    fn duplicate_write_rejected() {
        let err = RwSet::new()
            .write(key("S1", "b"), b"1".to_vec())
            .write(key("S1", "b"), b"2".to_vec())
            .into_proposal()
            .unwrap_err();
        assert!(matches!(err, ModelError::DuplicateWrite(_)));
    }

    #[test]
    fn empty_set_rejected() {
        assert_eq!(RwSet::new().into_proposal().unwrap_err(), ModelError::NoContracts);
    }

    #[test]
    fn bytes_round_trip_and_non_canonical_rejected() {
        let tx = sample(b"x");
        let bytes = tx.to_bytes();
        assert_eq!(Transaction::from_bytes(&bytes).unwrap(), tx);

        let mut swapped = tx.clone();
        swapped.invoked_contracts.push("S9".into());
        assert!(Transaction::from_bytes(&swapped.to_bytes()).is_err());
    }
}
