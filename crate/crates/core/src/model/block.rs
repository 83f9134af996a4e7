use std::sync::Arc;

use super::{ModelError, Transaction};
use crate::codec::{CodecError, Decoder, Encoder};
use crate::digest::Digest;
use crate::merkle::merkle_root;

/// A sealed block. `block_hash = H(number ∥ prev_hash ∥ merkle_root)` where
/// the Merkle leaves are the transaction ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub number: u64,
    pub prev_hash: Digest,
    pub merkle_root: Digest,
    pub block_hash: Digest,
    pub txs: Vec<Arc<Transaction>>,
}

pub fn seal_block(number: u64, prev_hash: Digest, txs: Vec<Arc<Transaction>>) -> Result<Block, ModelError> {
    if txs.is_empty() {
        return Err(ModelError::EmptyBlock);
    }
    let leaves: Vec<Digest> = txs.iter().map(|t| t.tx_id).collect();
    let root = merkle_root(&leaves).expect("non-empty leaves");
    Ok(Block {
        number,
        prev_hash,
        merkle_root: root,
        block_hash: Block::header_hash(number, &prev_hash, &root),
        txs,
    })
}

impl Block {
    pub fn header_hash(number: u64, prev_hash: &Digest, merkle_root: &Digest) -> Digest {
        Digest::of_parts(&[&number.to_be_bytes(), prev_hash.as_bytes(), merkle_root.as_bytes()])
    }

    pub fn tx_ids(&self) -> Vec<Digest> {
        self.txs.iter().map(|t| t.tx_id).collect()
    }

    /// Checks the Merkle root, the header hash and that every transaction id
    /// matches its content.
    pub fn verify_integrity(&self) -> bool {
        if self.txs.is_empty() || !self.txs.iter().all(|t| t.id_matches_content()) {
            return false;
        }
        merkle_root(&self.tx_ids()).ok() == Some(self.merkle_root)
            && Block::header_hash(self.number, &self.prev_hash, &self.merkle_root) == self.block_hash
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.u64(self.number)
            .digest(&self.prev_hash)
            .digest(&self.merkle_root)
            .digest(&self.block_hash)
            .len(self.txs.len());
        for tx in &self.txs {
            e.bytes(&tx.to_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::with_capacity(128 + self.txs.len() * 256);
        self.encode(&mut e);
        e.finish()
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let number = d.u64()?;
        let prev_hash = d.digest()?;
        let merkle_root = d.digest()?;
        let block_hash = d.digest()?;
        let n = d.len()?;
        let mut txs = Vec::with_capacity(n);
        for _ in 0..n {
            let bytes = d.bytes()?;
            txs.push(Arc::new(Transaction::from_bytes(&bytes)?));
        }
        Ok(Block {
            number,
            prev_hash,
            merkle_root,
            block_hash,
            txs,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut d = Decoder::new(bytes);
        let b = Self::decode(&mut d)?;
        d.finish()?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RwSet, StateKey};

    fn tx(n: u32) -> Arc<Transaction> {
        Arc::new(
            RwSet::new()
                .write(StateKey::new("S1", format!("k{n}").into_bytes()), b"v".to_vec())
                .into_proposal()
                .unwrap()
                .into_transaction(vec![]),
        )
    }

    #[test]
    fn empty_block_rejected() {
        assert_eq!(seal_block(1, Digest::ZERO, vec![]).unwrap_err(), ModelError::EmptyBlock);
    }

    #[test]
    fn single_tx_root_is_its_id() {
        let t = tx(1);
        let b = seal_block(1, Digest::ZERO, vec![t.clone()]).unwrap();
        assert_eq!(b.merkle_root, t.tx_id);
        assert!(b.verify_integrity());
    }

    #[test]
    fn prev_hash_changes_block_hash_not_root() {
        let txs = vec![tx(1), tx(2)];
        let a = seal_block(3, Digest::ZERO, txs.clone()).unwrap();
        let b = seal_block(3, Digest::of(b"other"), txs).unwrap();
        assert_eq!(a.merkle_root, b.merkle_root);
        assert_ne!(a.block_hash, b.block_hash);
    }

    #[test]
    fn number_changes_block_hash() {
        let txs = vec![tx(1)];
        let a = seal_block(3, Digest::ZERO, txs.clone()).unwrap();
        let b = seal_block(4, Digest::ZERO, txs).unwrap();
        assert_ne!(a.block_hash, b.block_hash);
    }

    #[test]
    fn hundred_tx_block() {
        let txs: Vec<_> = (0..100).map(tx).collect();
        let b = seal_block(1, Digest::ZERO, txs).unwrap();
        assert_eq!(b.txs.len(), 100);
        assert!(b.verify_integrity());
        assert_eq!(Block::from_bytes(&b.to_bytes()).unwrap(), b);
    }
}
