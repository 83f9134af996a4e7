//! Batching, sealing and per-peer dissemination of blocks.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::digest::Digest;
use crate::model::{seal_block, Block, Transaction};
use crate::sparse::{make_sparse, DeliveredBlock, Filter, PeerId};

#[derive(Debug, Clone)]
pub struct Orderer {
    block_size: usize,
    pending: VecDeque<Arc<Transaction>>,
    next_number: u64,
    prev_hash: Digest,
    peers: Vec<Filter>,
    sparse: bool,
    shipped: BTreeMap<PeerId, u64>,
}

impl Orderer {
    /// An orderer continuing the chain after `genesis`.
    pub fn new(block_size: usize, genesis: &Block, sparse: bool) -> Self {
        Orderer {
            block_size: block_size.max(1),
            pending: VecDeque::new(),
            next_number: genesis.number + 1,
            prev_hash: genesis.block_hash,
            peers: Vec::new(),
            sparse,
            shipped: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, filter: Filter) {
        self.shipped.entry(filter.peer_id.clone()).or_insert(0);
        self.peers.push(filter);
    }

    pub fn peers(&self) -> &[Filter] {
        &self.peers
    }

    pub fn next_number(&self) -> u64 {
        self.next_number
    }

    pub fn prev_hash(&self) -> Digest {
        self.prev_hash
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn submit(&mut self, tx: Arc<Transaction>) {
        self.pending.push_back(tx);
    }

    /// Seals a full block if enough transactions are pending.
    pub fn cut(&mut self) -> Option<Block> {
        (self.pending.len() >= self.block_size).then(|| self.seal(self.block_size))
    }

    /// Seals whatever is pending, up to one block.
    pub fn flush(&mut self) -> Option<Block> {
        (!self.pending.is_empty()).then(|| self.seal(self.pending.len().min(self.block_size)))
    }

    fn seal(&mut self, n: usize) -> Block {
        let txs: Vec<_> = self.pending.drain(..n).collect();
        let block = seal_block(self.next_number, self.prev_hash, txs).expect("sealing a non-empty batch");
        self.next_number += 1;
        self.prev_hash = block.block_hash;
        block
    }

    /// The block as each registered peer receives it, in registration order.
    /// Sparse peers get a filtered block when sparse dissemination is on.
    pub fn disseminate(&mut self, block: &Block) -> Vec<(PeerId, DeliveredBlock)> {
        let mut out = Vec::with_capacity(self.peers.len());
        for f in &self.peers {
            let d = if self.sparse && !f.is_full() {
                DeliveredBlock::Sparse(make_sparse(block, f))
            } else {
                DeliveredBlock::Full(block.clone())
            };
            *self.shipped.entry(f.peer_id.clone()).or_insert(0) += d.to_bytes().len() as u64;
            out.push((f.peer_id.clone(), d));
        }
        out
    }

    /// Bytes shipped to each peer so far.
    pub fn bytes_shipped(&self) -> &BTreeMap<PeerId, u64> {
        &self.shipped
    }
}
