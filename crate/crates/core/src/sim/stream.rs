//! Deterministic block streams with simulated endorsement.

use std::collections::{BTreeMap, VecDeque};

use super::config::ScenarioConfig;
use super::oracle::{SerialOracle, WorldState};
use super::orderer::Orderer;
use super::workload::{Generator, TxKind};
use crate::model::{Block, KeyRegistry, TxValidity};

/// A genesis block, the ordered blocks after it, and the oracle's verdicts.
#[derive(Debug, Clone)]
pub struct BlockStream {
    pub genesis: Block,
    pub blocks: Vec<Block>,
    pub keys: KeyRegistry,
    /// Oracle flags per block, starting with block 1.
    pub bitmaps: Vec<Vec<TxValidity>>,
    pub final_state: WorldState,
    pub kinds: BTreeMap<TxKind, u64>,
}

impl BlockStream {
    pub fn tx_count(&self) -> usize {
        self.blocks.iter().map(|b| b.txs.len()).sum()
    }

    pub fn valid_count(&self) -> usize {
        self.bitmaps.iter().flatten().filter(|f| f.is_valid()).count()
    }
}

/// Generates `cfg.block_count` blocks of `cfg.block_size` transactions.
///
/// Transactions of block `h` are simulated against the committed state
/// after block `h - 1 - endorsement_lag` (clamped at genesis), so a larger
/// lag means staler reads and more serializability failures.
pub fn generate_stream(cfg: &ScenarioConfig) -> BlockStream {
    let mut gen = Generator::new(cfg);
    let genesis = gen.genesis();
    let keys = gen.keys().clone();
    let mut oracle = SerialOracle::new(keys.clone());
    oracle.genesis(&genesis);
    let mut orderer = Orderer::new(cfg.block_size, &genesis, false);

    let depth = cfg.endorsement_lag as usize + 1;
    let mut views: VecDeque<WorldState> = VecDeque::with_capacity(depth);
    views.push_back(oracle.state().clone());
    let mut blocks = Vec::new();
    let mut bitmaps = Vec::new();
    let mut kinds = BTreeMap::new();
    for _ in 0..cfg.block_count {
        let view = views.front().expect("at least one view");
        for _ in 0..cfg.block_size {
            let (kind, tx) = gen.next_tx(view);
            *kinds.entry(kind).or_insert(0) += 1;
            orderer.submit(tx);
        }
        let block = orderer.cut().expect("a full batch is pending");
        bitmaps.push(oracle.validate_block(&block));
        blocks.push(block);
        if views.len() == depth {
            views.pop_front();
        }
        views.push_back(oracle.state().clone());
    }
    BlockStream {
        genesis,
        blocks,
        keys,
        bitmaps,
        final_state: oracle.state().clone(),
        kinds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::WorkloadKind;

    fn cfg(lag: u64) -> ScenarioConfig {
        ScenarioConfig {
            workload: WorkloadKind::Ycsb,
            account_count: 200,
            value_size_bytes: 16,
            zipf_s: 1.0,
            block_size: 20,
            block_count: 12,
            endorsement_lag: lag,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn chain_is_linked_and_reproducible() {
        let a = generate_stream(&cfg(0));
        let b = generate_stream(&cfg(0));
        assert_eq!(a.blocks.len(), 12);
        assert_eq!(a.blocks[0].prev_hash, a.genesis.block_hash);
        for w in a.blocks.windows(2) {
            assert_eq!(w[1].prev_hash, w[0].block_hash);
        }
        assert_eq!(a.blocks.last().unwrap().block_hash, b.blocks.last().unwrap().block_hash);
        assert_eq!(a.final_state.digest(), b.final_state.digest());
    }

    #[test]
    fn staler_endorsement_invalidates_more() {
        let valid: Vec<usize> = (0..4).map(|lag| generate_stream(&cfg(lag)).valid_count()).collect();
        assert!(valid.windows(2).all(|w| w[0] >= w[1]), "{valid:?}");
        assert!(valid[0] > valid[3]);
    }
}
