//! Shared inputs for the criterion benches.

use eov_core::model::ContractId;
use eov_core::sim::{generate_stream, BlockStream, ScenarioConfig, WorkloadKind};
use eov_core::{Filter, PeerCore, PeerId, StateEngine, SyncPeer};
use eov_core::CommitMode;

/// A Smallbank stream over `contracts` contracts with blocks of `block_size`.
pub fn smallbank_stream(contracts: usize, block_size: usize, block_count: u64) -> BlockStream {
    generate_stream(&ScenarioConfig {
        workload: WorkloadKind::Smallbank,
        contracts: (0..contracts).map(|i| ContractId::new(format!("S{i}"))).collect(),
        account_count: 1_000,
        block_size,
        block_count,
        seed: 42,
        ..Default::default()
    })
}

/// A full peer that has committed genesis only.
pub fn fresh_peer(stream: &BlockStream) -> SyncPeer {
    let f = Filter::full(PeerId::new("bench"));
    let mut state = StateEngine::in_memory(f.clone());
    state.commit_genesis(stream.genesis.clone()).expect("genesis commits");
    let core = PeerCore::new(f, CommitMode::Deferred, 64, 4096, &state);
    SyncPeer::new(core, state, stream.keys.clone())
}
