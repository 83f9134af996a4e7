//! Adding a peer mid-run: join from a state snapshot versus replaying the
//! block store, checked against a peer that was present from genesis.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::config::{ConfigInvalid, ScenarioConfig};
use super::stream::{generate_stream, BlockStream};
use crate::digest::DIGEST_LEN;
use crate::dist::CommitMode;
use crate::model::{ContractId, TxValidity};
use crate::peer::{PeerCore, PeerError, SyncPeer};
use crate::snapshot::{extract_for_contracts, seed_from_manifests, SnapshotError, SnapshotManifest};
use crate::sparse::{make_sparse, DeliveredBlock, DuplicateTracker, Filter, PeerId};
use crate::state::StateEngine;

#[derive(Debug, Error)]
pub enum ScaleUpError {
    #[error(transparent)]
    Config(#[from] ConfigInvalid),
    #[error(transparent)]
    Peer(#[from] PeerError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("peer left work unfinished after block {0}")]
    Unfinished(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleUpReport {
    pub join_height: u64,
    pub joiner: PeerId,
    pub contracts: Vec<ContractId>,
    /// Encoded manifests shipped to the joiner.
    pub manifest_bytes: u64,
    /// The joiner's copy of every tx id seen so far, for duplicate checks.
    pub id_bytes: u64,
    /// Blocks `0..=join_height` a replaying joiner downloads.
    pub replay_bytes: u64,
    pub donor_block_store_bytes: u64,
    pub donor_state_bytes: u64,
    pub snapshot_join_time: Duration,
    pub replay_join_time: Duration,
    pub blocks_compared: u64,
    /// Post-join flags of the snapshot joiner equal the always-present peer's.
    pub snapshot_bitmaps_match: bool,
    pub replay_bitmaps_match: bool,
    /// Final in-scope state digests agree across the three peers.
    pub states_match: bool,
}

impl ScaleUpReport {
    pub fn snapshot_bytes(&self) -> u64 {
        self.manifest_bytes + self.id_bytes
    }

    /// How many times fewer bytes the snapshot join ships.
    pub fn byte_ratio(&self) -> f64 {
        self.replay_bytes as f64 / self.snapshot_bytes().max(1) as f64
    }
}

fn deliver(b: &crate::model::Block, f: &Filter) -> DeliveredBlock {
    if f.is_full() {
        DeliveredBlock::Full(b.clone())
    } else {
        DeliveredBlock::Sparse(make_sparse(b, f))
    }
}

fn new_peer(stream: &BlockStream, f: &Filter) -> Result<SyncPeer, ScaleUpError> {
    let mut state = StateEngine::in_memory(f.clone());
    state.commit_genesis(stream.genesis.clone()).map_err(PeerError::from)?;
    let core = PeerCore::new(f.clone(), CommitMode::Deferred, 4, 64, &state);
    Ok(SyncPeer::new(core, state, stream.keys.clone()))
}

fn feed(peer: &mut SyncPeer, stream: &BlockStream, range: std::ops::RangeInclusive<u64>) -> Result<(), ScaleUpError> {
    let f = peer.core.filter().clone();
    for n in range {
        peer.ingest(deliver(&stream.blocks[n as usize - 1], &f))?;
        peer.drain()?;
        if !peer.core.is_quiescent() {
            return Err(ScaleUpError::Unfinished(n));
        }
    }
    Ok(())
}

fn flags_after(peer: &SyncPeer, from: u64) -> Vec<Vec<TxValidity>> {
    peer.state
        .blocks()
        .iter()
        .filter(|b| b.block.number() > from)
        .map(|b| b.flags.clone())
        .collect()
}

/// Runs the scale-up comparison. The joiner hosts the first peer filter of
/// the first org, or the first contract if peers are full.
pub fn run_scale_up(cfg: &ScenarioConfig, join_height: u64) -> Result<ScaleUpReport, ScaleUpError> {
    cfg.validate()?;
    if cfg.cross_contract_mix > 0.0 {
        return Err(ConfigInvalid {
            field: "cross_contract_mix".into(),
            reason: "scale-up runs a lone sparse joiner and needs single-contract load".into(),
        }
        .into());
    }
    if join_height == 0 || join_height >= cfg.block_count {
        return Err(ConfigInvalid {
            field: "block_count".into(),
            reason: format!("join height {join_height} must fall inside 1..{}", cfg.block_count),
        }
        .into());
    }
    let stream = generate_stream(cfg);
    let contracts: BTreeSet<ContractId> = match cfg.filters(0).into_iter().next().and_then(|f| f.contracts().cloned()) {
        Some(cs) => cs,
        None => [cfg.contracts[0].clone()].into_iter().collect(),
    };
    let joiner_filter = Filter::sparse(PeerId::new("joiner"), contracts.iter().cloned()).expect("non-empty");
    let end = cfg.block_count;

    let mut donor = new_peer(&stream, &Filter::full(PeerId::new("donor")))?;
    feed(&mut donor, &stream, 1..=join_height)?;
    let mut present = new_peer(&stream, &joiner_filter.with_peer(PeerId::new("present")))?;
    feed(&mut present, &stream, 1..=join_height)?;

    let started = Instant::now();
    let manifests = extract_for_contracts(&donor.state, &contracts, join_height)?;
    let shipped: Vec<Vec<u8>> = manifests.iter().map(|m| m.to_bytes()).collect();
    let ids: Vec<_> = donor.core.known_ids().ids().copied().collect();
    let received = shipped
        .iter()
        .map(|b| SnapshotManifest::from_bytes(b))
        .collect::<Result<Vec<_>, _>>()?;
    let tip = donor.state.last_hash();
    let mut state = StateEngine::in_memory(joiner_filter.clone());
    seed_from_manifests(&mut state, &received, join_height, tip)?;
    let core = PeerCore::with_known_ids(
        joiner_filter.clone(),
        CommitMode::Deferred,
        4,
        64,
        &state,
        DuplicateTracker::from_ids(ids.iter().copied()),
    );
    let mut joiner = SyncPeer::new(core, state, stream.keys.clone());
    let snapshot_join_time = started.elapsed();

    let started = Instant::now();
    let mut replayer = new_peer(&stream, &joiner_filter.with_peer(PeerId::new("replayer")))?;
    feed(&mut replayer, &stream, 1..=join_height)?;
    let replay_join_time = started.elapsed();

    feed(&mut joiner, &stream, join_height + 1..=end)?;
    feed(&mut present, &stream, join_height + 1..=end)?;
    feed(&mut replayer, &stream, join_height + 1..=end)?;
    feed(&mut donor, &stream, join_height + 1..=end)?;

    let expected = flags_after(&present, join_height);
    let scope = joiner_filter.clone();
    let digest = |p: &SyncPeer| p.state.db().digest_where(|k| scope.admits_key(k));
    Ok(ScaleUpReport {
        join_height,
        joiner: joiner_filter.peer_id.clone(),
        contracts: contracts.into_iter().collect(),
        manifest_bytes: shipped.iter().map(|b| b.len() as u64).sum(),
        id_bytes: (ids.len() * DIGEST_LEN) as u64,
        replay_bytes: donor.state.blocks().bytes_between(0, join_height),
        donor_block_store_bytes: donor.state.blocks().bytes_between(0, join_height),
        donor_state_bytes: donor.state.db().byte_size(),
        snapshot_join_time,
        replay_join_time,
        blocks_compared: end - join_height,
        snapshot_bitmaps_match: flags_after(&joiner, join_height) == expected,
        replay_bitmaps_match: flags_after(&replayer, join_height) == expected,
        states_match: digest(&joiner) == digest(&present)
            && digest(&replayer) == digest(&present)
            && digest(&donor) == digest(&present),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::WorkloadKind;

    #[test]
    fn snapshot_joiner_tracks_present_peer() {
        let cfg = ScenarioConfig {
            workload: WorkloadKind::Ycsb,
            contracts: (0..2).map(|i| ContractId::new(format!("S{i}"))).collect(),
            peers_per_org: 2,
            filters_per_peer: 1,
            account_count: 20,
            value_size_bytes: 256,
            block_size: 10,
            block_count: 30,
            zipf_s: 0.8,
            seed: 3,
            ..Default::default()
        };
        let r = run_scale_up(&cfg, 20).unwrap();
        assert!(r.snapshot_bitmaps_match && r.replay_bitmaps_match && r.states_match, "{r:?}");
        assert!(r.snapshot_bytes() < r.replay_bytes);
    }
}
