//! Virtual-time driver for one organization's peers.
//!
//! A single scheduler interleaves block arrivals, worker completions,
//! commit completions and verdict deliveries in `(time, sequence)` order,
//! so a run is a pure function of its inputs. Every peer drives its own
//! [`PeerCore`]; only the cost of work is simulated.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::time::Duration;

use thiserror::Error;
use tracing::trace;

use super::config::ScenarioConfig;
use crate::dist::{CommitMode, ContractVerdict};
use crate::metrics::{BlockSample, PeerMetrics};
use crate::model::{Block, KeyRegistry, StateKey, TxRef, TxValidity};
use crate::peer::{recipients, CommitPoll, CoreCounters, Outbound, PeerCore, PeerError, Task};
use crate::sparse::{make_sparse, DeliveredBlock, Filter};
use crate::state::{StateDb, StateEngine};
use crate::validate::{judge, observe, Judgement};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DesError {
    #[error(transparent)]
    Peer(#[from] PeerError),
    #[error("simulation stalled: {0}")]
    Stuck(String),
}

/// Costs and topology knobs, in microseconds of virtual time.
#[derive(Debug, Clone, PartialEq)]
pub struct DesParams {
    pub mode: CommitMode,
    pub worker_count: usize,
    pub queue_capacity: usize,
    pub verdict_capacity: usize,
    /// Fixed cost of validating one transaction.
    pub base_validation_us: u64,
    pub sig_cost_us: u64,
    /// Persistence cost per stored transaction.
    pub commit_cost_us: u64,
    pub latency_us: u64,
    /// Gap between consecutive blocks leaving the orderer.
    pub block_interval_us: u64,
    /// Slowdown factor per peer, cycled.
    pub peer_speeds: Vec<f64>,
    pub sparse_blocks: bool,
}

impl Default for DesParams {
    fn default() -> Self {
        DesParams {
            mode: CommitMode::Deferred,
            worker_count: 4,
            queue_capacity: 8,
            verdict_capacity: 4096,
            base_validation_us: 20,
            sig_cost_us: 100,
            commit_cost_us: 50,
            latency_us: 500,
            block_interval_us: 0,
            peer_speeds: vec![1.0],
            sparse_blocks: true,
        }
    }
}

impl DesParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        DesParams {
            mode: cfg.commit_mode,
            worker_count: cfg.worker_count,
            queue_capacity: cfg.queue_capacity,
            verdict_capacity: 4096,
            base_validation_us: 20,
            sig_cost_us: cfg.sig_cost_us,
            commit_cost_us: cfg.commit_cost_us,
            latency_us: cfg.network_latency_us,
            block_interval_us: cfg.block_size as u64 * 1_000_000 / cfg.tx_rate,
            peer_speeds: cfg.peer_speeds.clone(),
            sparse_blocks: cfg.sparse_blocks_enabled,
        }
    }

    fn speed(&self, peer: usize) -> f64 {
        self.peer_speeds[peer % self.peer_speeds.len()]
    }
}

enum Event {
    Arrive(DeliveredBlock),
    WorkerDone(Task, Judgement),
    CommitDone(BlockSample),
    Verdict(ContractVerdict),
}

struct Scheduled {
    at: u64,
    seq: u64,
    peer: usize,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct Node {
    core: PeerCore,
    state: StateEngine,
    speed: f64,
    idle_workers: usize,
    ingress: VecDeque<DeliveredBlock>,
    committing: bool,
    stall_from: Option<u64>,
    stall: u64,
    validation: BTreeMap<u64, (u64, u64)>,
    metrics: PeerMetrics,
    bytes_received: u64,
    deferred: Vec<TxRef>,
}

/// Final state of one simulated peer.
#[derive(Debug)]
pub struct DesPeer {
    pub filter: Filter,
    pub core: PeerCore,
    pub state: StateEngine,
    pub metrics: PeerMetrics,
    pub bytes_received: u64,
    /// Transactions this peer committed with the deferred flag.
    pub deferred: Vec<TxRef>,
}

impl DesPeer {
    pub fn counters(&self) -> CoreCounters {
        self.core.counters()
    }
}

#[derive(Debug)]
pub struct DesOutcome {
    pub peers: Vec<DesPeer>,
    /// Org-level flags per block, starting with block 1.
    pub org_bitmaps: Vec<Vec<TxValidity>>,
    /// Transactions on which two admitting peers recorded different flags.
    pub disagreements: usize,
    /// Virtual time at which the last event ran.
    pub end: Duration,
}

impl DesOutcome {
    /// Union of every peer's in-scope committed state.
    pub fn org_state(&self) -> StateDb {
        org_state(self.peers.iter().map(|p| &p.state))
    }

    pub fn deferred_total(&self) -> u64 {
        self.peers.iter().map(|p| p.counters().deferred).sum()
    }

    /// Distinct transactions deferred on at least one peer.
    pub fn deferred_distinct(&self) -> usize {
        self.peers.iter().flat_map(|p| p.deferred.iter()).collect::<BTreeSet<_>>().len()
    }

    pub fn stall_total(&self) -> Duration {
        self.peers.iter().map(|p| p.metrics.remote_stall).sum()
    }
}

/// Union of the in-scope committed states of several peers.
pub fn org_state<'a>(states: impl Iterator<Item = &'a StateEngine>) -> StateDb {
    let mut db = StateDb::new();
    for s in states {
        let scope = s.scope().clone();
        db.extend(s.db().restricted(|k: &StateKey| scope.admits_key(k)));
    }
    db
}

/// Flags each block's transactions by what the admitting peers recorded.
pub fn org_bitmaps<'a>(stores: impl Iterator<Item = &'a StateEngine> + Clone, blocks: u64) -> (Vec<Vec<TxValidity>>, usize) {
    let mut out = Vec::new();
    let mut disagreements = 0;
    for n in 1..=blocks {
        let per_peer: Vec<&[TxValidity]> = stores
            .clone()
            .filter_map(|s| s.blocks().get(n).map(|b| b.flags.as_slice()))
            .collect();
        let width = per_peer.iter().map(|f| f.len()).max().unwrap_or(0);
        let mut row = Vec::with_capacity(width);
        for i in 0..width {
            let mut seen = per_peer
                .iter()
                .filter_map(|f| f.get(i).copied())
                .filter(|f| *f != TxValidity::NotValidated);
            let first = seen.next().unwrap_or(TxValidity::NotValidated);
            if seen.any(|f| f != first) {
                disagreements += 1;
            }
            row.push(first);
        }
        out.push(row);
    }
    (out, disagreements)
}

struct Sim<'a> {
    now: u64,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    nodes: Vec<Node>,
    filters: Vec<Filter>,
    keys: &'a KeyRegistry,
    params: &'a DesParams,
}

impl Sim<'_> {
    fn schedule(&mut self, at: u64, peer: usize, event: Event) {
        self.seq += 1;
        self.queue.push(Scheduled {
            at,
            seq: self.seq,
            peer,
            event,
        });
    }

    fn route(&mut self, out: Vec<Outbound>) {
        for o in out {
            for to in recipients(&o, self.filters.iter()) {
                let idx = self.filters.iter().position(|f| f.peer_id == to).expect("recipient is a known peer");
                let at = self.now + self.params.latency_us;
                self.schedule(at, idx, Event::Verdict(o.verdict.clone()));
            }
        }
    }

    fn cost(&self, peer: usize, us: u64) -> u64 {
        (us as f64 * self.nodes[peer].speed).round() as u64
    }

    fn handle(&mut self, peer: usize, event: Event) -> Result<(), PeerError> {
        match event {
            Event::Arrive(b) => {
                self.nodes[peer].bytes_received += b.to_bytes().len() as u64;
                self.nodes[peer].ingress.push_back(b);
            }
            Event::WorkerDone(task, j) => {
                let now = self.now;
                let n = &mut self.nodes[peer];
                n.idle_workers += 1;
                if let Some(span) = n.validation.get_mut(&task.tx_ref.block) {
                    span.1 = span.1.max(now);
                }
                let out = n.core.complete(&task, j, &mut n.state)?;
                self.route(out);
            }
            Event::CommitDone(mut sample) => {
                let n = &mut self.nodes[peer];
                n.committing = false;
                sample.commit_end = Duration::from_micros(self.now);
                sample.queue_len = n.core.queue_len() + n.ingress.len();
                n.metrics.record(sample);
            }
            Event::Verdict(v) => {
                let n = &mut self.nodes[peer];
                match n.core.on_verdict(v, &mut n.state)? {
                    Ok(out) => self.route(out),
                    Err(v) => {
                        let at = self.now + self.params.latency_us.max(1);
                        self.schedule(at, peer, Event::Verdict(v));
                    }
                }
            }
        }
        self.pump(peer)
    }

    /// Moves the peer forward as far as it can at the current instant.
    fn pump(&mut self, peer: usize) -> Result<(), PeerError> {
        loop {
            let mut progressed = false;
            while self.nodes[peer].core.has_room() {
                let Some(b) = self.nodes[peer].ingress.pop_front() else { break };
                let n = &mut self.nodes[peer];
                let out = n.core.ingest(b, &mut n.state)?;
                self.route(out);
                progressed = true;
            }
            while self.nodes[peer].idle_workers > 0 {
                let now = self.now;
                let n = &mut self.nodes[peer];
                let Some(task) = n.core.next_task() else { break };
                n.idle_workers -= 1;
                let obs = observe(&task.tx, n.core.filter(), &n.state);
                let j = judge(&task.tx, &obs, self.keys);
                n.validation.entry(task.tx_ref.block).or_insert((now, now));
                let us = self.params.base_validation_us + self.params.sig_cost_us * j.signatures_checked as u64;
                let at = now + self.cost(peer, us);
                self.schedule(at, peer, Event::WorkerDone(task, j));
                progressed = true;
            }
            if !self.nodes[peer].committing {
                let now = self.now;
                let n = &mut self.nodes[peer];
                match n.core.poll_commit(&mut n.state)? {
                    CommitPoll::Committed(rep) => {
                        if let Some(from) = n.stall_from.take() {
                            n.stall += now - from;
                        }
                        let stored = rep.flags.iter().filter(|f| **f != TxValidity::NotValidated).count() as u64;
                        let v = n.validation.remove(&rep.number);
                        let sample = BlockSample {
                            number: rep.number,
                            txs: rep.flags.iter().filter(|f| **f != TxValidity::NotValidated).count() as u64,
                            valid: rep.flags.iter().filter(|f| f.is_valid()).count() as u64,
                            deferred: rep.deferred.len() as u64,
                            validation_start: v.map(|v| Duration::from_micros(v.0)),
                            validation_end: v.map(|v| Duration::from_micros(v.1)),
                            commit_start: Duration::from_micros(now),
                            commit_end: Duration::ZERO,
                            queue_len: 0,
                        };
                        n.deferred.extend(rep.deferred.iter().copied());
                        n.committing = true;
                        trace!(peer, block = rep.number, deferred = rep.deferred.len(), "commit");
                        let at = now + self.cost(peer, self.params.commit_cost_us * stored);
                        self.schedule(at, peer, Event::CommitDone(sample));
                        progressed = true;
                    }
                    CommitPoll::Waiting { on_remote, .. } => {
                        if on_remote {
                            n.stall_from.get_or_insert(now);
                        } else if let Some(from) = n.stall_from.take() {
                            n.stall += now - from;
                        }
                    }
                    CommitPoll::Idle => {}
                }
            }
            if !progressed {
                return Ok(());
            }
        }
    }
}

/// Runs `blocks` through one organization whose peers have `filters`.
pub fn run_org(
    genesis: &Block,
    blocks: &[Block],
    keys: &KeyRegistry,
    filters: &[Filter],
    params: &DesParams,
) -> Result<DesOutcome, DesError> {
    let mut nodes = Vec::with_capacity(filters.len());
    for (i, f) in filters.iter().enumerate() {
        let mut state = StateEngine::in_memory(f.clone());
        state.commit_genesis(genesis.clone()).map_err(PeerError::from)?;
        let core = PeerCore::new(f.clone(), params.mode, params.queue_capacity, params.verdict_capacity, &state);
        nodes.push(Node {
            core,
            state,
            speed: params.speed(i),
            idle_workers: params.worker_count.max(1),
            ingress: VecDeque::new(),
            committing: false,
            stall_from: None,
            stall: 0,
            validation: BTreeMap::new(),
            metrics: PeerMetrics::default(),
            bytes_received: 0,
            deferred: Vec::new(),
        });
    }
    let mut sim = Sim {
        now: 0,
        seq: 0,
        queue: BinaryHeap::new(),
        nodes,
        filters: filters.to_vec(),
        keys,
        params,
    };
    for (i, b) in blocks.iter().enumerate() {
        let at = i as u64 * params.block_interval_us + params.latency_us;
        for (p, f) in filters.iter().enumerate() {
            let d = if params.sparse_blocks && !f.is_full() {
                DeliveredBlock::Sparse(make_sparse(b, f))
            } else {
                DeliveredBlock::Full(b.clone())
            };
            sim.schedule(at, p, Event::Arrive(d));
        }
    }
    while let Some(s) = sim.queue.pop() {
        sim.now = s.at;
        sim.handle(s.peer, s.event)?;
    }
    for (i, n) in sim.nodes.iter().enumerate() {
        if !n.core.is_quiescent() || !n.ingress.is_empty() {
            return Err(DesError::Stuck(format!(
                "{} has {} queued blocks, {} graph nodes, {} pending distributed, {} deferred",
                filters[i].peer_id,
                n.core.queue_len() + n.ingress.len(),
                n.core.graph().len(),
                n.core.pending_distributed(),
                n.core.deferred_records().count()
            )));
        }
    }
    let end = Duration::from_micros(sim.now);
    let (org_bitmaps, disagreements) = org_bitmaps(sim.nodes.iter().map(|n| &n.state), blocks.len() as u64);
    let peers = sim
        .nodes
        .into_iter()
        .zip(filters)
        .map(|(mut n, f)| {
            let c = n.core.counters();
            n.metrics.remote_stall = Duration::from_micros(n.stall);
            n.metrics.validated_txs = c.validated;
            n.metrics.signatures_checked = c.signatures;
            DesPeer {
                filter: f.clone(),
                core: n.core,
                state: n.state,
                metrics: n.metrics,
                bytes_received: n.bytes_received,
                deferred: n.deferred,
            }
        })
        .collect();
    Ok(DesOutcome {
        peers,
        org_bitmaps,
        disagreements,
        end,
    })
}
