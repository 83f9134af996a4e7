//! The per-peer validation and commit state machine.
//!
//! [`PeerCore`] owns the dependency graph, the queue of blocks awaiting
//! commit, the result map and the distributed-validation bookkeeping. It
//! does no signature work itself: a driver pulls a [`Task`], runs
//! [`observe`](crate::validate::observe) and [`judge`] on it, and hands the
//! [`Judgement`] back through [`PeerCore::complete`]. The threaded pipeline
//! and the virtual-time simulator both drive the same core.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::digest::Digest;
use crate::dist::{CommitMode, ContractVerdict, DeferredRecord, PendingDistributedTx, VerdictBuffer};
use crate::graph::{DependencyGraph, GraphError};
use crate::model::{ContractId, KeyRegistry, Transaction, TxRef, TxValidity};
use crate::results::ResultMap;
use crate::sparse::{DeliveredBlock, DuplicateTracker, Filter, PeerId, SparseRejection};
use crate::state::{CommitStats, StateEngine, StateError};
use crate::validate::{judge, observe, Judgement};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PeerError {
    #[error("block rejected: {0}")]
    Rejected(#[from] SparseRejection),
    #[error("expected block {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("block queue is full")]
    QueueFull,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    State(#[from] StateError),
}

/// A transaction handed to a validator worker.
#[derive(Debug, Clone)]
pub struct Task {
    pub tx_ref: TxRef,
    pub tx: Arc<Transaction>,
}

/// A verdict to broadcast, with the contracts that decide its recipients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub verdict: ContractVerdict,
    pub invoked: Vec<ContractId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitReport {
    pub number: u64,
    pub flags: Vec<TxValidity>,
    pub stats: CommitStats,
    /// Transactions committed with the deferred flag.
    pub deferred: Vec<TxRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitPoll {
    Committed(CommitReport),
    /// The front block still needs a result for `tx`. `on_remote` is set
    /// when that result depends on another peer's verdict.
    Waiting { tx: TxRef, on_remote: bool },
    Idle,
}

#[derive(Debug)]
struct PendingBlock {
    block: DeliveredBlock,
    flags: Vec<Option<TxValidity>>,
}

/// Monotone counters kept by the core.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoreCounters {
    pub validated: u64,
    pub signatures: u64,
    pub committed_txs: u64,
    pub valid_txs: u64,
    pub deferred: u64,
    pub resolved: u64,
    pub fate_invalidated: u64,
    pub verdicts_sent: u64,
    pub verdicts_received: u64,
}

#[derive(Debug)]
pub struct PeerCore {
    filter: Filter,
    mode: CommitMode,
    queue_capacity: usize,
    graph: DependencyGraph,
    pending: VecDeque<PendingBlock>,
    results: ResultMap,
    dist: BTreeMap<TxRef, PendingDistributedTx>,
    buffer: VerdictBuffer,
    deferred: BTreeMap<TxRef, DeferredRecord>,
    in_flight: BTreeSet<TxRef>,
    duplicates: DuplicateTracker,
    ingested: u64,
    ingested_hash: Digest,
    counters: CoreCounters,
    resolutions: Vec<(TxRef, TxValidity)>,
}

impl PeerCore {
    /// A core positioned at `state`'s tip, which knows every tx id in
    /// `state`'s block store.
    pub fn new(filter: Filter, mode: CommitMode, queue_capacity: usize, verdict_capacity: usize, state: &StateEngine) -> Self {
        let known = state
            .blocks()
            .iter()
            .flat_map(|b| b.block.all_tx_ids())
            .collect::<Vec<_>>();
        Self::with_known_ids(filter, mode, queue_capacity, verdict_capacity, state, DuplicateTracker::from_ids(known))
    }

    /// Like [`PeerCore::new`] with an explicit set of already-seen tx ids,
    /// for a peer that joined from a snapshot without the old blocks.
    pub fn with_known_ids(
        filter: Filter,
        mode: CommitMode,
        queue_capacity: usize,
        verdict_capacity: usize,
        state: &StateEngine,
        duplicates: DuplicateTracker,
    ) -> Self {
        PeerCore {
            filter,
            mode,
            queue_capacity: queue_capacity.max(1),
            graph: DependencyGraph::new(),
            pending: VecDeque::new(),
            results: ResultMap::new(),
            dist: BTreeMap::new(),
            buffer: VerdictBuffer::new(verdict_capacity),
            deferred: BTreeMap::new(),
            in_flight: BTreeSet::new(),
            duplicates,
            ingested: state.height().unwrap_or(0),
            ingested_hash: state.last_hash(),
            counters: CoreCounters::default(),
            resolutions: Vec::new(),
        }
    }

    pub fn filter(&self) -> &Filter {
        &self.filter
    }

    pub fn mode(&self) -> CommitMode {
        self.mode
    }

    pub fn graph(&self) -> &DependencyGraph {
        &self.graph
    }

    pub fn counters(&self) -> CoreCounters {
        self.counters
    }

    pub fn queue_len(&self) -> usize {
        self.pending.len()
    }

    pub fn has_room(&self) -> bool {
        self.pending.len() < self.queue_capacity
    }

    pub fn ingested_height(&self) -> u64 {
        self.ingested
    }

    pub fn peek_result(&self, r: TxRef) -> Option<TxValidity> {
        self.results.get(r)
    }

    /// Removes and returns the result for `r`, if present.
    pub fn take_result(&mut self, r: TxRef) -> Option<TxValidity> {
        self.results.pop(r)
    }

    pub fn result_count(&self) -> usize {
        self.results.len()
    }

    pub fn buffered_verdicts(&self) -> usize {
        self.buffer.len()
    }

    pub fn deferred_records(&self) -> impl Iterator<Item = &DeferredRecord> {
        self.deferred.values()
    }

    pub fn pending_distributed(&self) -> usize {
        self.dist.len()
    }

    pub fn known_ids(&self) -> &DuplicateTracker {
        &self.duplicates
    }

    /// Deferred transactions finalized since the last call.
    pub fn take_resolutions(&mut self) -> Vec<(TxRef, TxValidity)> {
        std::mem::take(&mut self.resolutions)
    }

    /// Nothing left to validate, commit or resolve.
    pub fn is_quiescent(&self) -> bool {
        self.pending.is_empty() && self.graph.is_empty() && self.dist.is_empty() && self.deferred.is_empty()
    }

    /// Verifies and queues the next block and adds its admitted
    /// transactions to the dependency graph.
    pub fn ingest(&mut self, block: DeliveredBlock, state: &mut StateEngine) -> Result<Vec<Outbound>, PeerError> {
        if !self.has_room() {
            return Err(PeerError::QueueFull);
        }
        let number = block.number();
        if number != self.ingested + 1 {
            return Err(PeerError::OutOfOrder {
                expected: self.ingested + 1,
                got: number,
            });
        }
        block.verify(&self.ingested_hash)?;

        let dups = self.duplicates.check_duplicates(&block.all_tx_ids());
        let mut flags: Vec<Option<TxValidity>> = vec![Some(TxValidity::NotValidated); block.tx_count()];
        let mut admitted = Vec::new();
        for (index, tx) in block.present_txs() {
            let i = index as usize;
            if dups.contains(&i) {
                flags[i] = Some(TxValidity::InvalidDuplicate);
            } else if self.filter.admits_tx(&tx) {
                flags[i] = None;
                admitted.push((index, tx));
            }
        }
        for i in &dups {
            flags[*i] = Some(TxValidity::InvalidDuplicate);
        }
        self.graph.add_txs(number, &admitted, &self.filter)?;
        for (index, tx) in &admitted {
            if !self.filter.covers_tx(tx) {
                let r = TxRef::new(number, *index);
                self.dist
                    .insert(r, PendingDistributedTx::new(r, tx.invoked_contracts.iter().cloned()));
            }
        }
        self.ingested = number;
        self.ingested_hash = block.block_hash();
        self.pending.push_back(PendingBlock { block, flags });

        let mut out = Vec::new();
        for v in self.buffer.drain_through(number) {
            self.merge_verdict(v, state, &mut out)?;
        }
        Ok(out)
    }

    /// Hands out the oldest transaction whose dependencies are all resolved.
    pub fn next_task(&mut self) -> Option<Task> {
        let r = self.graph.get_next_transaction()?;
        self.in_flight.insert(r);
        let tx = self.graph.node(r).expect("dispatched node present").tx.clone();
        Some(Task { tx_ref: r, tx })
    }

    pub fn ready_len(&self) -> usize {
        self.graph.ready_len()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Records a worker's judgement on `task`.
    pub fn complete(&mut self, task: &Task, judgement: Judgement, state: &mut StateEngine) -> Result<Vec<Outbound>, PeerError> {
        let r = task.tx_ref;
        self.in_flight.remove(&r);
        self.counters.validated += 1;
        self.counters.signatures += judgement.signatures_checked as u64;
        let mut out = Vec::new();
        if !self.graph.contains(r) {
            return Ok(out);
        }
        if let Some(p) = self.dist.get_mut(&r) {
            p.local_done = true;
            if p.decision().is_none() {
                for (c, v) in &judgement.per_contract {
                    p.merge(c.clone(), *v);
                    out.push(Outbound {
                        verdict: ContractVerdict {
                            tx_ref: r,
                            contract: c.clone(),
                            verdict: *v,
                            from_peer: self.filter.peer_id.clone(),
                        },
                        invoked: task.tx.invoked_contracts.clone(),
                    });
                }
            }
            self.counters.verdicts_sent += out.len() as u64;
            self.try_finalize(r, state, &mut out)?;
        } else {
            self.finish(r, judgement.validity, state, &mut out)?;
        }
        Ok(out)
    }

    /// Convenience for single-threaded drivers: observe, judge and complete.
    pub fn run_task(&mut self, task: &Task, keys: &KeyRegistry, state: &mut StateEngine) -> Result<Vec<Outbound>, PeerError> {
        let obs = observe(&task.tx, &self.filter, state);
        let j = judge(&task.tx, &obs, keys);
        self.complete(task, j, state)
    }

    /// Handles a verdict from another peer. A verdict for a block not yet
    /// ingested is buffered; it is handed back if the buffer is full.
    pub fn on_verdict(&mut self, v: ContractVerdict, state: &mut StateEngine) -> Result<Result<Vec<Outbound>, ContractVerdict>, PeerError> {
        if v.tx_ref.block > self.ingested {
            return Ok(self.buffer.push(v).map(|_| Vec::new()));
        }
        let mut out = Vec::new();
        self.merge_verdict(v, state, &mut out)?;
        Ok(Ok(out))
    }

    fn merge_verdict(&mut self, v: ContractVerdict, state: &mut StateEngine, out: &mut Vec<Outbound>) -> Result<(), PeerError> {
        self.counters.verdicts_received += 1;
        let r = v.tx_ref;
        if let Some(p) = self.dist.get_mut(&r) {
            p.merge(v.contract, v.verdict);
            self.try_finalize(r, state, out)?;
        }
        Ok(())
    }

    fn try_finalize(&mut self, r: TxRef, state: &mut StateEngine, out: &mut Vec<Outbound>) -> Result<(), PeerError> {
        if self.in_flight.contains(&r) {
            return Ok(());
        }
        let Some(p) = self.dist.get(&r) else { return Ok(()) };
        match p.decision() {
            Some(v) if v.is_valid() && !p.local_done => Ok(()),
            Some(v) => self.finish(r, v, state, out),
            None => Ok(()),
        }
    }

    fn is_committed(r: TxRef, state: &StateEngine) -> bool {
        state.height().is_some_and(|h| r.block <= h)
    }

    /// Terminal handling of `r`: apply if valid, remove from the graph, and
    /// settle every fate-invalidated dependent.
    fn finish(&mut self, r: TxRef, validity: TxValidity, state: &mut StateEngine, out: &mut Vec<Outbound>) -> Result<(), PeerError> {
        let committed = Self::is_committed(r, state);
        if validity.is_valid() && !committed {
            let tx = self.graph.node(r).ok_or(GraphError::UnknownTx(r))?.tx.clone();
            state.apply_dirty(r, &tx.write_set)?;
        }
        self.dist.remove(&r);
        let doomed = self.graph.remove_from_graph(r, validity.is_valid())?;
        self.settle(r, validity, state)?;
        for (d, v) in doomed {
            self.counters.fate_invalidated += 1;
            if let Some(p) = self.dist.remove(&d) {
                let invoked: Vec<ContractId> = p.required.iter().cloned().collect();
                for c in p.required.iter().filter(|c| self.filter.admits_contract(c.as_str())) {
                    out.push(Outbound {
                        verdict: ContractVerdict {
                            tx_ref: d,
                            contract: c.clone(),
                            verdict: v,
                            from_peer: self.filter.peer_id.clone(),
                        },
                        invoked: invoked.clone(),
                    });
                    self.counters.verdicts_sent += 1;
                }
            }
            self.settle(d, v, state)?;
        }
        Ok(())
    }

    fn settle(&mut self, r: TxRef, v: TxValidity, state: &mut StateEngine) -> Result<(), PeerError> {
        if Self::is_committed(r, state) {
            state.resolve_deferred(r, v)?;
            self.deferred.remove(&r);
            self.counters.resolved += 1;
            self.resolutions.push((r, v));
        } else {
            let fresh = self.results.insert(r, v);
            debug_assert!(fresh, "second result for {r}");
        }
        Ok(())
    }

    fn blocks_on_remote(&self, r: TxRef) -> bool {
        let pending = |x: TxRef| self.dist.contains_key(&x) || self.deferred.contains_key(&x);
        self.dist.contains_key(&r) || self.graph.reaches(r, pending)
    }

    /// Commits the front block once every admitted transaction has a
    /// result, deferring those held up by remote verdicts in deferred mode.
    pub fn poll_commit(&mut self, state: &mut StateEngine) -> Result<CommitPoll, PeerError> {
        let Some(front) = self.pending.front() else { return Ok(CommitPoll::Idle) };
        let number = front.block.number();
        let open: Vec<usize> = (0..front.flags.len()).filter(|i| front.flags[*i].is_none()).collect();
        let mut to_defer = Vec::new();
        for i in open {
            let r = TxRef::new(number, i as u32);
            if let Some(v) = self.results.pop(r) {
                self.pending[0].flags[i] = Some(v);
                continue;
            }
            let remote = self.blocks_on_remote(r);
            if remote && self.mode == CommitMode::Deferred {
                to_defer.push(r);
            } else {
                return Ok(CommitPoll::Waiting { tx: r, on_remote: remote });
            }
        }

        let pb = self.pending.pop_front().expect("front block present");
        let mut flags: Vec<TxValidity> = pb.flags.into_iter().map(|f| f.unwrap_or(TxValidity::Deferred)).collect();
        for r in &to_defer {
            flags[r.index as usize] = TxValidity::Deferred;
        }
        for r in &to_defer {
            let roots = self.remote_roots(*r);
            for root in &roots {
                if let Some(rec) = self.deferred.get_mut(root) {
                    rec.dependents.insert(*r);
                }
            }
            self.deferred.insert(
                *r,
                DeferredRecord {
                    tx_ref: *r,
                    block_number: number,
                    dependents: BTreeSet::new(),
                },
            );
        }
        self.counters.deferred += to_defer.len() as u64;
        self.counters.committed_txs += flags.len() as u64;
        self.counters.valid_txs += flags.iter().filter(|f| f.is_valid()).count() as u64;
        let stats = state.commit_block(pb.block, flags.clone())?;
        Ok(CommitPoll::Committed(CommitReport {
            number,
            flags,
            stats,
            deferred: to_defer,
        }))
    }

    /// Deferred or distributed transactions reachable from `r`.
    fn remote_roots(&self, r: TxRef) -> BTreeSet<TxRef> {
        let mut roots = BTreeSet::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![r];
        while let Some(cur) = stack.pop() {
            let Some(n) = self.graph.node(cur) else { continue };
            for to in n.out_edges.keys() {
                if self.dist.contains_key(to) || self.deferred.contains_key(to) {
                    roots.insert(*to);
                }
                if seen.insert(*to) {
                    stack.push(*to);
                }
            }
        }
        roots
    }
}

/// Recipients of `o`: every other peer whose filter holds an invoked contract.
pub fn recipients<'a>(o: &Outbound, filters: impl Iterator<Item = &'a Filter>) -> Vec<PeerId> {
    filters
        .filter(|f| f.peer_id != o.verdict.from_peer && o.invoked.iter().any(|c| f.admits_contract(c.as_str())))
        .map(|f| f.peer_id.clone())
        .collect()
}

/// A single-threaded peer for tests and golden fixtures.
#[derive(Debug)]
pub struct SyncPeer {
    pub core: PeerCore,
    pub state: StateEngine,
    pub keys: KeyRegistry,
}

impl SyncPeer {
    pub fn new(core: PeerCore, state: StateEngine, keys: KeyRegistry) -> Self {
        SyncPeer { core, state, keys }
    }

    pub fn ingest(&mut self, block: DeliveredBlock) -> Result<Vec<Outbound>, PeerError> {
        self.core.ingest(block, &mut self.state)
    }

    /// Validates one ready transaction, if any.
    pub fn step(&mut self) -> Result<Option<(TxRef, Vec<Outbound>)>, PeerError> {
        let Some(task) = self.core.next_task() else { return Ok(None) };
        let out = self.core.run_task(&task, &self.keys, &mut self.state)?;
        Ok(Some((task.tx_ref, out)))
    }

    /// Validates until nothing is ready, then commits every block it can.
    pub fn drain(&mut self) -> Result<(Vec<CommitReport>, Vec<Outbound>), PeerError> {
        let mut out = Vec::new();
        while let Some((_, o)) = self.step()? {
            out.extend(o);
        }
        let mut reports = Vec::new();
        while let CommitPoll::Committed(rep) = self.core.poll_commit(&mut self.state)? {
            reports.push(rep);
        }
        Ok((reports, out))
    }

    pub fn on_verdict(&mut self, v: ContractVerdict) -> Result<Result<Vec<Outbound>, ContractVerdict>, PeerError> {
        self.core.on_verdict(v, &mut self.state)
    }
}
