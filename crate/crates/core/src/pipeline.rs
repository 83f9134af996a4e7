//! A threaded peer: validator workers and a committer running concurrently
//! against one [`PeerCore`] and one [`StateEngine`].
//!
//! Lock order is core, then state. Workers read state for a task without
//! the core lock and judge it without any lock.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::Sender;
use parking_lot::{Condvar, Mutex, RwLock};
use thiserror::Error;
use tracing::{debug, warn};

use crate::dist::ContractVerdict;
use crate::metrics::{BlockSample, PeerMetrics};
use crate::model::{KeyRegistry, TxRef, TxValidity};
use crate::peer::{CommitPoll, CommitReport, Outbound, PeerCore, PeerError};
use crate::sparse::DeliveredBlock;
use crate::state::StateEngine;
use crate::validate::{judge, observe};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub worker_count: usize,
    pub block_queue_capacity: usize,
    /// Simulated cost of verifying one endorsement signature.
    pub endorsement_verify_cost: Duration,
    /// Simulated persistence cost per committed transaction the peer stores.
    pub commit_cost_per_tx: Duration,
    /// Accept the next block only after the previous one committed, so
    /// validation never overlaps a commit.
    pub block_at_a_time: bool,
    /// Do not start a committer thread; blocks are committed through
    /// [`Pipeline::commit_next`].
    pub manual_commit: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            worker_count: 4,
            block_queue_capacity: 8,
            endorsement_verify_cost: Duration::ZERO,
            commit_cost_per_tx: Duration::ZERO,
            block_at_a_time: false,
            manual_commit: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("pipeline shut down")]
    PipelineShutdown,
    #[error("invalid pipeline config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Peer(#[from] PeerError),
}

#[derive(Debug, Default)]
struct Timing {
    validation: BTreeMap<u64, (Instant, Instant)>,
    metrics: PeerMetrics,
}

struct Shared {
    core: Mutex<PeerCore>,
    state: RwLock<StateEngine>,
    keys: KeyRegistry,
    config: PipelineConfig,
    /// Signalled when the graph may have ready work.
    work: Condvar,
    /// Signalled when results, verdicts or blocks change what can commit.
    progress: Condvar,
    /// Signalled when a block leaves the queue.
    space: Condvar,
    shutdown: AtomicBool,
    /// Blocks submitted but not yet fully committed.
    uncommitted: AtomicUsize,
    failure: Mutex<Option<PeerError>>,
    timing: Mutex<Timing>,
    start: Instant,
    outbound: Option<Sender<Outbound>>,
    commits: Mutex<Vec<CommitReport>>,
}

impl Shared {
    fn fail(&self, e: PeerError) {
        warn!(error = %e, "pipeline stopping");
        self.failure.lock().get_or_insert(e);
        self.stop();
    }

    fn stop(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _g = self.core.lock();
        self.work.notify_all();
        self.progress.notify_all();
        self.space.notify_all();
    }

    fn stopped(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }

    fn send(&self, out: Vec<Outbound>) {
        if let Some(tx) = &self.outbound {
            for o in out {
                let _ = tx.send(o);
            }
        }
    }

    fn mark_validation(&self, block: u64, from: Instant, to: Instant) {
        let mut t = self.timing.lock();
        let e = t.validation.entry(block).or_insert((from, to));
        e.0 = e.0.min(from);
        e.1 = e.1.max(to);
    }
}

pub struct Pipeline {
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl Pipeline {
    /// Starts `config.worker_count` workers and, unless manual, a committer.
    pub fn start(
        core: PeerCore,
        state: StateEngine,
        keys: KeyRegistry,
        config: PipelineConfig,
        outbound: Option<Sender<Outbound>>,
    ) -> Result<Self, PipelineError> {
        if config.worker_count == 0 {
            return Err(PipelineError::Config("worker_count must be at least 1"));
        }
        if config.block_queue_capacity == 0 {
            return Err(PipelineError::Config("block_queue_capacity must be at least 1"));
        }
        let shared = Arc::new(Shared {
            core: Mutex::new(core),
            state: RwLock::new(state),
            keys,
            config: config.clone(),
            work: Condvar::new(),
            progress: Condvar::new(),
            space: Condvar::new(),
            shutdown: AtomicBool::new(false),
            uncommitted: AtomicUsize::new(0),
            failure: Mutex::new(None),
            timing: Mutex::new(Timing::default()),
            start: Instant::now(),
            outbound,
            commits: Mutex::new(Vec::new()),
        });
        let mut threads = Vec::new();
        for i in 0..config.worker_count {
            let s = shared.clone();
            threads.push(
                std::thread::Builder::new()
                    .name(format!("validator-{i}"))
                    .spawn(move || worker_loop(&s))
                    .expect("spawn validator"),
            );
        }
        if !config.manual_commit {
            let s = shared.clone();
            threads.push(
                std::thread::Builder::new()
                    .name("committer".into())
                    .spawn(move || committer_loop(&s))
                    .expect("spawn committer"),
            );
        }
        Ok(Pipeline { shared, threads })
    }

    /// Queues a block, blocking while the queue is full.
    pub fn submit(&self, block: DeliveredBlock) -> Result<(), PipelineError> {
        let s = &self.shared;
        let mut core = s.core.lock();
        loop {
            if s.stopped() {
                return Err(self.failure_or_shutdown());
            }
            let room = if s.config.block_at_a_time {
                s.uncommitted.load(Ordering::SeqCst) == 0
            } else {
                core.has_room()
            };
            if room {
                break;
            }
            s.space.wait(&mut core);
        }
        let out = {
            let mut st = s.state.write();
            core.ingest(block, &mut st)?
        };
        s.uncommitted.fetch_add(1, Ordering::SeqCst);
        s.work.notify_all();
        s.progress.notify_all();
        drop(core);
        s.send(out);
        Ok(())
    }

    /// Hands a verdict from another peer to this one, waiting for buffer
    /// space if the verdict's block has not arrived yet.
    pub fn deliver_verdict(&self, v: ContractVerdict) -> Result<(), PipelineError> {
        let s = &self.shared;
        let mut core = s.core.lock();
        let mut v = v;
        loop {
            if s.stopped() {
                return Err(self.failure_or_shutdown());
            }
            let r = {
                let mut st = s.state.write();
                core.on_verdict(v, &mut st)?
            };
            match r {
                Ok(out) => {
                    s.work.notify_all();
                    s.progress.notify_all();
                    drop(core);
                    s.send(out);
                    return Ok(());
                }
                Err(back) => {
                    v = back;
                    s.progress.wait_for(&mut core, Duration::from_millis(5));
                }
            }
        }
    }

    /// Blocks until a result for `r` is available, then removes and
    /// returns it. Only meaningful with a manual committer.
    pub fn pop_validation_result(&self, r: TxRef) -> Result<TxValidity, PipelineError> {
        let s = &self.shared;
        let mut core = s.core.lock();
        loop {
            if let Some(v) = core.take_result(r) {
                return Ok(v);
            }
            if s.stopped() {
                return Err(self.failure_or_shutdown());
            }
            s.progress.wait(&mut core);
        }
    }

    /// Commits the front block, blocking until it can commit.
    pub fn commit_next(&self) -> Result<CommitReport, PipelineError> {
        commit_one(&self.shared).ok_or_else(|| self.failure_or_shutdown())
    }

    /// Waits until every submitted block is committed and nothing remains
    /// in the graph, or `timeout` passes. Returns whether it drained.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let s = &self.shared;
        let deadline = Instant::now() + timeout;
        let mut core = s.core.lock();
        loop {
            if core.is_quiescent() {
                return true;
            }
            if s.stopped() || Instant::now() >= deadline {
                return false;
            }
            s.progress.wait_until(&mut core, deadline);
        }
    }

    /// Signals every thread and blocked caller to stop.
    pub fn stop(&self) {
        self.shared.stop();
    }

    pub fn with_state<R>(&self, f: impl FnOnce(&StateEngine) -> R) -> R {
        f(&self.shared.state.read())
    }

    pub fn with_core<R>(&self, f: impl FnOnce(&PeerCore) -> R) -> R {
        f(&self.shared.core.lock())
    }

    pub fn commits(&self) -> Vec<CommitReport> {
        self.shared.commits.lock().clone()
    }

    fn failure_or_shutdown(&self) -> PipelineError {
        match self.shared.failure.lock().clone() {
            Some(e) => PipelineError::Peer(e),
            None => PipelineError::PipelineShutdown,
        }
    }

    /// Stops all threads and returns the peer's parts.
    pub fn finish(mut self) -> Result<PipelineOutput, PipelineError> {
        self.shared.stop();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let shared = self.shared.clone();
        drop(self);
        let shared = Arc::try_unwrap(shared).map_err(|_| PipelineError::PipelineShutdown)?;
        if let Some(e) = shared.failure.into_inner() {
            return Err(PipelineError::Peer(e));
        }
        let mut metrics = shared.timing.into_inner().metrics;
        let core = shared.core.into_inner();
        let c = core.counters();
        metrics.validated_txs = c.validated;
        metrics.signatures_checked = c.signatures;
        Ok(PipelineOutput {
            core,
            state: shared.state.into_inner(),
            metrics,
            commits: shared.commits.into_inner(),
        })
    }
}

impl Drop for Pipeline {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.shared.stop();
            for t in self.threads.drain(..) {
                let _ = t.join();
            }
        }
    }
}

pub struct PipelineOutput {
    pub core: PeerCore,
    pub state: StateEngine,
    pub metrics: PeerMetrics,
    pub commits: Vec<CommitReport>,
}

fn worker_loop(s: &Shared) {
    loop {
        let task = {
            let mut core = s.core.lock();
            loop {
                if s.stopped() {
                    return;
                }
                if let Some(t) = core.next_task() {
                    break t;
                }
                s.work.wait(&mut core);
            }
        };
        let began = Instant::now();
        let obs = {
            let st = s.state.read();
            observe(&task.tx, st.scope(), &st)
        };
        let j = judge(&task.tx, &obs, &s.keys);
        let cost = s.config.endorsement_verify_cost * j.signatures_checked as u32;
        if !cost.is_zero() {
            std::thread::sleep(cost);
        }
        let out = {
            let mut core = s.core.lock();
            let r = {
                let mut st = s.state.write();
                core.complete(&task, j, &mut st)
            };
            s.mark_validation(task.tx_ref.block, began, Instant::now());
            s.work.notify_all();
            s.progress.notify_all();
            r
        };
        match out {
            Ok(out) => s.send(out),
            Err(e) => {
                s.fail(e);
                return;
            }
        }
    }
}

fn committer_loop(s: &Shared) {
    while commit_one(s).is_some() {}
}

/// Commits one block; `None` once the pipeline stops.
fn commit_one(s: &Shared) -> Option<CommitReport> {
    let mut core = s.core.lock();
    let mut stall_from: Option<Instant> = None;
    let (report, started, queue_len) = loop {
        if s.stopped() {
            return None;
        }
        let started = Instant::now();
        let polled = {
            let mut st = s.state.write();
            core.poll_commit(&mut st)
        };
        match polled {
            Ok(CommitPoll::Committed(rep)) => {
                if let Some(from) = stall_from {
                    s.timing.lock().metrics.remote_stall += started - from;
                }
                break (rep, started, core.queue_len());
            }
            Ok(CommitPoll::Waiting { on_remote, .. }) => {
                if on_remote {
                    stall_from.get_or_insert(started);
                } else if let Some(from) = stall_from.take() {
                    s.timing.lock().metrics.remote_stall += started - from;
                }
                s.progress.wait(&mut core);
            }
            Ok(CommitPoll::Idle) => {
                s.progress.wait(&mut core);
            }
            Err(e) => {
                drop(core);
                s.fail(e);
                return None;
            }
        }
    };
    s.space.notify_all();
    s.work.notify_all();
    s.progress.notify_all();
    drop(core);
    let stored = report.flags.iter().filter(|f| **f != TxValidity::NotValidated).count();
    let cost = s.config.commit_cost_per_tx * stored as u32;
    if !cost.is_zero() {
        std::thread::sleep(cost);
    }
    let ended = Instant::now();
    debug!(block = report.number, deferred = report.deferred.len(), "committed");
    {
        let mut t = s.timing.lock();
        let v = t.validation.remove(&report.number);
        let at = |i: Instant| i.saturating_duration_since(s.start);
        t.metrics.record(BlockSample {
            number: report.number,
            txs: report.flags.iter().filter(|f| **f != TxValidity::NotValidated).count() as u64,
            valid: report.flags.iter().filter(|f| f.is_valid()).count() as u64,
            deferred: report.deferred.len() as u64,
            validation_start: v.map(|v| at(v.0)),
            validation_end: v.map(|v| at(v.1)),
            commit_start: at(started),
            commit_end: at(ended),
            queue_len,
        });
    }
    s.commits.lock().push(report.clone());
    let _g = s.core.lock();
    s.uncommitted.fetch_sub(1, Ordering::SeqCst);
    s.space.notify_all();
    s.progress.notify_all();
    Some(report)
}
