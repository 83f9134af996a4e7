//! Wall-clock driver: one threaded [`Pipeline`] per peer, a submitter
//! thread per peer and a router forwarding verdicts between them.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::RecvTimeoutError;
use tracing::debug;

use super::des::{org_bitmaps, org_state};
use crate::dist::CommitMode;
use crate::model::{Block, KeyRegistry, TxValidity};
use crate::peer::{recipients, Outbound, PeerCore};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError, PipelineOutput};
use crate::sparse::{make_sparse, DeliveredBlock, Filter};
use crate::state::{StateDb, StateEngine};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WallParams {
    pub pipeline: PipelineConfig,
    pub mode: CommitMode,
    pub verdict_capacity: usize,
    pub sparse_blocks: bool,
    /// Give up waiting for a peer to drain after this long.
    pub drain_timeout: Duration,
}

impl Default for WallParams {
    fn default() -> Self {
        WallParams {
            pipeline: PipelineConfig::default(),
            mode: CommitMode::Deferred,
            verdict_capacity: 4096,
            sparse_blocks: true,
            drain_timeout: Duration::from_secs(120),
        }
    }
}

pub struct WallPeer {
    pub filter: Filter,
    pub output: PipelineOutput,
    pub bytes_received: u64,
}

pub struct WallOutcome {
    pub peers: Vec<WallPeer>,
    pub org_bitmaps: Vec<Vec<TxValidity>>,
    pub disagreements: usize,
    /// From the first submission until every peer drained.
    pub elapsed: Duration,
}

impl WallOutcome {
    pub fn org_state(&self) -> StateDb {
        org_state(self.peers.iter().map(|p| &p.output.state))
    }

    /// Transactions ordered per second of elapsed time.
    pub fn org_tps(&self) -> f64 {
        let txs = self.org_bitmaps.iter().map(|b| b.len()).sum::<usize>() as f64;
        txs / self.elapsed.as_secs_f64().max(1e-9)
    }
}

/// Runs `blocks` through one organization of threaded peers.
pub fn run_org_wall(
    genesis: &Block,
    blocks: &[Block],
    keys: &KeyRegistry,
    filters: &[Filter],
    params: &WallParams,
) -> Result<WallOutcome, PipelineError> {
    let (tx, rx) = crossbeam_channel::unbounded::<Outbound>();
    let mut pipelines = Vec::with_capacity(filters.len());
    let mut feeds = Vec::with_capacity(filters.len());
    for f in filters {
        let mut state = StateEngine::in_memory(f.clone());
        state.commit_genesis(genesis.clone()).map_err(crate::peer::PeerError::from)?;
        let core = PeerCore::new(f.clone(), params.mode, params.pipeline.block_queue_capacity, params.verdict_capacity, &state);
        pipelines.push(Pipeline::start(core, state, keys.clone(), params.pipeline.clone(), Some(tx.clone()))?);
        let feed: Vec<DeliveredBlock> = blocks
            .iter()
            .map(|b| {
                if params.sparse_blocks && !f.is_full() {
                    DeliveredBlock::Sparse(make_sparse(b, f))
                } else {
                    DeliveredBlock::Full(b.clone())
                }
            })
            .collect();
        feeds.push(feed);
    }
    drop(tx);
    let bytes: Vec<u64> = feeds.iter().map(|f| f.iter().map(|b| b.to_bytes().len() as u64).sum()).collect();

    let routing_done = AtomicBool::new(false);
    let started = Instant::now();
    let result: Result<(), PipelineError> = std::thread::scope(|s| {
        let router = s.spawn(|| -> Result<(), PipelineError> {
            loop {
                match rx.recv_timeout(Duration::from_millis(2)) {
                    Ok(o) => {
                        for to in recipients(&o, filters.iter()) {
                            let i = filters.iter().position(|f| f.peer_id == to).expect("known recipient");
                            pipelines[i].deliver_verdict(o.verdict.clone())?;
                        }
                    }
                    Err(RecvTimeoutError::Timeout) if routing_done.load(Ordering::SeqCst) => return Ok(()),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return Ok(()),
                }
            }
        });
        let submitters: Vec<_> = feeds
            .into_iter()
            .zip(&pipelines)
            .map(|(feed, p)| {
                s.spawn(move || -> Result<(), PipelineError> {
                    for b in feed {
                        p.submit(b)?;
                    }
                    Ok(())
                })
            })
            .collect();
        let mut first_err = None;
        for h in submitters {
            if let Err(e) = h.join().expect("submitter panicked") {
                first_err.get_or_insert(e);
            }
        }
        if first_err.is_none() {
            for (p, f) in pipelines.iter().zip(filters) {
                if !p.wait_idle(params.drain_timeout) {
                    debug!(peer = %f.peer_id, "peer did not drain");
                    first_err.get_or_insert(PipelineError::PipelineShutdown);
                    break;
                }
            }
        }
        routing_done.store(true, Ordering::SeqCst);
        if first_err.is_some() {
            for p in &pipelines {
                p.stop();
            }
        }
        let routed = router.join().expect("router panicked");
        match first_err {
            Some(e) => Err(e),
            None => routed,
        }
    });
    let elapsed = started.elapsed();
    result?;

    let mut peers = Vec::with_capacity(pipelines.len());
    for ((p, f), b) in pipelines.into_iter().zip(filters).zip(bytes) {
        peers.push(WallPeer {
            filter: f.clone(),
            output: p.finish()?,
            bytes_received: b,
        });
    }
    let (org_bitmaps, disagreements) = org_bitmaps(peers.iter().map(|p| &p.output.state), blocks.len() as u64);
    Ok(WallOutcome {
        peers,
        org_bitmaps,
        disagreements,
        elapsed,
    })
}
