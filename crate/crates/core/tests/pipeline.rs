use std::time::Duration;

use eov_core::dist::CommitMode;
use eov_core::fixtures::{pipeline_fixture, render_db};
use eov_core::model::{TxRef, TxValidity};
use eov_core::peer::PeerCore;
use eov_core::pipeline::{Pipeline, PipelineConfig, PipelineError};
use eov_core::sparse::{DeliveredBlock, Filter, PeerId};
use eov_core::state::StateEngine;

fn start(config: PipelineConfig) -> (Pipeline, Vec<DeliveredBlock>) {
    let fx = pipeline_fixture();
    let filter = Filter::full(PeerId::new("P"));
    let mut state = StateEngine::in_memory(filter.clone());
    state.commit_genesis(fx.genesis.clone()).unwrap();
    let core = PeerCore::new(filter, CommitMode::Deferred, config.block_queue_capacity, 64, &state);
    let p = Pipeline::start(core, state, fx.keys.clone(), config, None).unwrap();
    (p, fx.blocks.into_iter().map(DeliveredBlock::Full).collect())
}

#[test]
fn threaded_run_matches_fixture_bitmap() {
    for workers in [1, 2, 3, 8] {
        let (p, blocks) = start(PipelineConfig {
            worker_count: workers,
            ..Default::default()
        });
        for b in blocks {
            p.submit(b).unwrap();
        }
        assert!(p.wait_idle(Duration::from_secs(10)));
        let out = p.finish().unwrap();
        let flags: Vec<TxValidity> = out.commits.iter().flat_map(|c| c.flags.clone()).collect();
        use TxValidity::*;
        assert_eq!(flags, [Valid, InvalidSerializability, Valid, Valid, InvalidSerializability, Valid]);
        assert_eq!(out.metrics.committed_txs, 6);
        assert_eq!(out.metrics.valid_txs, 4);
        let db = render_db(&out.state);
        assert_eq!(db.iter().find(|(k, _)| k == "k4").unwrap().1, "v2");
    }
}

#[test]
fn manual_pop_blocks_until_result() {
    let (p, blocks) = start(PipelineConfig {
        worker_count: 2,
        manual_commit: true,
        endorsement_verify_cost: Duration::from_millis(5),
        ..Default::default()
    });
    for b in blocks {
        p.submit(b).unwrap();
    }
    assert_eq!(p.pop_validation_result(TxRef::new(2, 1)).unwrap(), TxValidity::Valid);
    assert_eq!(p.pop_validation_result(TxRef::new(1, 1)).unwrap(), TxValidity::InvalidSerializability);
    p.finish().unwrap();
}

#[test]
fn pop_after_shutdown_reports_it() {
    let (p, _) = start(PipelineConfig {
        worker_count: 1,
        manual_commit: true,
        ..Default::default()
    });
    let out = std::thread::scope(|s| {
        let h = s.spawn(|| p.pop_validation_result(TxRef::new(9, 0)));
        std::thread::sleep(Duration::from_millis(20));
        p.stop();
        h.join().unwrap()
    });
    assert_eq!(out, Err(PipelineError::PipelineShutdown));
}

#[test]
fn manual_commit_in_block_order() {
    let (p, blocks) = start(PipelineConfig {
        worker_count: 3,
        manual_commit: true,
        ..Default::default()
    });
    for b in blocks {
        p.submit(b).unwrap();
    }
    assert_eq!(p.commit_next().unwrap().number, 1);
    assert_eq!(p.commit_next().unwrap().number, 2);
    p.finish().unwrap();
}

#[test]
fn zero_workers_rejected() {
    let fx = pipeline_fixture();
    let filter = Filter::full(PeerId::new("P"));
    let mut state = StateEngine::in_memory(filter.clone());
    state.commit_genesis(fx.genesis).unwrap();
    let core = PeerCore::new(filter, CommitMode::Deferred, 4, 64, &state);
    let cfg = PipelineConfig {
        worker_count: 0,
        ..Default::default()
    };
    assert!(matches!(Pipeline::start(core, state, fx.keys, cfg, None), Err(PipelineError::Config(_))));
}
