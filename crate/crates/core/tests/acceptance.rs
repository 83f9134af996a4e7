//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config as ProptestConfig, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eov_core::digest::Digest;
use eov_core::dist::CommitMode;
use eov_core::fixtures::{pairs, replay_distributed, replay_pipeline, snapshot_rows};
use eov_core::metrics::theoretical_max_tps;
use eov_core::model::{seal_block, Block, ContractId, KeyRegistry, OrgId, RwSet, StateKey, TxValidity, Version};
use eov_core::peer::{PeerCore, SyncPeer};
use eov_core::pipeline::{Pipeline, PipelineConfig};
use eov_core::sim::{
    generate_stream, run_org, run_org_wall, run_scale_up, BlockStream, DesParams, ScenarioConfig, WallParams, WorkloadKind,
};
use eov_core::snapshot::extract_snapshot;
use eov_core::sparse::{make_sparse, verify_sparse, DeliveredBlock, Filter, PeerId};
use eov_core::state::StateEngine;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    let d = detail.into();
    if ok {
        Ok(d)
    } else {
        Err(d)
    }
}

fn contracts(n: usize) -> Vec<ContractId> {
    (0..n).map(|i| ContractId::new(format!("S{i}"))).collect()
}

fn mixed(seed: u64, contract_count: usize, cross: f64) -> ScenarioConfig {
    ScenarioConfig {
        workload: WorkloadKind::Mixed,
        contracts: contracts(contract_count),
        org_count: 3,
        account_count: 30,
        value_size_bytes: 32,
        zipf_s: 1.0,
        block_size: 25,
        block_count: 8,
        seed,
        range_rate: 0.1,
        delete_rate: 0.08,
        policy_update_rate: 0.04,
        duplicate_rate: 0.04,
        bad_endorsement_rate: 0.04,
        cross_contract_mix: cross,
        cross_contract_fanout: 2,
        endorsement_lag: seed % 3,
        ..Default::default()
    }
}

fn c1_pipeline_trace() -> Outcome {
    let tr = replay_pipeline(3).map_err(|e| e.to_string())?;
    let edges: Vec<String> = tr.edges.iter().map(|(f, t, k)| format!("{f}->{t}{k}")).collect();
    let want_edges = ["T2->T1{rw,wr}", "T3->T1{wr}", "T3->T2{ww}", "T5->T4{pr}", "T6->T5{wr}"];
    if edges != want_edges {
        return Err(format!("edges {edges:?}"));
    }
    if tr.rounds != [vec!["T1", "T4"], vec!["T3", "T6"]] {
        return Err(format!("rounds {:?}", tr.rounds));
    }
    let bits: Vec<String> = tr.bitmap.iter().map(|(n, v)| format!("{n}:{}", v.label())).collect();
    if bits != ["T1:V", "T2:I-ser", "T3:V", "T4:V", "T5:I-ser", "T6:V"] {
        return Err(format!("bitmap {bits:?}"));
    }
    let final_db = pairs(&[("k1", "v2"), ("k4", "v2"), ("k5", "v1"), ("k6", "v2")]);
    let ok = tr.rows.len() == 5
        && tr.rows[1].dirty == pairs(&[("k1", "v2"), ("k5", "v1")])
        && tr.rows[2].dirty == pairs(&[("k1", "v2"), ("k4", "v2"), ("k5", "v1"), ("k6", "v2")])
        && tr.rows[3].dirty == pairs(&[("k4", "v2")])
        && tr.rows[4].dirty.is_empty()
        && tr.rows[4].db == final_db;
    check(ok, "edges, rounds, bitmap and state rows match")
}

fn c2_distributed_trace() -> Outcome {
    let tr = replay_distributed().map_err(|e| e.to_string())?;
    let org: Vec<(String, bool)> = tr.org.iter().map(|(n, v)| (n.clone(), v.is_valid())).collect();
    let want_org: Vec<(String, bool)> = [("T1", true), ("T2", true), ("T3", false)]
        .iter()
        .map(|(n, v)| (n.to_string(), *v))
        .collect();
    if org != want_org {
        return Err(format!("org outcome {org:?}"));
    }
    let lines: Vec<String> = tr
        .messages
        .iter()
        .map(|m| format!("{}->{} {} {} {}", m.from, m.to.join(","), m.tx, m.contract, if m.valid { "valid" } else { "invalid" }))
        .collect();
    let want = ["P1->P2 T2 S1 valid", "P2->P1 T2 S2 valid", "P3->P1,P2 T3 S3 valid", "P1->P2,P3 T3 S1 invalid"];
    if lines != want {
        return Err(format!("messages {lines:?}"));
    }
    let edges_ok = tr.edges["P1"] == [("T3".to_string(), "T2".to_string(), "{rw,ww}".to_string())]
        && tr.edges["P2"] == [("T3".to_string(), "T2".to_string(), "{wr}".to_string())]
        && tr.edges["P3"].is_empty();
    check(edges_ok, "org outcome, verdict messages and per-peer edges match")
}

fn run_pipeline(s: &BlockStream, workers: usize) -> Result<(Vec<Vec<TxValidity>>, Digest), String> {
    let filter = Filter::full(PeerId::new("P"));
    let mut state = StateEngine::in_memory(filter.clone());
    state.commit_genesis(s.genesis.clone()).map_err(|e| e.to_string())?;
    let core = PeerCore::new(filter, CommitMode::Deferred, 4, 64, &state);
    let cfg = PipelineConfig {
        worker_count: workers,
        ..Default::default()
    };
    let p = Pipeline::start(core, state, s.keys.clone(), cfg, None).map_err(|e| e.to_string())?;
    for b in &s.blocks {
        p.submit(DeliveredBlock::Full(b.clone())).map_err(|e| e.to_string())?;
    }
    if !p.wait_idle(Duration::from_secs(60)) {
        return Err("pipeline did not drain".into());
    }
    let out = p.finish().map_err(|e| e.to_string())?;
    let flags = (1..=s.blocks.len() as u64)
        .map(|n| out.state.blocks().get(n).map(|b| b.flags.clone()).unwrap_or_default())
        .collect();
    Ok((flags, out.state.db().digest()))
}

fn c3_pipeline_equivalence() -> Outcome {
    let mut runs = 0;
    for seed in 0..200u64 {
        let s = generate_stream(&mixed(seed, 3, 0.3));
        let want = s.final_state.digest();
        for workers in [1, 2, 4, 8] {
            let (flags, digest) = run_pipeline(&s, workers)?;
            if flags != s.bitmaps {
                return Err(format!("seed {seed} workers {workers}: bitmap differs from serial oracle"));
            }
            if digest != want {
                return Err(format!("seed {seed} workers {workers}: state digest differs from serial oracle"));
            }
            runs += 1;
        }
    }
    check(true, format!("{runs} runs of 200 streams x workers {{1,2,4,8}} match the serial oracle"))
}

fn c4_distributed_equivalence() -> Outcome {
    let mut runs = 0;
    for mix in [0.1, 0.5, 1.0] {
        for seed in 0..50u64 {
            let cfg = ScenarioConfig {
                peers_per_org: 4,
                filters_per_peer: 1,
                ..mixed(seed, 4, mix)
            };
            let s = generate_stream(&cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC4);
            let speeds: Vec<f64> = (0..4).map(|_| rng.random_range(0.25..4.0)).collect();
            let mut digests = Vec::new();
            for mode in [CommitMode::Deferred, CommitMode::Strawman] {
                let params = DesParams {
                    mode,
                    worker_count: 3,
                    peer_speeds: speeds.clone(),
                    latency_us: rng.random_range(100..2000),
                    ..Default::default()
                };
                let out = run_org(&s.genesis, &s.blocks, &s.keys, &cfg.filters(0), &params).map_err(|e| e.to_string())?;
                if out.disagreements != 0 {
                    return Err(format!("mix {mix} seed {seed} {mode:?}: {} peer disagreements", out.disagreements));
                }
                if out.org_bitmaps != s.bitmaps {
                    return Err(format!("mix {mix} seed {seed} {mode:?}: org bitmap differs from oracle"));
                }
                digests.push(out.org_state().digest());
                runs += 1;
            }
            if digests.iter().any(|d| *d != s.final_state.digest()) {
                return Err(format!("mix {mix} seed {seed}: org state differs from oracle"));
            }
        }
    }
    check(true, format!("{runs} runs: deferred and strawman equal the oracle at mixes 0.1/0.5/1.0"))
}

fn random_block(rng: &mut ChaCha8Rng, keys: &KeyRegistry, orgs: &[OrgId], pool: &[ContractId]) -> Block {
    let n = rng.random_range(1..=12);
    let txs = (0..n)
        .map(|_| {
            let mut rw = RwSet::new();
            let mut cs = pool.to_vec();
            cs.shuffle(rng);
            for c in cs.iter().take(rng.random_range(1..=2)) {
                let count = rng.random_range(1..=3);
                for i in rand::seq::index::sample(rng, 50, count) {
                    let k = StateKey::new(c.clone(), format!("k{i}").into_bytes());
                    let v: [u8; 8] = rng.random();
                    rw = rw.write(k.clone(), v.to_vec());
                    if rng.random_bool(0.5) {
                        rw = rw.read(k, Some(Version::new(rng.random_range(0..9), rng.random_range(0..9))));
                    }
                }
            }
            let proposal = rw.into_proposal().expect("non-empty rwset");
            Arc::new(proposal.endorse(keys, orgs.iter().take(rng.random_range(1..=orgs.len()))))
        })
        .collect();
    let prev = Digest(rng.random());
    seal_block(rng.random_range(1..1000), prev, txs).expect("non-empty block")
}

fn c5_sparse_integrity() -> Outcome {
    let orgs: Vec<OrgId> = (1..=3).map(|i| OrgId::new(format!("Org{i}"))).collect();
    let keys = KeyRegistry::derive(5, &orgs);
    let pool = contracts(6);
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 10_000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let mut tamperings = 0u64;
    let counted = std::cell::Cell::new(0u64);
    let result = runner.run(&proptest::num::u64::ANY, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = random_block(&mut rng, &keys, &orgs, &pool);
        let mut filters = vec![Filter::full(PeerId::new("full"))];
        for i in 0..3 {
            let mut cs = pool.clone();
            cs.shuffle(&mut rng);
            let take = rng.random_range(1..=pool.len());
            filters.push(Filter::sparse(PeerId::new(format!("p{i}")), cs.into_iter().take(take)).expect("non-empty"));
        }
        let sparse: Vec<_> = filters.iter().map(|f| make_sparse(&block, f)).collect();
        for sb in &sparse {
            if sb.merkle_root != block.merkle_root || sb.block_hash != block.block_hash {
                return Err(TestCaseError::fail("header differs across filters"));
            }
            if verify_sparse(sb, &block.prev_hash).is_err() {
                return Err(TestCaseError::fail("honest sparse block rejected"));
            }
        }
        let sb = sparse[rng.random_range(0..sparse.len())].clone();
        let flip = |rng: &mut ChaCha8Rng, bytes: &mut [u8]| {
            let at = rng.random_range(0..bytes.len());
            bytes[at] ^= rng.random_range(1..=255u8);
        };
        let mut local = 0;

        // an included transaction's bytes
        if !sb.included.is_empty() {
            let j = rng.random_range(0..sb.included.len());
            let mut bytes = sb.included[j].1.to_bytes();
            flip(&mut rng, &mut bytes);
            if let Ok(tx) = eov_core::model::Transaction::from_bytes(&bytes) {
                let mut t = sb.clone();
                t.included[j].1 = Arc::new(tx);
                if verify_sparse(&t, &block.prev_hash).is_ok() {
                    return Err(TestCaseError::fail("tampered transaction accepted"));
                }
            }
            local += 1;
        }
        // a leaf
        let mut t = sb.clone();
        let leaf = rng.random_range(0..t.merkle_leaves.len());
        flip(&mut rng, &mut t.merkle_leaves[leaf].0);
        if verify_sparse(&t, &block.prev_hash).is_ok() {
            return Err(TestCaseError::fail("tampered leaf accepted"));
        }
        // the previous hash
        let mut t = sb.clone();
        flip(&mut rng, &mut t.prev_hash.0);
        if verify_sparse(&t, &block.prev_hash).is_ok() {
            return Err(TestCaseError::fail("tampered previous hash accepted"));
        }
        counted.set(counted.get() + local + 2);
        Ok(())
    });
    tamperings += counted.get();
    match result {
        Ok(()) => Ok(format!("10000 cases, {tamperings} single-byte tamperings all rejected, root identical across filters")),
        Err(e) => Err(e.to_string()),
    }
}

fn sync_full_peer(s: &BlockStream) -> Result<SyncPeer, String> {
    let filter = Filter::full(PeerId::new("donor"));
    let mut state = StateEngine::in_memory(filter.clone());
    state.commit_genesis(s.genesis.clone()).map_err(|e| e.to_string())?;
    let core = PeerCore::new(filter, CommitMode::Deferred, 4, 64, &state);
    let mut peer = SyncPeer::new(core, state, s.keys.clone());
    for b in &s.blocks {
        peer.ingest(DeliveredBlock::Full(b.clone())).map_err(|e| e.to_string())?;
        peer.drain().map_err(|e| e.to_string())?;
    }
    Ok(peer)
}

/// Applies the oracle's valid writes to `contract` for blocks `0..=b`.
fn replay_to(s: &BlockStream, contract: &ContractId, b: u64) -> BTreeMap<Vec<u8>, (Vec<u8>, Version)> {
    let mut out = BTreeMap::new();
    let genesis_flags = vec![TxValidity::Valid; s.genesis.txs.len()];
    let chain = std::iter::once((&s.genesis, &genesis_flags)).chain(s.blocks.iter().zip(&s.bitmaps));
    for (block, flags) in chain.take(b as usize + 1) {
        for (i, (tx, f)) in block.txs.iter().zip(flags).enumerate() {
            if !f.is_valid() {
                continue;
            }
            for w in tx.write_set.iter().filter(|w| &w.key.contract == contract) {
                if w.is_delete {
                    out.remove(&w.key.key);
                } else {
                    out.insert(w.key.key.clone(), (w.value.clone(), Version::new(block.number, i as u32)));
                }
            }
        }
    }
    out
}

fn c6_snapshot() -> Outcome {
    let want = pairs(&[("k1", "v1"), ("k2", "v1"), ("k3", "v1")]);
    let got = snapshot_rows(3).map_err(|e| e.to_string())?;
    if got != want {
        return Err(format!("fixture snapshot at block 3: {got:?}"));
    }
    let mut checks = 0;
    for run in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(run ^ 0xC6);
        let cfg = ScenarioConfig {
            block_count: rng.random_range(20..=500),
            block_size: 6,
            account_count: 15,
            delete_rate: 0.1,
            range_rate: 0.05,
            cross_contract_mix: 0.2,
            ..mixed(run, 3, 0.0)
        };
        let s = generate_stream(&cfg);
        let donor = sync_full_peer(&s)?;
        for _ in 0..20 {
            let c = &cfg.contracts[rng.random_range(0..cfg.contracts.len())];
            let b = rng.random_range(0..=cfg.block_count);
            let m = extract_snapshot(&donor.state, c, b).map_err(|e| e.to_string())?;
            let got: BTreeMap<_, _> = m.entries.into_iter().map(|e| (e.key, (e.value, e.version))).collect();
            if got != replay_to(&s, c, b) {
                return Err(format!("run {run} contract {c} block {b}: snapshot differs from replay"));
            }
            checks += 1;
        }
    }
    check(true, format!("fixture rows match; {checks} (contract, block) snapshots equal an independent replay"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn c7_pipelining() -> Outcome {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cfg = ScenarioConfig {
        workload: WorkloadKind::Smallbank,
        account_count: 10_000,
        block_size: 100,
        block_count: 30,
        seed: 7,
        ..Default::default()
    };
    let s = generate_stream(&cfg);
    let filters = cfg.filters(0);
    let mut tps = [Vec::new(), Vec::new()];
    let mut overlapped = true;
    for _ in 0..3 {
        for (i, serial) in [false, true].into_iter().enumerate() {
            let params = WallParams {
                pipeline: PipelineConfig {
                    worker_count: 4,
                    endorsement_verify_cost: Duration::from_micros(200),
                    commit_cost_per_tx: Duration::from_micros(50),
                    block_at_a_time: serial,
                    ..Default::default()
                },
                ..Default::default()
            };
            let out = run_org_wall(&s.genesis, &s.blocks, &s.keys, &filters, &params).map_err(|e| e.to_string())?;
            if out.org_bitmaps != s.bitmaps {
                return Err("wall-clock run differs from oracle".into());
            }
            if !serial {
                overlapped &= out.peers[0].output.metrics.validation_overlaps_commit();
            }
            tps[i].push(out.org_tps());
        }
    }
    let (p, b) = (median(tps[0].clone()), median(tps[1].clone()));
    let ratio = p / b;
    check(
        ratio >= 1.2 && overlapped,
        format!("pipelined {p:.0} tps vs block-at-a-time {b:.0} tps, ratio {ratio:.2}, overlap {overlapped}, cores {cores}"),
    )
}

fn c8_sparse_scaling() -> Outcome {
    let base = ScenarioConfig {
        workload: WorkloadKind::Smallbank,
        contracts: contracts(8),
        peers_per_org: 4,
        account_count: 2_000,
        block_size: 100,
        block_count: 30,
        seed: 8,
        ..Default::default()
    };
    let sparse_cfg = ScenarioConfig {
        filters_per_peer: 2,
        ..base.clone()
    };
    let full_cfg = ScenarioConfig {
        filters_per_peer: 0,
        ..base.clone()
    };
    let s = generate_stream(&base);
    let params = WallParams {
        pipeline: PipelineConfig {
            worker_count: 2,
            endorsement_verify_cost: Duration::from_micros(200),
            commit_cost_per_tx: Duration::from_micros(50),
            ..Default::default()
        },
        ..Default::default()
    };
    let sparse = run_org_wall(&s.genesis, &s.blocks, &s.keys, &sparse_cfg.filters(0), &params).map_err(|e| e.to_string())?;
    let full = run_org_wall(&s.genesis, &s.blocks, &s.keys, &full_cfg.filters(0), &params).map_err(|e| e.to_string())?;
    if sparse.org_bitmaps != s.bitmaps || full.org_bitmaps != s.bitmaps {
        return Err("org bitmap differs from oracle".into());
    }
    let full_work = full.peers.iter().map(|p| p.output.metrics.validated_txs).max().unwrap_or(0) as f64;
    let worst = sparse
        .peers
        .iter()
        .map(|p| p.output.metrics.validated_txs as f64 / full_work.max(1.0))
        .fold(0.0, f64::max);
    let speedup = sparse.org_tps() / full.org_tps();
    check(
        worst <= 0.30 && speedup >= 1.8,
        format!(
            "max per-peer work {:.1}% of a full peer, org tps {:.0} vs {:.0} ({speedup:.2}x)",
            worst * 100.0,
            sparse.org_tps(),
            full.org_tps()
        ),
    )
}

fn c9_scale_up() -> Outcome {
    let cfg = ScenarioConfig {
        workload: WorkloadKind::Ycsb,
        contracts: contracts(4),
        peers_per_org: 2,
        filters_per_peer: 2,
        account_count: 25,
        value_size_bytes: 1024,
        zipf_s: 0.8,
        block_size: 20,
        block_count: 120,
        seed: 9,
        ..Default::default()
    };
    let r = run_scale_up(&cfg, 80).map_err(|e| e.to_string())?;
    let store_ratio = r.donor_block_store_bytes as f64 / r.donor_state_bytes.max(1) as f64;
    let byte_ratio = r.byte_ratio();
    check(
        store_ratio >= 10.0 && byte_ratio >= 10.0 && r.snapshot_bitmaps_match && r.replay_bitmaps_match && r.states_match,
        format!(
            "block store {:.1}x state, snapshot {} B vs replay {} B ({byte_ratio:.1}x fewer), {} post-join blocks match, join {:?} vs replay {:?}",
            store_ratio,
            r.snapshot_bytes(),
            r.replay_bytes,
            r.blocks_compared,
            r.snapshot_join_time,
            r.replay_join_time
        ),
    )
}

fn c10_cross_contract() -> Outcome {
    let cfg = ScenarioConfig {
        workload: WorkloadKind::Smallbank,
        contracts: contracts(8),
        peers_per_org: 4,
        filters_per_peer: 2,
        account_count: 1_000,
        block_size: 100,
        block_count: 40,
        cross_contract_mix: 1.0,
        cross_contract_fanout: 2,
        // orderer outpaces the peers, so blocks queue for commit
        tx_rate: 100_000,
        seed: 10,
        ..Default::default()
    };
    let s = generate_stream(&cfg);
    let params = DesParams {
        peer_speeds: vec![1.0],
        ..DesParams::from_config(&cfg)
    };
    let out = run_org(&s.genesis, &s.blocks, &s.keys, &cfg.filters(0), &params).map_err(|e| e.to_string())?;
    if out.org_bitmaps != s.bitmaps {
        return Err("org bitmap differs from oracle".into());
    }
    let issued = s.tx_count();
    let deferred = out.deferred_distinct();
    let rate = deferred as f64 / issued as f64;
    let stall = out.stall_total();
    check(
        stall.is_zero() && rate < 0.15,
        format!("stall {stall:?}, {deferred} of {issued} issued deferred ({:.1}%)", rate * 100.0),
    )
}

fn c11_throughput_bound() -> Outcome {
    let v = theoretical_max_tps(100, Duration::from_millis(19), Duration::from_millis(36));
    check(v == 1818, format!("theoretical max {v} tps for 100-tx blocks at 19 ms + 36 ms"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("single-peer trace", c1_pipeline_trace),
        ("distributed trace", c2_distributed_trace),
        ("pipeline equals serial oracle", c3_pipeline_equivalence),
        ("distributed equals serial oracle", c4_distributed_equivalence),
        ("sparse block integrity", c5_sparse_integrity),
        ("snapshot equals replay", c6_snapshot),
        ("pipelining speedup", c7_pipelining),
        ("sparse peer scaling", c8_sparse_scaling),
        ("snapshot join", c9_scale_up),
        ("cross-contract deferral", c10_cross_contract),
        ("throughput bound", c11_throughput_bound),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.strip_prefix('C').and_then(|n| n.parse().ok()));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let started = Instant::now();
        let outcome = f();
        let ms = started.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(d) => println!("PASS C{} {name}: {d} [{ms:.0} ms]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL C{} {name}: {d} [{ms:.0} ms]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
