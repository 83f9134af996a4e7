//! Small hand-written scenarios with known outcomes, replayed by the
//! `golden` command and the acceptance suite.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::digest::Digest;
use crate::dist::CommitMode;
use crate::model::{
    seal_block, Block, ContractId, EndorsementPolicy, KeyRegistry, OrgId, RangeQueryInfo, ReadEntry, RwSet, StateKey,
    Transaction, TxRef, TxValidity, Version,
};
use crate::peer::{recipients, CommitPoll, Outbound, PeerCore, PeerError, SyncPeer, Task};
use crate::snapshot::{extract_snapshot, SnapshotError};
use crate::sparse::{DeliveredBlock, Filter, PeerId};
use crate::state::StateEngine;

const ORG: &str = "Org1";

fn org() -> OrgId {
    OrgId::new(ORG)
}

pub fn fixture_keys() -> KeyRegistry {
    KeyRegistry::derive(7, [&org()])
}

fn key(contract: &str, k: &str) -> StateKey {
    StateKey::new(contract, k.as_bytes().to_vec())
}

fn endorsed(rw: RwSet, keys: &KeyRegistry) -> Arc<Transaction> {
    Arc::new(rw.into_proposal().expect("fixture rw-set is well formed").endorse(keys, [&org()]))
}

fn policy_write(rw: RwSet, contract: &str) -> RwSet {
    let p = EndorsementPolicy::new(contract.into(), [org()], 1).expect("fixture policy");
    rw.write(StateKey::policy(&contract.into()), p.to_bytes())
}

/// Genesis block: one tx installing the policies, then one tx per seeded state.
fn genesis(contracts: &[&str], states: &[(&str, &str)], keys: &KeyRegistry) -> (Block, BTreeMap<String, Version>) {
    let mut rw = RwSet::new();
    for c in contracts {
        rw = policy_write(rw, c);
    }
    let mut txs = vec![endorsed(rw, keys)];
    let mut versions = BTreeMap::new();
    for (i, (c, k)) in states.iter().enumerate() {
        txs.push(endorsed(RwSet::new().write(key(c, k), "v1"), keys));
        versions.insert(k.to_string(), Version::new(0, i as u32 + 1));
    }
    (seal_block(0, Digest::ZERO, txs).expect("genesis"), versions)
}

/// Renders the non-policy states as `(key, value)` pairs in key order.
pub fn render_db(state: &StateEngine) -> Vec<(String, String)> {
    state
        .db()
        .iter()
        .filter(|(k, _)| !k.is_policy())
        .map(|(k, v)| (String::from_utf8_lossy(&k.key).into_owned(), String::from_utf8_lossy(&v.value).into_owned()))
        .collect()
}

/// Renders the latest dirty entry per key as `(key, value)` in key order.
pub fn render_dirty(state: &StateEngine) -> Vec<(String, String)> {
    state
        .dirty()
        .keys()
        .filter(|k| !k.is_policy())
        .filter_map(|k| {
            let e = state.dirty().latest(k)?;
            let v = if e.is_delete { "-".to_string() } else { String::from_utf8_lossy(&e.value).into_owned() };
            Some((String::from_utf8_lossy(&k.key).into_owned(), v))
        })
        .collect()
}

pub fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
    items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// Two blocks on one contract exercising every edge kind a single-contract
/// workload can produce: T1..T4 in block 1, T5..T6 in block 2.
pub struct PipelineFixture {
    pub genesis: Block,
    pub blocks: Vec<Block>,
    pub keys: KeyRegistry,
    pub names: BTreeMap<TxRef, String>,
}

pub fn pipeline_fixture() -> PipelineFixture {
    let keys = fixture_keys();
    let (genesis, v) = genesis(&["S1"], &[("S1", "k1"), ("S1", "k4"), ("S1", "k6")], &keys);
    let t1 = RwSet::new().read(key("S1", "k6"), Some(v["k6"])).write(key("S1", "k1"), "v2");
    let t2 = RwSet::new().read(key("S1", "k1"), Some(v["k1"])).write(key("S1", "k6"), "v2");
    let t3 = RwSet::new().write(key("S1", "k6"), "v2");
    let t4 = RwSet::new().write(key("S1", "k5"), "v1");
    // range k2..=k5, observed before T4 created k5
    let t5 = RwSet::new()
        .range(RangeQueryInfo {
            contract: "S1".into(),
            start_key: b"k2".to_vec(),
            end_key: Some(b"k5\0".to_vec()),
            observed_reads: vec![ReadEntry::new(key("S1", "k4"), Some(v["k4"]))],
        })
        .write(key("S1", "k7"), "v2");
    let t6 = RwSet::new().read(key("S1", "k4"), Some(v["k4"])).write(key("S1", "k4"), "v2");

    let b1 = seal_block(1, genesis.block_hash, [t1, t2, t3, t4].into_iter().map(|t| endorsed(t, &keys)).collect())
        .expect("block 1");
    let b2 = seal_block(2, b1.block_hash, [t5, t6].into_iter().map(|t| endorsed(t, &keys)).collect()).expect("block 2");
    let names = [(1, 0), (1, 1), (1, 2), (1, 3), (2, 0), (2, 1)]
        .iter()
        .enumerate()
        .map(|(i, (b, t))| (TxRef::new(*b, *t), format!("T{}", i + 1)))
        .collect();
    PipelineFixture {
        genesis,
        blocks: vec![b1, b2],
        keys,
        names,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateRow {
    pub dirty: Vec<(String, String)>,
    pub db: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineTrace {
    /// `(from, to, kinds)` by transaction name, in ascending order.
    pub edges: Vec<(String, String, String)>,
    /// Transactions handed out in each worker round.
    pub rounds: Vec<Vec<String>>,
    pub bitmap: Vec<(String, TxValidity)>,
    /// Initial state, after each worker round, and after each commit.
    pub rows: Vec<StateRow>,
}

fn row(state: &StateEngine) -> StateRow {
    StateRow {
        dirty: render_dirty(state),
        db: render_db(state),
    }
}

/// Replays the two-block scenario with `workers` validators running in
/// lock-step rounds, then commits both blocks.
pub fn replay_pipeline(workers: usize) -> Result<PipelineTrace, PeerError> {
    let fx = pipeline_fixture();
    let filter = Filter::full(PeerId::new("P"));
    let mut state = StateEngine::in_memory(filter.clone());
    state.commit_genesis(fx.genesis.clone())?;
    let core = PeerCore::new(filter, CommitMode::Deferred, 4, 64, &state);
    let mut peer = SyncPeer::new(core, state, fx.keys.clone());
    for b in &fx.blocks {
        peer.ingest(DeliveredBlock::Full(b.clone()))?;
    }
    let name = |r: &TxRef| fx.names[r].clone();
    let mut edges: Vec<(String, String, String)> = peer
        .core
        .graph()
        .edges()
        .into_iter()
        .map(|(f, t, k)| (name(&f), name(&t), format!("{k:?}")))
        .collect();
    edges.sort();

    let mut rows = vec![row(&peer.state)];
    let mut rounds = Vec::new();
    loop {
        let tasks: Vec<Task> = (0..workers.max(1)).map_while(|_| peer.core.next_task()).collect();
        if tasks.is_empty() {
            break;
        }
        rounds.push(tasks.iter().map(|t| name(&t.tx_ref)).collect());
        for t in &tasks {
            peer.core.run_task(t, &peer.keys, &mut peer.state)?;
        }
        rows.push(row(&peer.state));
    }
    let mut bitmap = Vec::new();
    while let CommitPoll::Committed(rep) = peer.core.poll_commit(&mut peer.state)? {
        for (i, f) in rep.flags.iter().enumerate() {
            bitmap.push((name(&TxRef::new(rep.number, i as u32)), *f));
        }
        rows.push(row(&peer.state));
    }
    Ok(PipelineTrace {
        edges,
        rounds,
        bitmap,
        rows,
    })
}

/// One block of three transactions over three contracts, replayed on three
/// sparse peers each holding one contract.
pub struct DistributedFixture {
    pub genesis: Block,
    pub block: Block,
    pub keys: KeyRegistry,
    pub names: BTreeMap<TxRef, String>,
}

pub fn distributed_fixture() -> DistributedFixture {
    let keys = fixture_keys();
    let (genesis, v) = genesis(
        &["S1", "S2", "S3"],
        &[("S1", "k4"), ("S1", "k7"), ("S2", "k3"), ("S2", "k5"), ("S3", "k6")],
        &keys,
    );
    let t1 = RwSet::new().read(key("S1", "k7"), Some(v["k7"])).write(key("S1", "k7"), "v2");
    let t2 = RwSet::new().read(key("S2", "k3"), Some(v["k3"])).write(key("S1", "k4"), "v2");
    let t3 = RwSet::new()
        .read(key("S1", "k4"), Some(v["k4"]))
        .read(key("S2", "k5"), Some(v["k5"]))
        .read(key("S3", "k6"), Some(v["k6"]))
        .write(key("S1", "k4"), "v2")
        .write(key("S2", "k3"), "v2")
        .write(key("S3", "k6"), "v2");
    let block = seal_block(1, genesis.block_hash, [t1, t2, t3].into_iter().map(|t| endorsed(t, &keys)).collect())
        .expect("block 1");
    let names = (0..3).map(|i| (TxRef::new(1, i), format!("T{}", i + 1))).collect();
    DistributedFixture {
        genesis,
        block,
        keys,
        names,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageLine {
    pub from: String,
    pub to: Vec<String>,
    pub tx: String,
    pub contract: String,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerRow {
    pub workers: Vec<String>,
    pub dirty: Vec<(String, String)>,
    pub valid: Vec<String>,
    pub invalid: Vec<String>,
    pub waiting: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistributedTrace {
    pub edges: BTreeMap<String, Vec<(String, String, String)>>,
    /// One entry per round, one row per peer.
    pub rounds: Vec<Vec<PeerRow>>,
    pub messages: Vec<MessageLine>,
    /// Flags each peer committed, by peer name.
    pub flags: BTreeMap<String, Vec<TxValidity>>,
    /// The organization-level outcome per transaction.
    pub org: Vec<(String, TxValidity)>,
}

struct FixturePeer {
    name: String,
    peer: SyncPeer,
    tasks: Vec<Task>,
    done: BTreeMap<TxRef, TxValidity>,
}

/// Replays the three-peer scenario with two workers per peer. Each round
/// dispatches ready work, delivers the previous round's verdicts, then
/// completes the dispatched work.
pub fn replay_distributed() -> Result<DistributedTrace, PeerError> {
    let fx = distributed_fixture();
    let name = |r: &TxRef| fx.names[r].clone();
    let mut peers: Vec<FixturePeer> = Vec::new();
    for (i, c) in ["S1", "S2", "S3"].iter().enumerate() {
        let pname = format!("P{}", i + 1);
        let filter = Filter::sparse(PeerId::new(&pname), [ContractId::new(*c)]).expect("non-empty filter");
        let mut state = StateEngine::in_memory(filter.clone());
        state.commit_genesis(fx.genesis.clone())?;
        let core = PeerCore::new(filter, CommitMode::Deferred, 4, 64, &state);
        let mut peer = SyncPeer::new(core, state, fx.keys.clone());
        peer.ingest(DeliveredBlock::Full(fx.block.clone()))?;
        peers.push(FixturePeer {
            name: pname,
            peer,
            tasks: Vec::new(),
            done: BTreeMap::new(),
        });
    }
    let filters: Vec<Filter> = peers.iter().map(|p| p.peer.core.filter().clone()).collect();
    let mut edges = BTreeMap::new();
    for p in &peers {
        let mut e: Vec<_> = p
            .peer
            .core
            .graph()
            .edges()
            .into_iter()
            .map(|(f, t, k)| (name(&f), name(&t), format!("{k:?}")))
            .collect();
        e.sort();
        edges.insert(p.name.clone(), e);
    }

    let mut inbox: Vec<Outbound> = Vec::new();
    let mut messages = Vec::new();
    let mut rounds = Vec::new();
    for _ in 0..16 {
        for p in peers.iter_mut() {
            p.tasks = (0..2).map_while(|_| p.peer.core.next_task()).collect();
        }
        let dispatched: Vec<Vec<String>> = peers.iter().map(|p| p.tasks.iter().map(|t| name(&t.tx_ref)).collect()).collect();
        let mut outbox = Vec::new();
        for o in std::mem::take(&mut inbox) {
            let to = recipients(&o, filters.iter());
            messages.push(MessageLine {
                from: o.verdict.from_peer.as_str().to_string(),
                to: to.iter().map(|p| p.as_str().to_string()).collect(),
                tx: name(&o.verdict.tx_ref),
                contract: o.verdict.contract.as_str().to_string(),
                valid: o.verdict.verdict.is_valid(),
            });
            for p in peers.iter_mut().filter(|p| to.iter().any(|t| t.as_str() == p.name)) {
                let out = p.peer.on_verdict(o.verdict.clone())?.expect("fixture buffer never fills");
                outbox.extend(out);
            }
        }
        for p in peers.iter_mut() {
            for t in std::mem::take(&mut p.tasks) {
                outbox.extend(p.peer.core.run_task(&t, &p.peer.keys, &mut p.peer.state)?);
            }
        }
        inbox = outbox;
        let mut snapshot = Vec::new();
        for (p, workers) in peers.iter_mut().zip(dispatched) {
            let _ = p.peer.core.take_resolutions();
            p.done.extend(peek_results(&p.peer.core, &fx));
            let waiting = fx
                .names
                .keys()
                .filter(|r| p.peer.core.graph().contains(**r) && !p.done.contains_key(r) && p.peer.core.graph().node(**r).is_some_and(|n| n.dispatched))
                .map(&name)
                .collect();
            snapshot.push(PeerRow {
                workers,
                dirty: render_dirty(&p.peer.state),
                valid: p.done.iter().filter(|(_, v)| v.is_valid()).map(|(r, _)| name(r)).collect(),
                invalid: p.done.iter().filter(|(_, v)| v.is_invalid()).map(|(r, _)| name(r)).collect(),
                waiting,
            });
        }
        let quiet = inbox.is_empty() && snapshot.iter().all(|r| r.workers.is_empty());
        if quiet && peers.iter().all(|p| p.peer.core.ready_len() == 0) {
            break;
        }
        rounds.push(snapshot);
    }

    let mut flags = BTreeMap::new();
    for p in peers.iter_mut() {
        if let CommitPoll::Committed(rep) = p.peer.core.poll_commit(&mut p.peer.state)? {
            flags.insert(p.name.clone(), rep.flags);
        }
    }
    let org = (0..3)
        .map(|i| {
            let decided = flags.values().map(|f| f[i]).find(|f| *f != TxValidity::NotValidated);
            (format!("T{}", i + 1), decided.unwrap_or(TxValidity::NotValidated))
        })
        .collect();
    Ok(DistributedTrace {
        edges,
        rounds,
        messages,
        flags,
        org,
    })
}

/// Results recorded so far for the fixture's transactions, without popping.
fn peek_results(core: &PeerCore, fx: &DistributedFixture) -> Vec<(TxRef, TxValidity)> {
    fx.names.keys().filter_map(|r| core.peek_result(*r).map(|v| (*r, v))).collect()
}

/// Four blocks on one contract: k1, k2 and k3 are created one per block,
/// then block 4 deletes k1 and updates k2.
pub fn snapshot_fixture() -> StateEngine {
    let keys = fixture_keys();
    let mut e = StateEngine::in_memory(Filter::full(PeerId::new("P")));
    let (g, _) = genesis(&["S1"], &[], &keys);
    e.commit_genesis(g).expect("genesis commits");
    let blocks = vec![
        vec![RwSet::new().write(key("S1", "k1"), "v1")],
        vec![RwSet::new().write(key("S1", "k2"), "v1")],
        vec![RwSet::new().write(key("S1", "k3"), "v1")],
        vec![RwSet::new().delete(key("S1", "k1")), RwSet::new().write(key("S1", "k2"), "v2")],
    ];
    for (i, txs) in blocks.into_iter().enumerate() {
        let n = txs.len();
        let txs = txs.into_iter().map(|t| endorsed(t, &keys)).collect();
        let b = seal_block(i as u64 + 1, e.last_hash(), txs).expect("fixture block");
        e.commit_block(DeliveredBlock::Full(b), vec![TxValidity::Valid; n]).expect("fixture commit");
    }
    e
}

/// Snapshot of the fixture's contract as of `block`, as `(key, value)` pairs.
pub fn snapshot_rows(block: u64) -> Result<Vec<(String, String)>, SnapshotError> {
    let e = snapshot_fixture();
    let m = extract_snapshot(&e, &"S1".into(), block)?;
    Ok(m.entries
        .iter()
        .map(|en| (String::from_utf8_lossy(&en.key).into_owned(), String::from_utf8_lossy(&en.value).into_owned()))
        .collect())
}

/// Committed state after each block of the snapshot fixture.
pub fn snapshot_progression() -> Vec<Vec<(String, String)>> {
    let e = snapshot_fixture();
    (1..=4)
        .map(|b| {
            let sub = Filter::full(PeerId::new("replay"));
            let mut store = crate::state::BlockStore::in_memory();
            for sb in e.blocks().iter().take(b + 1) {
                store.append(sb.block.clone(), sb.flags.clone()).expect("copy");
            }
            StateEngine::replay(&store, &sub)
                .iter()
                .filter(|(k, _)| !k.is_policy())
                .map(|(k, v)| (String::from_utf8_lossy(&k.key).into_owned(), String::from_utf8_lossy(&v.value).into_owned()))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(f: &str, t: &str, k: &str) -> (String, String, String) {
        (f.into(), t.into(), k.into())
    }

    #[test]
    fn pipeline_edges() {
        let tr = replay_pipeline(3).unwrap();
        assert_eq!(
            tr.edges,
            vec![
                e("T2", "T1", "{rw,wr}"),
                e("T3", "T1", "{wr}"),
                e("T3", "T2", "{ww}"),
                e("T5", "T4", "{pr}"),
                e("T6", "T5", "{wr}"),
            ]
        );
    }

    #[test]
    fn pipeline_schedule_and_bitmap() {
        let tr = replay_pipeline(3).unwrap();
        assert_eq!(tr.rounds, vec![vec!["T1", "T4"], vec!["T3", "T6"]]);
        let bits: Vec<_> = tr.bitmap.iter().map(|(n, v)| format!("{n}:{}", v.label())).collect();
        assert_eq!(bits, ["T1:V", "T2:I-ser", "T3:V", "T4:V", "T5:I-ser", "T6:V"]);
    }

    #[test]
    fn pipeline_state_progression() {
        let tr = replay_pipeline(3).unwrap();
        let initial = pairs(&[("k1", "v1"), ("k4", "v1"), ("k6", "v1")]);
        assert_eq!(tr.rows.len(), 5);
        assert_eq!(tr.rows[0], StateRow { dirty: vec![], db: initial.clone() });
        assert_eq!(tr.rows[1].dirty, pairs(&[("k1", "v2"), ("k5", "v1")]));
        assert_eq!(tr.rows[1].db, initial);
        assert_eq!(tr.rows[2].dirty, pairs(&[("k1", "v2"), ("k4", "v2"), ("k5", "v1"), ("k6", "v2")]));
        assert_eq!(tr.rows[3].dirty, pairs(&[("k4", "v2")]));
        assert_eq!(tr.rows[3].db, pairs(&[("k1", "v2"), ("k4", "v1"), ("k5", "v1"), ("k6", "v2")]));
        assert_eq!(tr.rows[4], StateRow { dirty: vec![], db: pairs(&[("k1", "v2"), ("k4", "v2"), ("k5", "v1"), ("k6", "v2")]) });
    }

    #[test]
    fn distributed_outcome() {
        let tr = replay_distributed().unwrap();
        let org: Vec<_> = tr.org.iter().map(|(n, v)| (n.as_str(), v.is_valid())).collect();
        assert_eq!(org, [("T1", true), ("T2", true), ("T3", false)]);
        assert_eq!(tr.edges["P1"], vec![e("T3", "T2", "{rw,ww}")]);
        assert_eq!(tr.edges["P2"], vec![e("T3", "T2", "{wr}")]);
        assert!(tr.edges["P3"].is_empty());
    }

    #[test]
    fn distributed_messages() {
        let tr = replay_distributed().unwrap();
        let lines: Vec<String> = tr
            .messages
            .iter()
            .map(|m| format!("{}->{} {} {} {}", m.from, m.to.join(","), m.tx, m.contract, if m.valid { "valid" } else { "invalid" }))
            .collect();
        assert_eq!(
            lines,
            [
                "P1->P2 T2 S1 valid",
                "P2->P1 T2 S2 valid",
                "P3->P1,P2 T3 S3 valid",
                "P1->P2,P3 T3 S1 invalid",
            ]
        );
    }

    #[test]
    fn distributed_rows() {
        let tr = replay_distributed().unwrap();
        let w = |r: usize, p: usize| tr.rounds[r][p].workers.clone();
        assert_eq!(w(0, 0), ["T1", "T2"]);
        assert_eq!(w(0, 1), ["T2"]);
        assert_eq!(w(0, 2), ["T3"]);
        assert_eq!(tr.rounds[0][0].dirty, pairs(&[("k7", "v2")]));
        assert_eq!(tr.rounds[0][0].valid, ["T1"]);
        assert_eq!(tr.rounds[0][0].waiting, ["T2"]);
        assert_eq!(tr.rounds[0][2].waiting, ["T3"]);
        let last = tr.rounds.last().unwrap();
        assert_eq!(last[0].dirty, pairs(&[("k4", "v2"), ("k7", "v2")]));
        for p in last {
            assert!(p.invalid.contains(&"T3".to_string()));
        }
        assert_eq!(tr.flags["P2"], [TxValidity::NotValidated, TxValidity::Valid, TxValidity::InvalidSerializability]);
    }

    #[test]
    fn snapshot_at_three() {
        assert_eq!(snapshot_rows(3).unwrap(), pairs(&[("k1", "v1"), ("k2", "v1"), ("k3", "v1")]));
        assert_eq!(snapshot_rows(4).unwrap(), pairs(&[("k2", "v2"), ("k3", "v1")]));
        assert_eq!(snapshot_progression()[3], pairs(&[("k2", "v2"), ("k3", "v1")]));
    }
}
