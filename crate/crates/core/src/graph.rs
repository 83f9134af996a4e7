//! Waiting-transaction dependency graph.
//!
//! Edges always point from a later transaction to an earlier one. A node is
//! handed out once it has no out-edges, so every transaction is validated
//! only after all earlier conflicting transactions have left the graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{Block, ContractId, StateKey, Transaction, TxRef, TxValidity, Version};
use crate::sparse::Filter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DependencyKind {
    /// The later transaction read a version older than the earlier one's write.
    Rw,
    /// The later transaction overwrites a state the earlier one read.
    Wr,
    Ww,
    /// A range query of the later transaction misses a write of the earlier one.
    Pr,
    EpRw,
    EpWr,
    EpWw,
    /// The later transaction read a state the earlier one writes, but the
    /// read may still be current once the earlier one is applied. Ordering
    /// only.
    ReadFrom,
    EpReadFrom,
}

impl DependencyKind {
    pub const ALL: [DependencyKind; 9] = [
        DependencyKind::Rw,
        DependencyKind::Wr,
        DependencyKind::Ww,
        DependencyKind::Pr,
        DependencyKind::EpRw,
        DependencyKind::EpWr,
        DependencyKind::EpWw,
        DependencyKind::ReadFrom,
        DependencyKind::EpReadFrom,
    ];

    pub fn is_fate(self) -> bool {
        matches!(self, DependencyKind::Rw | DependencyKind::Pr | DependencyKind::EpRw)
    }

    pub fn label(self) -> &'static str {
        match self {
            DependencyKind::Rw => "rw",
            DependencyKind::Wr => "wr",
            DependencyKind::Ww => "ww",
            DependencyKind::Pr => "pr",
            DependencyKind::EpRw => "ep-rw",
            DependencyKind::EpWr => "ep-wr",
            DependencyKind::EpWw => "ep-ww",
            DependencyKind::ReadFrom => "rf",
            DependencyKind::EpReadFrom => "ep-rf",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

/// Set of dependency kinds carried by one edge.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KindSet(u16);

impl KindSet {
    pub const EMPTY: KindSet = KindSet(0);

    pub fn of(kinds: &[DependencyKind]) -> Self {
        let mut s = KindSet::EMPTY;
        for k in kinds {
            s.insert(*k);
        }
        s
    }

    pub fn insert(&mut self, kind: DependencyKind) {
        self.0 |= kind.bit();
    }

    pub fn contains(self, kind: DependencyKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn union(self, other: KindSet) -> KindSet {
        KindSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn has_fate(self) -> bool {
        self.iter().any(DependencyKind::is_fate)
    }

    pub fn iter(self) -> impl Iterator<Item = DependencyKind> {
        DependencyKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }
}

impl fmt::Debug for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<_> = self.iter().map(DependencyKind::label).collect();
        write!(f, "{{{}}}", labels.join(","))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("block {got} added after block {last}")]
    OutOfOrderBlock { last: u64, got: u64 },
    #[error("transaction {0} is not in the graph")]
    UnknownTx(TxRef),
}

/// How a transaction touches one state, restricted to a filter.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeyUse {
    /// Explicit point read and the version observed.
    pub read: Option<Option<Version>>,
    /// Policy consulted because the transaction invokes its contract.
    pub implicit_policy: bool,
    /// `Some(is_delete)` when the state is written.
    pub write: Option<bool>,
}

/// The part of a transaction the graph indexes under a filter.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Footprint {
    pub keys: BTreeMap<StateKey, KeyUse>,
    /// `(contract, start, end, observed)` per in-scope range query.
    pub ranges: Vec<RangeUse>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeUse {
    pub contract: ContractId,
    pub start: Vec<u8>,
    pub end: Option<Vec<u8>>,
    pub observed: BTreeMap<Vec<u8>, Version>,
}

impl RangeUse {
    pub fn contains(&self, key: &[u8]) -> bool {
        key >= self.start.as_slice() && self.end.as_deref().is_none_or(|e| key < e)
    }
}

impl Footprint {
    pub fn of(tx: &Transaction, filter: &Filter) -> Footprint {
        let mut keys: BTreeMap<StateKey, KeyUse> = BTreeMap::new();
        for r in &tx.read_set {
            if filter.admits_key(&r.key) {
                keys.entry(r.key.clone()).or_default().read = Some(r.version);
            }
        }
        for c in &tx.invoked_contracts {
            if filter.admits_contract(c.as_str()) {
                let u = keys.entry(StateKey::policy(c)).or_default();
                if u.read.is_none() {
                    u.implicit_policy = true;
                }
            }
        }
        for w in &tx.write_set {
            if filter.admits_key(&w.key) {
                keys.entry(w.key.clone()).or_default().write = Some(w.is_delete);
            }
        }
        let ranges = tx
            .range_queries
            .iter()
            .filter(|rq| filter.admits_contract(rq.contract.as_str()))
            .map(|rq| RangeUse {
                contract: rq.contract.clone(),
                start: rq.start_key.clone(),
                end: rq.end_key.clone(),
                observed: rq
                    .observed_reads
                    .iter()
                    .filter_map(|r| r.version.map(|v| (r.key.key.clone(), v)))
                    .collect(),
            })
            .collect();
        Footprint { keys, ranges }
    }
}

/// True if the earlier writer being valid forces a read of `observed` to be
/// stale. `latest` says whether no other in-graph writer of the state sits
/// between the writer and the reader.
pub fn read_is_doomed(observed: Option<Version>, writer: TxRef, is_delete: bool, latest: bool) -> bool {
    let written = writer.version();
    if latest {
        observed != if is_delete { None } else { Some(written) }
    } else {
        match observed {
            Some(v) => v < written || (v == written && is_delete),
            None => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TxNode {
    pub tx_ref: TxRef,
    pub tx: Arc<Transaction>,
    pub out_edges: BTreeMap<TxRef, KindSet>,
    pub in_edges: BTreeMap<TxRef, KindSet>,
    pub dispatched: bool,
    footprint: Footprint,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyAccess {
    pub readers: BTreeSet<TxRef>,
    /// Writer and whether its write is a delete.
    pub writers: BTreeMap<TxRef, bool>,
}

#[derive(Debug, Default)]
pub struct DependencyGraph {
    nodes: BTreeMap<TxRef, TxNode>,
    index: BTreeMap<StateKey, KeyAccess>,
    range_readers: BTreeMap<ContractId, BTreeMap<TxRef, Vec<RangeUse>>>,
    ready: BTreeSet<TxRef>,
    last_block: Option<u64>,
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, r: TxRef) -> bool {
        self.nodes.contains_key(&r)
    }

    pub fn node(&self, r: TxRef) -> Option<&TxNode> {
        self.nodes.get(&r)
    }

    pub fn refs(&self) -> impl Iterator<Item = TxRef> + '_ {
        self.nodes.keys().copied()
    }

    pub fn last_block(&self) -> Option<u64> {
        self.last_block
    }

    /// Every edge as `(from, to, kinds)` with `from` the later transaction.
    pub fn edges(&self) -> Vec<(TxRef, TxRef, KindSet)> {
        self.nodes
            .values()
            .flat_map(|n| n.out_edges.iter().map(move |(to, k)| (n.tx_ref, *to, *k)))
            .collect()
    }

    pub fn index(&self) -> &BTreeMap<StateKey, KeyAccess> {
        &self.index
    }

    /// Adds every transaction of `block` admitted by `filter`.
    pub fn add_block(&mut self, block: &Block, filter: &Filter) -> Result<usize, GraphError> {
        let txs: Vec<(u32, Arc<Transaction>)> =
            block.txs.iter().enumerate().map(|(i, t)| (i as u32, t.clone())).collect();
        self.add_txs(block.number, &txs, filter)
    }

    /// Adds the admitted subset of `txs`, which must be in ascending index
    /// order and belong to block `number`.
    pub fn add_txs(&mut self, number: u64, txs: &[(u32, Arc<Transaction>)], filter: &Filter) -> Result<usize, GraphError> {
        if let Some(last) = self.last_block {
            if number <= last {
                return Err(GraphError::OutOfOrderBlock { last, got: number });
            }
        }
        self.last_block = Some(number);
        let mut added = 0;
        for (index, tx) in txs {
            if filter.admits_tx(tx) {
                self.insert(TxRef::new(number, *index), tx.clone(), Footprint::of(tx, filter));
                added += 1;
            }
        }
        Ok(added)
    }

    fn insert(&mut self, r: TxRef, tx: Arc<Transaction>, fp: Footprint) {
        let mut out: BTreeMap<TxRef, KindSet> = BTreeMap::new();
        let mut add = |to: TxRef, kind: DependencyKind| {
            if to != r {
                out.entry(to).or_default().insert(kind);
            }
        };

        for (key, u) in &fp.keys {
            let policy = key.is_policy();
            let Some(acc) = self.index.get(key) else {
                continue;
            };
            let latest = acc.writers.keys().next_back().copied();
            if let Some(observed) = u.read {
                for (w, del) in &acc.writers {
                    let doomed = read_is_doomed(observed, *w, *del, Some(*w) == latest);
                    add(
                        *w,
                        match (policy, doomed) {
                            (false, true) => DependencyKind::Rw,
                            (false, false) => DependencyKind::ReadFrom,
                            (true, true) => DependencyKind::EpRw,
                            (true, false) => DependencyKind::EpReadFrom,
                        },
                    );
                }
            } else if u.implicit_policy {
                for w in acc.writers.keys() {
                    add(*w, DependencyKind::EpReadFrom);
                }
            }
            if u.write.is_some() {
                for w in acc.writers.keys() {
                    add(*w, if policy { DependencyKind::EpWw } else { DependencyKind::Ww });
                }
                for rd in &acc.readers {
                    add(*rd, if policy { DependencyKind::EpWr } else { DependencyKind::Wr });
                }
            }
        }

        for (key, u) in &fp.keys {
            if u.write.is_none() {
                continue;
            }
            if let Some(readers) = self.range_readers.get(&key.contract) {
                for (rd, ranges) in readers {
                    if ranges.iter().any(|rq| rq.contains(&key.key)) {
                        add(*rd, DependencyKind::Wr);
                    }
                }
            }
        }

        for rq in &fp.ranges {
            for (key, acc) in self.scan(&rq.contract, &rq.start, rq.end.as_deref()) {
                let latest = acc.writers.keys().next_back().copied();
                let observed = rq.observed.get(&key.key).copied();
                for (w, del) in &acc.writers {
                    let doomed = read_is_doomed(observed, *w, *del, Some(*w) == latest);
                    add(*w, if doomed { DependencyKind::Pr } else { DependencyKind::ReadFrom });
                }
            }
        }

        for (key, u) in &fp.keys {
            let acc = self.index.entry(key.clone()).or_default();
            if u.read.is_some() || u.implicit_policy {
                acc.readers.insert(r);
            }
            if let Some(del) = u.write {
                acc.writers.insert(r, del);
            }
        }
        if !fp.ranges.is_empty() {
            for rq in &fp.ranges {
                self.range_readers
                    .entry(rq.contract.clone())
                    .or_default()
                    .entry(r)
                    .or_default()
                    .push(rq.clone());
            }
        }

        for (to, kinds) in &out {
            let target = self.nodes.get_mut(to).expect("edge target in graph");
            target.in_edges.insert(r, *kinds);
        }
        if out.is_empty() {
            self.ready.insert(r);
        }
        self.nodes.insert(
            r,
            TxNode {
                tx_ref: r,
                tx,
                out_edges: out,
                in_edges: BTreeMap::new(),
                dispatched: false,
                footprint: fp,
            },
        );
    }

    fn scan<'a>(
        &'a self,
        contract: &ContractId,
        start: &[u8],
        end: Option<&'a [u8]>,
    ) -> impl Iterator<Item = (&'a StateKey, &'a KeyAccess)> + 'a {
        let lo = StateKey::new(contract.clone(), start.to_vec());
        let contract = contract.clone();
        self.index
            .range(lo..)
            .take_while(move |(k, _)| k.contract == contract && end.is_none_or(|e| k.key.as_slice() < e))
            .filter(|(_, acc)| !acc.writers.is_empty())
    }

    /// In-graph writers of any state of `contract` in `[start, end)`.
    pub fn find_range_writers(&self, contract: &ContractId, start: &[u8], end: Option<&[u8]>) -> BTreeSet<TxRef> {
        self.scan(contract, start, end)
            .flat_map(|(_, acc)| acc.writers.keys().copied())
            .collect()
    }

    /// Oldest node with no out-edges that has not been handed out yet.
    pub fn get_next_transaction(&mut self) -> Option<TxRef> {
        let r = self.ready.pop_first()?;
        self.nodes.get_mut(&r).expect("ready node present").dispatched = true;
        Some(r)
    }

    /// Returns a dispatched node to the ready pool.
    pub fn undispatch(&mut self, r: TxRef) {
        if let Some(n) = self.nodes.get_mut(&r) {
            if n.dispatched {
                n.dispatched = false;
                if n.out_edges.is_empty() {
                    self.ready.insert(r);
                }
            }
        }
    }

    pub fn ready_len(&self) -> usize {
        self.ready.len()
    }

    /// Removes `r`. When `is_valid`, every direct dependent holding a fate
    /// edge to `r` is removed as invalid and reported. Those removals do not
    /// propagate further because an invalid transaction changes no state.
    pub fn remove_from_graph(&mut self, r: TxRef, is_valid: bool) -> Result<Vec<(TxRef, TxValidity)>, GraphError> {
        let node = self.detach(r).ok_or(GraphError::UnknownTx(r))?;
        let mut doomed = Vec::new();
        for (dep, kinds) in &node.in_edges {
            if is_valid && kinds.has_fate() {
                doomed.push(*dep);
            }
        }
        for dep in &doomed {
            let n = self.detach(*dep).expect("fate dependent present");
            debug_assert!(!n.dispatched, "fate dependent {dep} was dispatched");
        }
        Ok(doomed
            .into_iter()
            .map(|d| (d, TxValidity::InvalidSerializability))
            .collect())
    }

    fn detach(&mut self, r: TxRef) -> Option<TxNode> {
        let node = self.nodes.remove(&r)?;
        self.ready.remove(&r);
        for to in node.out_edges.keys() {
            if let Some(t) = self.nodes.get_mut(to) {
                t.in_edges.remove(&r);
            }
        }
        for from in node.in_edges.keys() {
            if let Some(f) = self.nodes.get_mut(from) {
                f.out_edges.remove(&r);
                if f.out_edges.is_empty() && !f.dispatched {
                    self.ready.insert(*from);
                }
            }
        }
        for (key, u) in &node.footprint.keys {
            if let Some(acc) = self.index.get_mut(key) {
                if u.read.is_some() || u.implicit_policy {
                    acc.readers.remove(&r);
                }
                if u.write.is_some() {
                    acc.writers.remove(&r);
                }
                if acc.readers.is_empty() && acc.writers.is_empty() {
                    self.index.remove(key);
                }
            }
        }
        for rq in &node.footprint.ranges {
            if let Some(m) = self.range_readers.get_mut(&rq.contract) {
                m.remove(&r);
                if m.is_empty() {
                    self.range_readers.remove(&rq.contract);
                }
            }
        }
        Some(node)
    }

    /// True if `r` has a path along out-edges to a node satisfying `pred`.
    pub fn reaches(&self, r: TxRef, pred: impl Fn(TxRef) -> bool) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![r];
        while let Some(cur) = stack.pop() {
            let Some(n) = self.nodes.get(&cur) else { continue };
            for to in n.out_edges.keys() {
                if pred(*to) {
                    return true;
                }
                if seen.insert(*to) {
                    stack.push(*to);
                }
            }
        }
        false
    }

    /// Recomputes the key index from the nodes' footprints.
    pub fn rebuilt_index(&self) -> BTreeMap<StateKey, KeyAccess> {
        let mut idx: BTreeMap<StateKey, KeyAccess> = BTreeMap::new();
        for n in self.nodes.values() {
            for (key, u) in &n.footprint.keys {
                let acc = idx.entry(key.clone()).or_default();
                if u.read.is_some() || u.implicit_policy {
                    acc.readers.insert(n.tx_ref);
                }
                if let Some(del) = u.write {
                    acc.writers.insert(n.tx_ref, del);
                }
            }
        }
        idx
    }

    /// Adjacency list, one line per node: `b:i -> b:i{kinds} ...`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for n in self.nodes.values() {
            let _ = write!(s, "{}{}", n.tx_ref, if n.dispatched { "*" } else { "" });
            if !n.out_edges.is_empty() {
                s.push_str(" ->");
                for (to, kinds) in &n.out_edges {
                    let _ = write!(s, " {to}{kinds:?}");
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RangeQueryInfo, ReadEntry, RwSet};
    use crate::sparse::PeerId;

    fn k(name: &str) -> StateKey {
        StateKey::new("S1", name.as_bytes().to_vec())
    }

    fn v(b: u64, t: u32) -> Option<Version> {
        Some(Version::new(b, t))
    }

    fn tx(rw: RwSet) -> Arc<Transaction> {
        Arc::new(rw.into_proposal().unwrap().into_transaction(vec![]))
    }

    fn full() -> Filter {
        Filter::full(PeerId::new("p"))
    }

    fn t(b: u64, i: u32) -> TxRef {
        TxRef::new(b, i)
    }

    fn add(g: &mut DependencyGraph, b: u64, txs: Vec<Arc<Transaction>>) {
        let txs: Vec<_> = txs.into_iter().enumerate().map(|(i, t)| (i as u32, t)).collect();
        g.add_txs(b, &txs, &full()).unwrap();
    }

    #[test]
    fn disjoint_keys_make_no_edges() {
        let mut g = DependencyGraph::new();
        add(
            &mut g,
            1,
            vec![
                tx(RwSet::new().read(k("a"), v(0, 0)).write(k("a"), "x")),
                tx(RwSet::new().read(k("b"), v(0, 1)).write(k("b"), "x")),
            ],
        );
        assert!(g.edges().is_empty());
        assert_eq!(g.get_next_transaction(), Some(t(1, 0)));
        assert_eq!(g.get_next_transaction(), Some(t(1, 1)));
        assert_eq!(g.get_next_transaction(), None);
    }

    #[test]
    fn empty_graph_yields_nothing() {
        let mut g = DependencyGraph::new();
        assert_eq!(g.get_next_transaction(), None);
        assert!(g.find_range_writers(&"S1".into(), b"a", None).is_empty());
    }

    #[test]
    fn out_of_order_block_rejected() {
        let mut g = DependencyGraph::new();
        add(&mut g, 2, vec![tx(RwSet::new().write(k("a"), "x"))]);
        let err = g.add_txs(2, &[], &full()).unwrap_err();
        assert_eq!(err, GraphError::OutOfOrderBlock { last: 2, got: 2 });
    }

    #[test]
    fn read_of_earlier_writers_output_is_ordering_only() {
        let mut g = DependencyGraph::new();
        add(&mut g, 1, vec![tx(RwSet::new().write(k("a"), "x"))]);
        add(&mut g, 2, vec![tx(RwSet::new().read(k("a"), v(1, 0)).write(k("b"), "y"))]);
        let e = g.edges();
        assert_eq!(e, vec![(t(2, 0), t(1, 0), KindSet::of(&[DependencyKind::ReadFrom]))]);
        assert_eq!(g.get_next_transaction(), Some(t(1, 0)));
        assert!(g.remove_from_graph(t(1, 0), true).unwrap().is_empty());
        assert_eq!(g.get_next_transaction(), Some(t(2, 0)));
    }

    #[test]
    fn invalid_removal_releases_fate_dependent() {
        let mut g = DependencyGraph::new();
        add(
            &mut g,
            1,
            vec![
                tx(RwSet::new().write(k("a"), "x")),
                tx(RwSet::new().read(k("a"), v(0, 0)).write(k("c"), "y")),
            ],
        );
        assert_eq!(g.get_next_transaction(), Some(t(1, 0)));
        assert!(g.remove_from_graph(t(1, 0), false).unwrap().is_empty());
        assert_eq!(g.get_next_transaction(), Some(t(1, 1)));
    }

    #[test]
    fn unknown_tx_removal_fails() {
        let mut g = DependencyGraph::new();
        assert_eq!(g.remove_from_graph(t(1, 0), true), Err(GraphError::UnknownTx(t(1, 0))));
    }

    #[test]
    fn fate_removal_does_not_cascade_through_invalid_nodes() {
        // t0 writes a; t1 read a stale and writes b; t2 read b stale.
        let mut g = DependencyGraph::new();
        add(
            &mut g,
            1,
            vec![
                tx(RwSet::new().write(k("a"), "x")),
                tx(RwSet::new().read(k("a"), v(0, 0)).write(k("b"), "y")),
                tx(RwSet::new().read(k("b"), v(0, 1)).write(k("c"), "z")),
            ],
        );
        assert_eq!(g.get_next_transaction(), Some(t(1, 0)));
        let out = g.remove_from_graph(t(1, 0), true).unwrap();
        assert_eq!(out, vec![(t(1, 1), TxValidity::InvalidSerializability)]);
        assert_eq!(g.get_next_transaction(), Some(t(1, 2)));
    }

    #[test]
    fn two_range_writers_found() {
        let mut g = DependencyGraph::new();
        add(
            &mut g,
            1,
            vec![tx(RwSet::new().write(k("k2"), "x")), tx(RwSet::new().write(k("k4"), "y"))],
        );
        let w = g.find_range_writers(&"S1".into(), b"k1", Some(b"k5"));
        assert_eq!(w, BTreeSet::from([t(1, 0), t(1, 1)]));
        assert!(g.find_range_writers(&"S1".into(), b"k3", Some(b"k4")).is_empty());
    }

    #[test]
    fn policy_update_orders_invokers() {
        let s1 = ContractId::new("S1");
        let pk = StateKey::policy(&s1);
        let mut g = DependencyGraph::new();
        add(
            &mut g,
            1,
            vec![
                tx(RwSet::new().read(k("a"), v(0, 0))),
                tx(RwSet::new().read(pk.clone(), v(0, 9)).write(pk.clone(), "p")),
                tx(RwSet::new().read(pk.clone(), v(0, 9)).write(k("b"), "q")),
                tx(RwSet::new().write(pk, "p2")),
            ],
        );
        let edges: BTreeMap<_, _> = g.edges().into_iter().map(|(f, to, k)| ((f, to), k)).collect();
        assert_eq!(edges[&(t(1, 1), t(1, 0))], KindSet::of(&[DependencyKind::EpWr]));
        assert_eq!(edges[&(t(1, 2), t(1, 1))], KindSet::of(&[DependencyKind::EpRw]));
        assert!(edges[&(t(1, 3), t(1, 1))].contains(DependencyKind::EpWw));
        assert!(edges[&(t(1, 3), t(1, 2))].contains(DependencyKind::EpWr));
    }

    #[test]
    fn sparse_filter_ignores_foreign_keys() {
        let s2 = StateKey::new("S2", b"x".to_vec());
        let mut g = DependencyGraph::new();
        let f = Filter::sparse(PeerId::new("p"), [ContractId::new("S1")]).unwrap();
        let txs = vec![
            (0, tx(RwSet::new().write(s2.clone(), "1").write(k("a"), "1"))),
            (1, tx(RwSet::new().read(s2, v(0, 0)).write(k("b"), "1"))),
        ];
        g.add_txs(1, &txs, &f).unwrap();
        assert!(g.edges().is_empty());
    }

    #[test]
    fn range_query_edges() {
        let mut g = DependencyGraph::new();
        let rq = RangeQueryInfo {
            contract: "S1".into(),
            start_key: b"k2".to_vec(),
            end_key: Some(b"k6".to_vec()),
            observed_reads: vec![ReadEntry::new(k("k3"), v(0, 0))],
        };
        add(&mut g, 1, vec![tx(RwSet::new().write(k("k3"), "x"))]);
        add(&mut g, 2, vec![tx(RwSet::new().range(rq).write(k("z"), "1"))]);
        add(&mut g, 3, vec![tx(RwSet::new().write(k("k5"), "x"))]);
        let edges: BTreeMap<_, _> = g.edges().into_iter().map(|(f, to, k)| ((f, to), k)).collect();
        assert_eq!(edges[&(t(2, 0), t(1, 0))], KindSet::of(&[DependencyKind::Pr]));
        assert_eq!(edges[&(t(3, 0), t(2, 0))], KindSet::of(&[DependencyKind::Wr]));
    }

    #[test]
    fn reaches_follows_out_edges() {
        let mut g = DependencyGraph::new();
        add(
            &mut g,
            1,
            vec![
                tx(RwSet::new().write(k("a"), "x")),
                tx(RwSet::new().write(k("a"), "y").write(k("b"), "y")),
                tx(RwSet::new().write(k("b"), "z")),
            ],
        );
        assert!(g.reaches(t(1, 2), |r| r == t(1, 0)));
        assert!(!g.reaches(t(1, 0), |r| r == t(1, 2)));
    }

    #[test]
    fn dump_lists_edges() {
        let mut g = DependencyGraph::new();
        add(
            &mut g,
            1,
            vec![tx(RwSet::new().write(k("a"), "x")), tx(RwSet::new().write(k("a"), "y"))],
        );
        assert_eq!(g.dump(), "1:0\n1:1 -> 1:0{ww}\n");
    }
}
