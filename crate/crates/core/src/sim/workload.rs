//! Transaction generators: Smallbank, YCSB-style Zipfian read-modify-write,
//! and a mixed stream that adds range scans, deletes, policy updates,
//! duplicate submissions and bad endorsements.
//!
//! Transactions are simulated against a [`WorldState`] view standing in for
//! the endorsing peer's state, then endorsed with keyed digests.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use super::config::{ScenarioConfig, WorkloadKind};
use super::oracle::WorldState;
use crate::digest::Digest;
use crate::model::{
    seal_block, Block, ContractId, EndorsementPolicy, KeyRegistry, OrgId, RangeQueryInfo, ReadEntry, RwSet, StateKey,
    Transaction,
};

/// The six standard Smallbank operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SmallbankOp {
    Balance,
    DepositChecking,
    TransactSavings,
    Amalgamate,
    WriteCheck,
    SendPayment,
}

pub const SMALLBANK_OPS: [SmallbankOp; 6] = [
    SmallbankOp::Balance,
    SmallbankOp::DepositChecking,
    SmallbankOp::TransactSavings,
    SmallbankOp::Amalgamate,
    SmallbankOp::WriteCheck,
    SmallbankOp::SendPayment,
];

/// Shape of a generated transaction, for workload statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxKind {
    Smallbank(SmallbankOp),
    Ycsb,
    Range,
    Delete,
    PolicyUpdate,
    Duplicate,
}

const BALANCE_CAP: u64 = 9_999_999_999;
const INITIAL_BALANCE: u64 = 10_000;
const RANGE_SPAN: usize = 4;
const GENESIS_CHUNK: usize = 512;

pub fn checking_key(contract: &ContractId, account: usize) -> StateKey {
    StateKey::new(contract.clone(), format!("c:{account:06}").into_bytes())
}

pub fn savings_key(contract: &ContractId, account: usize) -> StateKey {
    StateKey::new(contract.clone(), format!("s:{account:06}").into_bytes())
}

pub fn ycsb_key(contract: &ContractId, index: usize) -> StateKey {
    StateKey::new(contract.clone(), format!("k:{index:08}").into_bytes())
}

pub fn balance_bytes(v: u64) -> Vec<u8> {
    format!("{:010}", v.min(BALANCE_CAP)).into_bytes()
}

fn balance_of(view: &WorldState, key: &StateKey) -> u64 {
    view.get(key)
        .and_then(|(v, _)| std::str::from_utf8(v).ok()?.parse().ok())
        .unwrap_or(0)
}

/// The org names of a scenario.
pub fn org_ids(cfg: &ScenarioConfig) -> Vec<OrgId> {
    (0..cfg.org_count).map(|i| OrgId::new(cfg.org_name(i))).collect()
}

/// Endorsement keys for a scenario's orgs.
pub fn scenario_keys(cfg: &ScenarioConfig) -> KeyRegistry {
    KeyRegistry::derive(cfg.seed, &org_ids(cfg))
}

/// A seeded transaction source.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: ScenarioConfig,
    rng: ChaCha8Rng,
    zipf: Zipf<f64>,
    keys: KeyRegistry,
    orgs: Vec<OrgId>,
    issued: Vec<Arc<Transaction>>,
}

impl Generator {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let zipf = Zipf::new(cfg.account_count as f64, cfg.zipf_s).expect("validated zipf parameters");
        Generator {
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            zipf,
            keys: scenario_keys(cfg),
            orgs: org_ids(cfg),
            issued: Vec::new(),
        }
    }

    pub fn keys(&self) -> &KeyRegistry {
        &self.keys
    }

    pub fn orgs(&self) -> &[OrgId] {
        &self.orgs
    }

    fn initial_policy(&self, c: &ContractId) -> EndorsementPolicy {
        let threshold = self.orgs.len() as u32 / 2 + 1;
        EndorsementPolicy::new(c.clone(), self.orgs.iter().cloned(), threshold).expect("majority threshold")
    }

    fn filler(&mut self, len: usize) -> Vec<u8> {
        let mut v = vec![0u8; len];
        self.rng.fill(&mut v[..]);
        v
    }

    /// Block 0: every contract's policy, then the initial accounts and keys.
    pub fn genesis(&mut self) -> Block {
        let contracts = self.cfg.contracts.clone();
        let mut txs = Vec::new();
        let mut policies = RwSet::new();
        for c in &contracts {
            policies = policies.write(StateKey::policy(c), self.initial_policy(c).to_bytes());
        }
        txs.push(policies);
        let smallbank = matches!(self.cfg.workload, WorkloadKind::Smallbank | WorkloadKind::Mixed);
        let ycsb = matches!(self.cfg.workload, WorkloadKind::Ycsb | WorkloadKind::Mixed);
        for c in &contracts {
            let mut writes: Vec<(StateKey, Vec<u8>)> = Vec::new();
            for a in 0..self.cfg.account_count {
                if smallbank {
                    writes.push((checking_key(c, a), balance_bytes(INITIAL_BALANCE)));
                    writes.push((savings_key(c, a), balance_bytes(INITIAL_BALANCE)));
                }
                if ycsb {
                    let v = self.filler(self.cfg.value_size_bytes);
                    writes.push((ycsb_key(c, a), v));
                }
            }
            for chunk in writes.chunks(GENESIS_CHUNK) {
                let rw = chunk.iter().fold(RwSet::new(), |rw, (k, v)| rw.write(k.clone(), v.clone()));
                txs.push(rw);
            }
        }
        let txs = txs
            .into_iter()
            .map(|rw| Arc::new(rw.into_proposal().expect("genesis write set").into_transaction(vec![])))
            .collect();
        seal_block(0, Digest::ZERO, txs).expect("genesis is non-empty")
    }

    /// Zero-based Zipf rank over the keyspace.
    pub fn zipf_rank(&mut self) -> usize {
        (self.zipf.sample(&mut self.rng) as usize).saturating_sub(1)
    }

    fn account(&mut self) -> usize {
        self.rng.random_range(0..self.cfg.account_count)
    }

    fn contract(&mut self) -> ContractId {
        let i = self.rng.random_range(0..self.cfg.contracts.len());
        self.cfg.contracts[i].clone()
    }

    fn amount(&mut self) -> u64 {
        self.rng.random_range(1..=100)
    }

    /// One Smallbank operation on `contract`, accounts chosen uniformly.
    pub fn smallbank_rwset(&mut self, contract: &ContractId, view: &WorldState) -> (SmallbankOp, RwSet) {
        let op = SMALLBANK_OPS[self.rng.random_range(0..SMALLBANK_OPS.len())];
        let a = self.account();
        let mut b = self.account();
        if self.cfg.account_count > 1 {
            while b == a {
                b = self.account();
            }
        }
        let amt = self.amount();
        let (ca, sa, cb, sb) = (
            checking_key(contract, a),
            savings_key(contract, a),
            checking_key(contract, b),
            savings_key(contract, b),
        );
        let read = |rw: RwSet, k: &StateKey| rw.read(k.clone(), view.version(k));
        let rw = RwSet::new();
        let rw = match op {
            SmallbankOp::Balance => read(read(rw, &ca), &sa),
            SmallbankOp::DepositChecking => read(rw, &ca).write(ca.clone(), balance_bytes(balance_of(view, &ca) + amt)),
            SmallbankOp::TransactSavings => read(rw, &sa).write(sa.clone(), balance_bytes(balance_of(view, &sa) + amt)),
            SmallbankOp::Amalgamate if a != b => {
                let moved = balance_of(view, &ca);
                read(read(rw, &ca), &sb)
                    .write(ca.clone(), balance_bytes(0))
                    .write(sb.clone(), balance_bytes(balance_of(view, &sb) + moved))
            }
            SmallbankOp::Amalgamate => read(rw, &ca).write(ca.clone(), balance_bytes(balance_of(view, &ca))),
            SmallbankOp::WriteCheck => {
                let total = balance_of(view, &ca) + balance_of(view, &sa);
                let debit = if total < amt { amt + 1 } else { amt };
                read(read(rw, &ca), &sa).write(ca.clone(), balance_bytes(balance_of(view, &ca).saturating_sub(debit)))
            }
            SmallbankOp::SendPayment if a != b => {
                let from = balance_of(view, &ca);
                let moved = amt.min(from);
                read(read(rw, &ca), &cb)
                    .write(ca.clone(), balance_bytes(from - moved))
                    .write(cb.clone(), balance_bytes(balance_of(view, &cb) + moved))
            }
            SmallbankOp::SendPayment => read(rw, &ca).write(ca.clone(), balance_bytes(balance_of(view, &ca))),
        };
        (op, rw)
    }

    /// Reads two Zipf-chosen keys of `contract` and writes both.
    pub fn ycsb_rwset(&mut self, contract: &ContractId, view: &WorldState) -> RwSet {
        let k1 = self.zipf_rank();
        let mut k2 = self.zipf_rank();
        for _ in 0..16 {
            if k2 != k1 {
                break;
            }
            k2 = self.zipf_rank();
        }
        let keys: BTreeSet<usize> = [k1, k2].into_iter().collect();
        let mut rw = RwSet::new();
        for k in keys {
            let key = ycsb_key(contract, k);
            let v = self.filler(self.cfg.value_size_bytes);
            rw = rw.read(key.clone(), view.version(&key)).write(key, v);
        }
        rw
    }

    fn base_rwset(&mut self, contract: &ContractId, view: &WorldState) -> (TxKind, RwSet) {
        let ycsb = match self.cfg.workload {
            WorkloadKind::Smallbank => false,
            WorkloadKind::Ycsb => true,
            WorkloadKind::Mixed => self.rng.random_bool(0.5),
        };
        if ycsb {
            (TxKind::Ycsb, self.ycsb_rwset(contract, view))
        } else {
            let (op, rw) = self.smallbank_rwset(contract, view);
            (TxKind::Smallbank(op), rw)
        }
    }

    fn key_of(&mut self, contract: &ContractId, account: usize) -> StateKey {
        match self.cfg.workload {
            WorkloadKind::Smallbank => checking_key(contract, account),
            WorkloadKind::Ycsb => ycsb_key(contract, account),
            WorkloadKind::Mixed if self.rng.random_bool(0.5) => checking_key(contract, account),
            WorkloadKind::Mixed => ycsb_key(contract, account),
        }
    }

    /// Scans a few neighbouring keys and rewrites one of them.
    fn range_rwset(&mut self, contract: &ContractId, view: &WorldState) -> RwSet {
        let a = self.account();
        let start = self.key_of(contract, a);
        let prefix = start.key[..2].to_vec();
        let end_key = {
            let mut k = prefix.clone();
            let width = start.key.len() - 2;
            k.extend(format!("{:0width$}", a + RANGE_SPAN).into_bytes());
            k
        };
        let observed: Vec<ReadEntry> = view
            .range(contract, &start.key, Some(&end_key))
            .map(|(k, v)| ReadEntry::new(k.clone(), Some(v)))
            .collect();
        let mut rw = RwSet::new().range(RangeQueryInfo {
            contract: contract.clone(),
            start_key: start.key.clone(),
            end_key: Some(end_key),
            observed_reads: observed,
        });
        let offset = self.rng.random_range(0..RANGE_SPAN);
        let target = self.key_of(contract, (a + offset) % self.cfg.account_count);
        let value = if target.key.starts_with(b"k:") {
            self.filler(self.cfg.value_size_bytes)
        } else {
            balance_bytes(balance_of(view, &target) + 1)
        };
        rw = rw.write(target, value);
        rw
    }

    fn delete_rwset(&mut self, contract: &ContractId, view: &WorldState) -> RwSet {
        let a = self.account();
        let key = self.key_of(contract, a);
        RwSet::new().read(key.clone(), view.version(&key)).delete(key)
    }

    fn policy_rwset(&mut self, contract: &ContractId, view: &WorldState) -> RwSet {
        let mut orgs: Vec<OrgId> = self.orgs.iter().filter(|_| self.rng.random_bool(0.7)).cloned().collect();
        if orgs.is_empty() {
            orgs.push(self.orgs[self.rng.random_range(0..self.orgs.len())].clone());
        }
        let threshold = self.rng.random_range(1..=orgs.len() as u32);
        let p = EndorsementPolicy::new(contract.clone(), orgs, threshold).expect("threshold within range");
        let key = StateKey::policy(contract);
        RwSet::new().read(key.clone(), view.version(&key)).write(key, p.to_bytes())
    }

    /// Endorses with every org named by the view's policies of the invoked
    /// contracts.
    pub fn endorse(&mut self, rw: RwSet, view: &WorldState) -> Transaction {
        let proposal = rw.into_proposal().expect("generated sets are well formed");
        let mut orgs: BTreeSet<OrgId> = BTreeSet::new();
        for c in &proposal.invoked_contracts {
            match view.get(&StateKey::policy(c)).and_then(|(b, _)| EndorsementPolicy::from_bytes(b).ok()) {
                Some(p) => orgs.extend(p.required_orgs),
                None => orgs.extend(self.orgs.iter().cloned()),
            }
        }
        let mut tx = proposal.endorse(&self.keys, &orgs);
        if self.cfg.bad_endorsement_rate > 0.0 && self.rng.random_bool(self.cfg.bad_endorsement_rate) {
            for e in &mut tx.endorsements {
                e.signature = Digest::of(e.signature.as_bytes());
            }
            tx.tx_id = crate::model::compute_tx_id(&tx);
        }
        tx
    }

    /// The next transaction of the configured workload, simulated against `view`.
    pub fn next_tx(&mut self, view: &WorldState) -> (TxKind, Arc<Transaction>) {
        if !self.issued.is_empty() && self.cfg.duplicate_rate > 0.0 && self.rng.random_bool(self.cfg.duplicate_rate) {
            let i = self.rng.random_range(0..self.issued.len());
            return (TxKind::Duplicate, self.issued[i].clone());
        }
        let cross = self.cfg.cross_contract_mix > 0.0
            && self.cfg.contracts.len() > 1
            && self.rng.random_bool(self.cfg.cross_contract_mix);
        let contracts: Vec<ContractId> = if cross {
            let mut all = self.cfg.contracts.clone();
            let mut picked = Vec::new();
            for _ in 0..self.cfg.cross_contract_fanout.min(all.len()) {
                picked.push(all.swap_remove(self.rng.random_range(0..all.len())));
            }
            picked
        } else {
            vec![self.contract()]
        };

        let mut kind = None;
        let mut rw = RwSet::new();
        for c in &contracts {
            let roll: f64 = self.rng.random();
            let (k, part) = if roll < self.cfg.policy_update_rate {
                (TxKind::PolicyUpdate, self.policy_rwset(c, view))
            } else if roll < self.cfg.policy_update_rate + self.cfg.range_rate {
                (TxKind::Range, self.range_rwset(c, view))
            } else if roll < self.cfg.policy_update_rate + self.cfg.range_rate + self.cfg.delete_rate {
                (TxKind::Delete, self.delete_rwset(c, view))
            } else {
                self.base_rwset(c, view)
            };
            kind.get_or_insert(k);
            rw.reads.extend(part.reads);
            rw.writes.extend(part.writes);
            rw.ranges.extend(part.ranges);
        }
        let tx = Arc::new(self.endorse(rw, view));
        self.issued.push(tx.clone());
        (kind.expect("at least one contract"), tx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::oracle::SerialOracle;

    fn setup(cfg: &ScenarioConfig) -> (Generator, WorldState) {
        let mut g = Generator::new(cfg);
        let genesis = g.genesis();
        let mut o = SerialOracle::new(g.keys().clone());
        o.genesis(&genesis);
        (g, o.state().clone())
    }

    #[test]
    fn balance_is_read_only_and_amalgamate_moves_funds() {
        let cfg = ScenarioConfig {
            account_count: 10,
            ..Default::default()
        };
        let (mut g, view) = setup(&cfg);
        let c = ContractId::new("S0");
        let mut seen = BTreeSet::new();
        for _ in 0..500 {
            let (op, rw) = g.smallbank_rwset(&c, &view);
            let p = rw.into_proposal().unwrap();
            match op {
                SmallbankOp::Balance => {
                    assert!(p.write_set.is_empty());
                    assert_eq!(p.read_set.len(), 2);
                }
                SmallbankOp::Amalgamate => {
                    assert!(p.read_set.len() >= 2);
                    assert_eq!(p.write_set.len(), 2);
                }
                _ => assert!(!p.write_set.is_empty()),
            }
            for w in &p.write_set {
                assert_eq!(w.value.len(), 10);
            }
            seen.insert(op);
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn ycsb_reads_and_writes_two_keys() {
        let cfg = ScenarioConfig {
            workload: WorkloadKind::Ycsb,
            account_count: 1000,
            value_size_bytes: 1024,
            ..Default::default()
        };
        let (mut g, view) = setup(&cfg);
        let p = g.ycsb_rwset(&ContractId::new("S0"), &view).into_proposal().unwrap();
        assert_eq!(p.read_set.len(), 2);
        assert_eq!(p.write_set.len(), 2);
        assert!(p.read_set.iter().all(|r| r.version.is_some()));
        assert!(p.write_set.iter().all(|w| w.value.len() == 1024));
    }

    #[test]
    fn cross_contract_tx_invokes_fanout_contracts() {
        let cfg = ScenarioConfig {
            contracts: (0..4).map(|i| ContractId::new(format!("S{i}"))).collect(),
            cross_contract_mix: 1.0,
            cross_contract_fanout: 2,
            ..Default::default()
        };
        let (mut g, view) = setup(&cfg);
        for _ in 0..50 {
            let (_, tx) = g.next_tx(&view);
            assert_eq!(tx.invoked_contracts.len(), 2);
        }
    }

    #[test]
    fn same_seed_same_transactions() {
        let cfg = ScenarioConfig {
            workload: WorkloadKind::Mixed,
            range_rate: 0.1,
            delete_rate: 0.1,
            policy_update_rate: 0.05,
            duplicate_rate: 0.05,
            ..Default::default()
        };
        let (mut a, view) = setup(&cfg);
        let (mut b, _) = setup(&cfg);
        for _ in 0..100 {
            assert_eq!(a.next_tx(&view).1.tx_id, b.next_tx(&view).1.tx_id);
        }
    }
}
