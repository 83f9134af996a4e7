//! Endorsement-policy and serializability checks.
//!
//! Validation is split in two: [`observe`] copies everything the checks
//! need out of the state engine, and [`judge`] decides without touching
//! shared state, so the expensive signature work runs outside any lock.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{ContractId, EndorsementPolicy, KeyRegistry, StateKey, Transaction, TxValidity, Version};
use crate::sparse::Filter;
use crate::state::StateEngine;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("no endorsement policy stored for {0}")]
    UnknownPolicy(ContractId),
}

/// State seen by one transaction at validation time, restricted to a scope.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Observed {
    /// Raw policy bytes for each in-scope invoked contract.
    pub policies: BTreeMap<ContractId, Option<Vec<u8>>>,
    /// Current version for each in-scope read, in read-set order.
    pub reads: Vec<(usize, Option<Version>)>,
    /// Re-executed result for each in-scope range query.
    pub ranges: Vec<(usize, Vec<(StateKey, Version)>)>,
}

pub fn observe(tx: &Transaction, scope: &Filter, state: &StateEngine) -> Observed {
    let policies = tx
        .invoked_contracts
        .iter()
        .filter(|c| scope.admits_contract(c.as_str()))
        .map(|c| (c.clone(), state.read_through(&StateKey::policy(c)).map(|(v, _)| v.to_vec())))
        .collect();
    let reads = tx
        .read_set
        .iter()
        .enumerate()
        .filter(|(_, r)| scope.admits_key(&r.key))
        .map(|(i, r)| (i, state.read_version(&r.key)))
        .collect();
    let ranges = tx
        .range_queries
        .iter()
        .enumerate()
        .filter(|(_, rq)| scope.admits_contract(rq.contract.as_str()))
        .map(|(i, rq)| {
            let rows = state
                .range_through(&rq.contract, &rq.start_key, rq.end_key.as_deref())
                .into_iter()
                .map(|(k, _, v)| (k, v))
                .collect();
            (i, rows)
        })
        .collect();
    Observed {
        policies,
        reads,
        ranges,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgement {
    pub validity: TxValidity,
    /// Outcome per in-scope invoked contract.
    pub per_contract: BTreeMap<ContractId, TxValidity>,
    pub signatures_checked: usize,
}

/// Outcome of one contract's part: serializability first, then the policy.
fn combine(serializable: bool, endorsed: bool) -> TxValidity {
    if !serializable {
        TxValidity::InvalidSerializability
    } else if !endorsed {
        TxValidity::InvalidEndorsement
    } else {
        TxValidity::Valid
    }
}

/// Overall outcome: any serializability failure wins over an endorsement one.
pub fn merge_outcomes(outcomes: impl IntoIterator<Item = TxValidity>) -> TxValidity {
    let mut out = TxValidity::Valid;
    for v in outcomes {
        match v {
            TxValidity::InvalidSerializability => return v,
            TxValidity::Valid => {}
            other => out = other,
        }
    }
    out
}

/// Checks `policy` against the endorsements. Returns `(satisfied, signatures verified)`.
pub fn policy_satisfied(policy: &EndorsementPolicy, tx: &Transaction, response: &[u8], keys: &KeyRegistry) -> (bool, usize) {
    let mut ok: BTreeSet<&str> = BTreeSet::new();
    let mut checked = 0;
    for e in &tx.endorsements {
        if ok.len() as u32 >= policy.threshold {
            break;
        }
        if !policy.required_orgs.contains(&e.org) || ok.contains(e.org.as_str()) {
            continue;
        }
        checked += 1;
        if keys.verify(&e.org, response, &e.signature) {
            ok.insert(e.org.as_str());
        }
    }
    (ok.len() as u32 >= policy.threshold, checked)
}

pub fn judge(tx: &Transaction, obs: &Observed, keys: &KeyRegistry) -> Judgement {
    let mut serializable: BTreeMap<ContractId, bool> = obs.policies.keys().map(|c| (c.clone(), true)).collect();
    for (i, current) in &obs.reads {
        let r = &tx.read_set[*i];
        if r.version != *current {
            *serializable.entry(r.key.scope()).or_insert(true) = false;
        }
    }
    for (i, rows) in &obs.ranges {
        let rq = &tx.range_queries[*i];
        let same = rows.len() == rq.observed_reads.len()
            && rows
                .iter()
                .zip(&rq.observed_reads)
                .all(|((k, v), o)| *k == o.key && Some(*v) == o.version);
        if !same {
            *serializable.entry(rq.contract.clone()).or_insert(true) = false;
        }
    }

    let response = tx.response_bytes();
    let mut per_contract = BTreeMap::new();
    let mut signatures_checked = 0;
    for (c, ser) in &serializable {
        let endorsed = if !*ser {
            false
        } else {
            match obs.policies.get(c).cloned().flatten().map(|b| EndorsementPolicy::from_bytes(&b)) {
                Some(Ok(p)) => {
                    let (ok, n) = policy_satisfied(&p, tx, &response, keys);
                    signatures_checked += n;
                    ok
                }
                _ => false,
            }
        };
        per_contract.insert(c.clone(), combine(*ser, endorsed));
    }
    Judgement {
        validity: merge_outcomes(per_contract.values().copied()),
        per_contract,
        signatures_checked,
    }
}

/// True iff every in-scope invoked contract's policy is met.
pub fn validate_endorsement(
    tx: &Transaction,
    state: &StateEngine,
    keys: &KeyRegistry,
    scope: &Filter,
) -> Result<bool, ValidationError> {
    let response = tx.response_bytes();
    for c in tx.invoked_contracts.iter().filter(|c| scope.admits_contract(c.as_str())) {
        let raw = state
            .read_through(&StateKey::policy(c))
            .ok_or_else(|| ValidationError::UnknownPolicy(c.clone()))?;
        let policy = EndorsementPolicy::from_bytes(raw.0).map_err(|_| ValidationError::UnknownPolicy(c.clone()))?;
        if !policy_satisfied(&policy, tx, &response, keys).0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// True iff every in-scope read and range query still matches current state.
pub fn validate_serializability(tx: &Transaction, state: &StateEngine, scope: &Filter) -> bool {
    let obs = observe(tx, scope, state);
    obs.reads.iter().all(|(i, v)| tx.read_set[*i].version == *v)
        && obs.ranges.iter().all(|(i, rows)| {
            let rq = &tx.range_queries[*i];
            rows.len() == rq.observed_reads.len()
                && rows
                    .iter()
                    .zip(&rq.observed_reads)
                    .all(|((k, v), o)| *k == o.key && Some(*v) == o.version)
        })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::digest::Digest;
    use crate::model::{seal_block, OrgId, RwSet, TxRef, WriteEntry};
    use crate::sparse::PeerId;

    fn orgs() -> (OrgId, OrgId, KeyRegistry) {
        let a = OrgId::new("A");
        let b = OrgId::new("B");
        let keys = KeyRegistry::derive(1, [&a, &b]);
        (a, b, keys)
    }

    fn policy_tx(c: &str, orgs: &[&OrgId], threshold: u32) -> Arc<Transaction> {
        let p = EndorsementPolicy::new(c.into(), orgs.iter().map(|o| (*o).clone()), threshold).unwrap();
        Arc::new(
            RwSet::new()
                .write(StateKey::policy(&c.into()), p.to_bytes())
                .into_proposal()
                .unwrap()
                .into_transaction(vec![]),
        )
    }

    fn engine(with: Vec<Arc<Transaction>>) -> StateEngine {
        let mut e = StateEngine::in_memory(Filter::full(PeerId::new("p")));
        e.commit_genesis(seal_block(0, Digest::ZERO, with).unwrap()).unwrap();
        e
    }

    fn full() -> Filter {
        Filter::full(PeerId::new("p"))
    }

    #[test]
    fn two_of_two_policy() {
        let (a, b, keys) = orgs();
        let e = engine(vec![policy_tx("S1", &[&a, &b], 2)]);
        let p = RwSet::new().write(StateKey::new("S1", b"k".to_vec()), "v").into_proposal().unwrap();
        let both = p.clone().endorse(&keys, [&a, &b]);
        let one = p.endorse(&keys, [&a]);
        assert_eq!(validate_endorsement(&both, &e, &keys, &full()), Ok(true));
        assert_eq!(validate_endorsement(&one, &e, &keys, &full()), Ok(false));
    }

    #[test]
    fn every_invoked_policy_must_hold() {
        let (a, b, keys) = orgs();
        let e = engine(vec![policy_tx("S1", &[&a], 1), policy_tx("S2", &[&b], 1)]);
        let tx = RwSet::new()
            .write(StateKey::new("S1", b"k".to_vec()), "v")
            .write(StateKey::new("S2", b"k".to_vec()), "v")
            .into_proposal()
            .unwrap()
            .endorse(&keys, [&a]);
        assert_eq!(validate_endorsement(&tx, &e, &keys, &full()), Ok(false));
        let only_s1 = Filter::sparse(PeerId::new("p"), ["S1".into()]).unwrap();
        assert_eq!(validate_endorsement(&tx, &e, &keys, &only_s1), Ok(true));
    }

    #[test]
    fn missing_policy_is_an_error() {
        let (a, _, keys) = orgs();
        let e = engine(vec![policy_tx("S1", &[&a], 1)]);
        let tx = RwSet::new()
            .write(StateKey::new("S9", b"k".to_vec()), "v")
            .into_proposal()
            .unwrap()
            .endorse(&keys, [&a]);
        assert_eq!(
            validate_endorsement(&tx, &e, &keys, &full()),
            Err(ValidationError::UnknownPolicy("S9".into()))
        );
    }

    #[test]
    fn stale_read_after_dirty_write_fails() {
        let (a, _, keys) = orgs();
        let k = StateKey::new("S1", b"k1".to_vec());
        let seed = Arc::new(RwSet::new().write(k.clone(), "v1").into_proposal().unwrap().into_transaction(vec![]));
        let mut e = engine(vec![policy_tx("S1", &[&a], 1), seed]);
        let tx = RwSet::new()
            .read(k.clone(), Some(Version::new(0, 1)))
            .write(StateKey::new("S1", b"k6".to_vec()), "v2")
            .into_proposal()
            .unwrap()
            .endorse(&keys, [&a]);
        assert!(validate_serializability(&tx, &e, &full()));
        e.apply_dirty(TxRef::new(1, 0), &[WriteEntry::put(k, b"v2".to_vec())]).unwrap();
        assert!(!validate_serializability(&tx, &e, &full()));
        let j = judge(&tx, &observe(&tx, &full(), &e), &keys);
        assert_eq!(j.validity, TxValidity::InvalidSerializability);
        assert_eq!(j.signatures_checked, 0);
    }

    #[test]
    fn scoped_check_ignores_foreign_reads() {
        let (a, _, keys) = orgs();
        let e = engine(vec![policy_tx("S1", &[&a], 1), policy_tx("S2", &[&a], 1)]);
        let tx = RwSet::new()
            .read(StateKey::new("S2", b"x".to_vec()), Some(Version::new(9, 9)))
            .write(StateKey::new("S1", b"y".to_vec()), "v")
            .into_proposal()
            .unwrap()
            .endorse(&keys, [&a]);
        let s1 = Filter::sparse(PeerId::new("p"), ["S1".into()]).unwrap();
        let j = judge(&tx, &observe(&tx, &s1, &e), &keys);
        assert_eq!(j.validity, TxValidity::Valid);
        let j = judge(&tx, &observe(&tx, &full(), &e), &keys);
        assert_eq!(j.per_contract[&ContractId::new("S2")], TxValidity::InvalidSerializability);
        assert_eq!(j.per_contract[&ContractId::new("S1")], TxValidity::Valid);
    }
}
