//! Scenario configuration: a flat `key = value` text file.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::dist::CommitMode;
use crate::model::ContractId;
use crate::sparse::{Filter, PeerId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("config invalid: {field}: {reason}")]
pub struct ConfigInvalid {
    pub field: String,
    pub reason: String,
}

impl ConfigInvalid {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        ConfigInvalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadKind {
    Smallbank,
    Ycsb,
    /// Smallbank and YCSB interleaved, plus range scans, deletes, policy
    /// updates, duplicate submissions and under-endorsed transactions.
    Mixed,
}

impl FromStr for WorkloadKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smallbank" => Ok(WorkloadKind::Smallbank),
            "ycsb" => Ok(WorkloadKind::Ycsb),
            "mixed" => Ok(WorkloadKind::Mixed),
            _ => Err(format!("expected smallbank, ycsb or mixed, got {s:?}")),
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkloadKind::Smallbank => "smallbank",
            WorkloadKind::Ycsb => "ycsb",
            WorkloadKind::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    Virtual,
    Wall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub org_count: usize,
    pub peers_per_org: usize,
    /// Contracts per peer filter; 0 means every peer is a full peer.
    pub filters_per_peer: usize,
    pub contracts: Vec<ContractId>,
    pub block_size: usize,
    pub workload: WorkloadKind,
    pub zipf_s: f64,
    pub account_count: usize,
    /// Value size for YCSB writes; Smallbank balances are fixed at 10 bytes.
    pub value_size_bytes: usize,
    /// Offered load in transactions per second.
    pub tx_rate: u64,
    pub block_count: u64,
    pub worker_count: usize,
    pub seed: u64,
    pub sparse_blocks_enabled: bool,
    pub cross_contract_mix: f64,
    pub cross_contract_fanout: usize,
    /// How many blocks behind the tip endorsers simulate against.
    pub endorsement_lag: u64,
    pub commit_mode: CommitMode,
    pub clock: Clock,
    pub queue_capacity: usize,
    pub sig_cost_us: u64,
    pub commit_cost_us: u64,
    pub network_latency_us: u64,
    /// Per-peer slowdown factors, cycled over the peers of an org.
    pub peer_speeds: Vec<f64>,
    pub duplicate_rate: f64,
    pub bad_endorsement_rate: f64,
    pub policy_update_rate: f64,
    pub range_rate: f64,
    pub delete_rate: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            org_count: 1,
            peers_per_org: 1,
            filters_per_peer: 0,
            contracts: vec!["S0".into()],
            block_size: 100,
            workload: WorkloadKind::Smallbank,
            zipf_s: 0.5,
            account_count: 1000,
            value_size_bytes: 1024,
            tx_rate: 2000,
            block_count: 20,
            worker_count: 4,
            seed: 1,
            sparse_blocks_enabled: true,
            cross_contract_mix: 0.0,
            cross_contract_fanout: 2,
            endorsement_lag: 1,
            commit_mode: CommitMode::Deferred,
            clock: Clock::Virtual,
            queue_capacity: 8,
            sig_cost_us: 100,
            commit_cost_us: 50,
            network_latency_us: 500,
            peer_speeds: vec![1.0],
            duplicate_rate: 0.0,
            bad_endorsement_rate: 0.0,
            policy_update_rate: 0.0,
            range_rate: 0.0,
            delete_rate: 0.0,
        }
    }
}

fn parse<T: FromStr>(field: &str, v: &str) -> Result<T, ConfigInvalid>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| ConfigInvalid::new(field, format!("cannot parse {v:?}: {e}")))
}

fn fraction(field: &str, v: &str) -> Result<f64, ConfigInvalid> {
    let x: f64 = parse(field, v)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(ConfigInvalid::new(field, format!("{x} is outside [0, 1]")));
    }
    Ok(x)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigInvalid> {
        let mut c = ScenarioConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigInvalid::new(&format!("line {}", n + 1), "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(ConfigInvalid::new(k, "given more than once"));
            }
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, k: &str, v: &str) -> Result<(), ConfigInvalid> {
        match k {
            "org_count" => self.org_count = parse(k, v)?,
            "peers_per_org" => self.peers_per_org = parse(k, v)?,
            "filters_per_peer" => self.filters_per_peer = parse(k, v)?,
            "contracts" => {
                self.contracts = match v.parse::<usize>() {
                    Ok(n) => (0..n).map(|i| ContractId::new(format!("S{i}"))).collect(),
                    Err(_) => v.split(',').map(|s| ContractId::new(s.trim())).collect(),
                }
            }
            "block_size" => self.block_size = parse(k, v)?,
            "workload" => self.workload = v.parse().map_err(|e: String| ConfigInvalid::new(k, e))?,
            "zipf_s" => self.zipf_s = parse(k, v)?,
            "account_count" => self.account_count = parse(k, v)?,
            "value_size_bytes" => self.value_size_bytes = parse(k, v)?,
            "tx_rate" => self.tx_rate = parse(k, v)?,
            "block_count" => self.block_count = parse(k, v)?,
            "worker_count" => self.worker_count = parse(k, v)?,
            "seed" => self.seed = parse(k, v)?,
            "sparse_blocks_enabled" => self.sparse_blocks_enabled = parse(k, v)?,
            "cross_contract_mix" => self.cross_contract_mix = fraction(k, v)?,
            "cross_contract_fanout" => self.cross_contract_fanout = parse(k, v)?,
            "endorsement_lag" => self.endorsement_lag = parse(k, v)?,
            "commit_mode" => {
                self.commit_mode = match v {
                    "deferred" => CommitMode::Deferred,
                    "strawman" => CommitMode::Strawman,
                    _ => return Err(ConfigInvalid::new(k, format!("expected deferred or strawman, got {v:?}"))),
                }
            }
            "clock" => {
                self.clock = match v {
                    "virtual" => Clock::Virtual,
                    "wall" => Clock::Wall,
                    _ => return Err(ConfigInvalid::new(k, format!("expected virtual or wall, got {v:?}"))),
                }
            }
            "queue_capacity" => self.queue_capacity = parse(k, v)?,
            "sig_cost_us" => self.sig_cost_us = parse(k, v)?,
            "commit_cost_us" => self.commit_cost_us = parse(k, v)?,
            "network_latency_us" => self.network_latency_us = parse(k, v)?,
            "peer_speeds" => {
                self.peer_speeds = v
                    .split(',')
                    .map(|s| parse::<f64>(k, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "duplicate_rate" => self.duplicate_rate = fraction(k, v)?,
            "bad_endorsement_rate" => self.bad_endorsement_rate = fraction(k, v)?,
            "policy_update_rate" => self.policy_update_rate = fraction(k, v)?,
            "range_rate" => self.range_rate = fraction(k, v)?,
            "delete_rate" => self.delete_rate = fraction(k, v)?,
            _ => return Err(ConfigInvalid::new(k, "unknown field")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let positive = [
            ("org_count", self.org_count),
            ("peers_per_org", self.peers_per_org),
            ("block_size", self.block_size),
            ("account_count", self.account_count),
            ("worker_count", self.worker_count),
            ("queue_capacity", self.queue_capacity),
            ("cross_contract_fanout", self.cross_contract_fanout),
        ];
        for (f, v) in positive {
            if v == 0 {
                return Err(ConfigInvalid::new(f, "must be at least 1"));
            }
        }
        if self.tx_rate == 0 {
            return Err(ConfigInvalid::new("tx_rate", "must be at least 1"));
        }
        if self.block_count == 0 {
            return Err(ConfigInvalid::new("block_count", "must be at least 1"));
        }
        if self.contracts.is_empty() {
            return Err(ConfigInvalid::new("contracts", "at least one contract is required"));
        }
        let distinct: BTreeSet<_> = self.contracts.iter().collect();
        if distinct.len() != self.contracts.len() {
            return Err(ConfigInvalid::new("contracts", "names must be distinct"));
        }
        for c in &self.contracts {
            if c.as_str().is_empty() || c.is_policy_namespace() || c.as_str().contains(char::is_whitespace) {
                return Err(ConfigInvalid::new("contracts", format!("bad contract name {:?}", c.as_str())));
            }
        }
        if self.filters_per_peer > self.contracts.len() {
            return Err(ConfigInvalid::new(
                "filters_per_peer",
                format!("{} exceeds the {} contracts", self.filters_per_peer, self.contracts.len()),
            ));
        }
        if self.filters_per_peer > 0 && self.filters_per_peer * self.peers_per_org < self.contracts.len() {
            return Err(ConfigInvalid::new(
                "filters_per_peer",
                format!(
                    "{} peers with {} contracts each cannot cover {} contracts",
                    self.peers_per_org,
                    self.filters_per_peer,
                    self.contracts.len()
                ),
            ));
        }
        if self.cross_contract_mix > 0.0 && self.cross_contract_fanout > self.contracts.len() {
            return Err(ConfigInvalid::new(
                "cross_contract_fanout",
                format!("{} exceeds the {} contracts", self.cross_contract_fanout, self.contracts.len()),
            ));
        }
        if !(0.0..=10.0).contains(&self.zipf_s) {
            return Err(ConfigInvalid::new("zipf_s", format!("{} is outside [0, 10]", self.zipf_s)));
        }
        if self.peer_speeds.is_empty() || self.peer_speeds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(ConfigInvalid::new("peer_speeds", "every factor must be positive"));
        }
        if self.workload == WorkloadKind::Ycsb && self.value_size_bytes == 0 {
            return Err(ConfigInvalid::new("value_size_bytes", "must be at least 1"));
        }
        Ok(())
    }

    pub fn org_name(&self, org: usize) -> String {
        format!("Org{}", org + 1)
    }

    /// Filters of one organization's peers.
    pub fn filters(&self, org: usize) -> Vec<Filter> {
        (0..self.peers_per_org)
            .map(|p| {
                let id = PeerId::new(format!("{}.P{}", self.org_name(org), p + 1));
                if self.filters_per_peer == 0 {
                    Filter::full(id)
                } else {
                    let n = self.contracts.len();
                    let cs = (0..self.filters_per_peer).map(|j| self.contracts[(p * self.filters_per_peer + j) % n].clone());
                    Filter::sparse(id, cs).expect("filters_per_peer is positive")
                }
            })
            .collect()
    }

    pub fn peer_speed(&self, peer: usize) -> f64 {
        self.peer_speeds[peer % self.peer_speeds.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let c = ScenarioConfig::parse(
            "# sparse run\nworkload = ycsb\nzipf_s = 1.5\ncontracts = 8\npeers_per_org = 4\nfilters_per_peer = 2\ncommit_mode = strawman\npeer_speeds = 1, 2.5\n",
        )
        .unwrap();
        assert_eq!(c.workload, WorkloadKind::Ycsb);
        assert_eq!(c.contracts.len(), 8);
        assert_eq!(c.commit_mode, CommitMode::Strawman);
        assert_eq!(c.peer_speeds, vec![1.0, 2.5]);
        let f = c.filters(0);
        assert_eq!(f[3].contracts().unwrap().iter().map(|c| c.as_str()).collect::<Vec<_>>(), ["S6", "S7"]);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let e = ScenarioConfig::parse("block_size = ten").unwrap_err();
        assert_eq!(e.field, "block_size");
        let e = ScenarioConfig::parse("cross_contract_mix = 1.5").unwrap_err();
        assert_eq!(e.field, "cross_contract_mix");
        let e = ScenarioConfig::parse("colour = blue").unwrap_err();
        assert_eq!(e.field, "colour");
        let e = ScenarioConfig::parse("contracts = 8\npeers_per_org = 2\nfilters_per_peer = 2").unwrap_err();
        assert_eq!(e.field, "filters_per_peer");
        let e = ScenarioConfig::parse("seed = 1\nseed = 2").unwrap_err();
        assert_eq!(e.reason, "given more than once");
        let e = ScenarioConfig::parse("just words").unwrap_err();
        assert_eq!(e.field, "line 1");
    }
}
