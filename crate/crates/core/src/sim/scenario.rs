//! End-to-end scenario runs and their reports.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

use super::config::{Clock, ConfigInvalid, ScenarioConfig};
use super::des::{run_org, DesError, DesParams};
use super::stream::generate_stream;
use super::wall::{run_org_wall, WallParams};
use crate::digest::Digest;
use crate::metrics::{theoretical_max_tps, PeerMetrics};
use crate::model::TxValidity;
use crate::pipeline::{PipelineConfig, PipelineError};
use crate::sparse::PeerId;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigInvalid),
    #[error(transparent)]
    Des(#[from] DesError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerReport {
    pub org: String,
    pub peer: PeerId,
    pub metrics: PeerMetrics,
    pub bytes_received: u64,
    pub deferred: u64,
    pub resolved: u64,
    pub verdicts_sent: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrgReport {
    pub org: String,
    pub committed: u64,
    pub valid: u64,
    pub invalid: u64,
    /// Transactions committed with the deferred flag on some peer.
    pub deferred: u64,
    pub disagreements: usize,
    pub state_digest: Digest,
    /// Org flags equal the serial oracle's.
    pub matches_oracle: bool,
    pub elapsed: Duration,
}

impl OrgReport {
    pub fn committed_tps(&self) -> f64 {
        self.committed as f64 / self.elapsed.as_secs_f64().max(1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub peers: Vec<PeerReport>,
    pub orgs: Vec<OrgReport>,
    pub oracle_digest: Digest,
    pub oracle_valid: u64,
    pub issued: u64,
}

impl RunReport {
    /// True when every org agrees internally and with the oracle.
    pub fn consistent(&self) -> bool {
        self.orgs
            .iter()
            .all(|o| o.disagreements == 0 && o.matches_oracle && o.state_digest == self.oracle_digest)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "workload={} blocks={} block_size={} contracts={} orgs={} peers_per_org={} filters_per_peer={} clock={:?} mode={:?}",
            c.workload,
            c.block_count,
            c.block_size,
            c.contracts.len(),
            c.org_count,
            c.peers_per_org,
            c.filters_per_peer,
            c.clock,
            c.commit_mode
        );
        let _ = writeln!(s, "issued={} oracle_valid={} oracle_digest={}", self.issued, self.oracle_valid, self.oracle_digest.to_hex());
        for o in &self.orgs {
            let _ = writeln!(
                s,
                "org {}: committed={} valid={} invalid={} deferred={} disagreements={} matches_oracle={} elapsed_ms={:.3} tps={:.1} digest={}",
                o.org,
                o.committed,
                o.valid,
                o.invalid,
                o.deferred,
                o.disagreements,
                o.matches_oracle,
                o.elapsed.as_secs_f64() * 1e3,
                o.committed_tps(),
                o.state_digest.to_hex()
            );
        }
        for p in &self.peers {
            let m = &p.metrics;
            let _ = writeln!(
                s,
                "peer {}: validated={} committed_blocks={} bytes={} deferred={} resolved={} verdicts_sent={} stall_ms={:.3} V_ms={:.3} C_ms={:.3} max_tps={}",
                p.peer,
                m.validated_txs,
                m.samples.len(),
                p.bytes_received,
                p.deferred,
                p.resolved,
                p.verdicts_sent,
                m.remote_stall.as_secs_f64() * 1e3,
                m.mean_validation().as_secs_f64() * 1e3,
                m.mean_commit().as_secs_f64() * 1e3,
                theoretical_max_tps(self.config.block_size as u64, m.mean_validation(), m.mean_commit())
            );
        }
        s
    }

    /// Writes `summary.txt`, `digest.txt` and one `metrics-<peer>.csv` per peer.
    pub fn write_to(&self, dir: &Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.txt"), self.summary())?;
        let mut d = std::fs::File::create(dir.join("digest.txt"))?;
        writeln!(d, "oracle {}", self.oracle_digest.to_hex())?;
        for o in &self.orgs {
            writeln!(d, "{} {}", o.org, o.state_digest.to_hex())?;
        }
        for p in &self.peers {
            let f = std::fs::File::create(dir.join(format!("metrics-{}.csv", p.peer)))?;
            p.metrics.write_csv(f, self.config.block_size as u64)?;
        }
        Ok(())
    }
}

fn count(bitmaps: &[Vec<TxValidity>], pred: impl Fn(TxValidity) -> bool) -> u64 {
    bitmaps.iter().flatten().filter(|f| pred(**f)).count() as u64
}

/// Generates the configured stream and runs it through every org.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    cfg.validate()?;
    let stream = generate_stream(cfg);
    let mut peers = Vec::new();
    let mut orgs = Vec::new();
    for org in 0..cfg.org_count {
        let name = cfg.org_name(org);
        let filters = cfg.filters(org);
        let (bitmaps, disagreements, digest, elapsed, deferred) = match cfg.clock {
            Clock::Virtual => {
                let out = run_org(&stream.genesis, &stream.blocks, &stream.keys, &filters, &DesParams::from_config(cfg))?;
                for p in &out.peers {
                    let c = p.counters();
                    peers.push(PeerReport {
                        org: name.clone(),
                        peer: p.filter.peer_id.clone(),
                        metrics: p.metrics.clone(),
                        bytes_received: p.bytes_received,
                        deferred: c.deferred,
                        resolved: c.resolved,
                        verdicts_sent: c.verdicts_sent,
                    });
                }
                let deferred = out.deferred_distinct() as u64;
                (out.org_bitmaps.clone(), out.disagreements, out.org_state().digest(), out.end, deferred)
            }
            Clock::Wall => {
                let params = WallParams {
                    pipeline: PipelineConfig {
                        worker_count: cfg.worker_count,
                        block_queue_capacity: cfg.queue_capacity,
                        endorsement_verify_cost: Duration::from_micros(cfg.sig_cost_us),
                        commit_cost_per_tx: Duration::from_micros(cfg.commit_cost_us),
                        ..Default::default()
                    },
                    mode: cfg.commit_mode,
                    sparse_blocks: cfg.sparse_blocks_enabled,
                    ..Default::default()
                };
                let out = run_org_wall(&stream.genesis, &stream.blocks, &stream.keys, &filters, &params)?;
                let mut deferred = 0;
                for p in &out.peers {
                    let c = p.output.core.counters();
                    deferred += c.deferred;
                    peers.push(PeerReport {
                        org: name.clone(),
                        peer: p.filter.peer_id.clone(),
                        metrics: p.output.metrics.clone(),
                        bytes_received: p.bytes_received,
                        deferred: c.deferred,
                        resolved: c.resolved,
                        verdicts_sent: c.verdicts_sent,
                    });
                }
                (out.org_bitmaps.clone(), out.disagreements, out.org_state().digest(), out.elapsed, deferred)
            }
        };
        orgs.push(OrgReport {
            org: name,
            committed: count(&bitmaps, |_| true),
            valid: count(&bitmaps, |f| f.is_valid()),
            invalid: count(&bitmaps, |f| f.is_invalid()),
            deferred,
            disagreements,
            state_digest: digest,
            matches_oracle: bitmaps == stream.bitmaps,
            elapsed,
        });
    }
    Ok(RunReport {
        config: cfg.clone(),
        peers,
        orgs,
        oracle_digest: stream.final_state.digest(),
        oracle_valid: stream.valid_count() as u64,
        issued: stream.tx_count() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContractId;
    use crate::sim::config::WorkloadKind;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig {
            workload: WorkloadKind::Smallbank,
            contracts: (0..4).map(|i| ContractId::new(format!("S{i}"))).collect(),
            org_count: 2,
            peers_per_org: 2,
            filters_per_peer: 2,
            account_count: 50,
            block_size: 20,
            block_count: 10,
            cross_contract_mix: 0.3,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_report() {
        let a = run_scenario(&cfg()).unwrap();
        let b = run_scenario(&cfg()).unwrap();
        assert_eq!(a, b);
        assert!(a.consistent(), "{}", a.summary());
        assert_eq!(a.orgs[0].valid, a.orgs[1].valid);
    }

    #[test]
    fn report_files_written() {
        let r = run_scenario(&ScenarioConfig {
            org_count: 1,
            ..cfg()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write_to(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics-Org1.P1.csv")).unwrap();
        assert!(csv.starts_with("time,committedTps,validTps,queueLen,V_ms,C_ms,theoreticalMaxTps"));
        assert_eq!(csv.lines().count(), 11);
        assert!(std::fs::read_to_string(dir.path().join("summary.txt")).unwrap().contains("org Org1"));
    }
}
