//! Per-peer timing samples, throughput figures and the CSV export.

use std::io::Write;
use std::time::Duration;

/// Validate-plus-commit ceiling in transactions per second for blocks of
/// `block_size` taking `validation` to validate and `commit` to commit.
/// Computed in whole microseconds with integer division.
pub fn theoretical_max_tps(block_size: u64, validation: Duration, commit: Duration) -> u64 {
    let us = (validation + commit).as_micros() as u64;
    if us == 0 {
        return 0;
    }
    block_size * 1_000_000 / us
}

/// Timing of one block on one peer, as offsets from the start of the run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockSample {
    pub number: u64,
    pub txs: u64,
    pub valid: u64,
    pub deferred: u64,
    pub validation_start: Option<Duration>,
    pub validation_end: Option<Duration>,
    pub commit_start: Duration,
    pub commit_end: Duration,
    /// Blocks waiting in the queue when the commit finished.
    pub queue_len: usize,
}

impl BlockSample {
    /// Span from the first validation start to the last validation end.
    pub fn validation_time(&self) -> Duration {
        match (self.validation_start, self.validation_end) {
            (Some(s), Some(e)) if e > s => e - s,
            _ => Duration::ZERO,
        }
    }

    pub fn commit_time(&self) -> Duration {
        self.commit_end.saturating_sub(self.commit_start)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PeerMetrics {
    pub samples: Vec<BlockSample>,
    /// Transactions stored with a flag, excluding out-of-scope slots.
    pub committed_txs: u64,
    pub valid_txs: u64,
    /// Time the committer spent waiting on verdicts from other peers.
    pub remote_stall: Duration,
    /// Validator-side work: transactions validated and signatures checked.
    pub validated_txs: u64,
    pub signatures_checked: u64,
}

impl PeerMetrics {
    pub fn record(&mut self, s: BlockSample) {
        self.committed_txs += s.txs;
        self.valid_txs += s.valid;
        self.samples.push(s);
    }

    /// Offset of the last commit, or zero.
    pub fn elapsed(&self) -> Duration {
        self.samples.last().map_or(Duration::ZERO, |s| s.commit_end)
    }

    pub fn committed_tps(&self) -> f64 {
        per_second(self.committed_txs, self.elapsed())
    }

    pub fn valid_tps(&self) -> f64 {
        per_second(self.valid_txs, self.elapsed())
    }

    pub fn mean_validation(&self) -> Duration {
        mean(self.samples.iter().map(|s| s.validation_time()))
    }

    pub fn mean_commit(&self) -> Duration {
        mean(self.samples.iter().map(|s| s.commit_time()))
    }

    /// True if some block's validation started before the previous block's
    /// commit finished.
    pub fn validation_overlaps_commit(&self) -> bool {
        self.overlap_count() > 0
    }

    pub fn overlap_count(&self) -> usize {
        self.samples
            .windows(2)
            .filter(|w| w[1].validation_start.is_some_and(|s| s < w[0].commit_end))
            .count()
    }

    /// One CSV row per committed block, with cumulative rates.
    pub fn write_csv<W: Write>(&self, out: W, block_size: u64) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "committedTps", "validTps", "queueLen", "V_ms", "C_ms", "theoreticalMaxTps"])?;
        let (mut committed, mut valid) = (0u64, 0u64);
        for s in &self.samples {
            committed += s.txs;
            valid += s.valid;
            let v = s.validation_time();
            let c = s.commit_time();
            w.write_record([
                format!("{:.6}", s.commit_end.as_secs_f64()),
                format!("{:.1}", per_second(committed, s.commit_end)),
                format!("{:.1}", per_second(valid, s.commit_end)),
                s.queue_len.to_string(),
                format!("{:.3}", v.as_secs_f64() * 1e3),
                format!("{:.3}", c.as_secs_f64() * 1e3),
                theoretical_max_tps(block_size, v, c).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn per_second(n: u64, d: Duration) -> f64 {
    if d.is_zero() {
        0.0
    } else {
        n as f64 / d.as_secs_f64()
    }
}

fn mean(it: impl Iterator<Item = Duration>) -> Duration {
    let (mut sum, mut n) = (Duration::ZERO, 0u32);
    for d in it {
        sum += d;
        n += 1;
    }
    if n == 0 {
        Duration::ZERO
    } else {
        sum / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceiling_for_reference_block() {
        assert_eq!(theoretical_max_tps(100, Duration::from_millis(19), Duration::from_millis(36)), 1818);
        assert_eq!(theoretical_max_tps(100, Duration::from_millis(86), Duration::from_millis(55)), 709);
        assert_eq!(theoretical_max_tps(100, Duration::ZERO, Duration::ZERO), 0);
    }

    fn sample(n: u64, vs: u64, ve: u64, cs: u64, ce: u64) -> BlockSample {
        BlockSample {
            number: n,
            txs: 10,
            valid: 8,
            validation_start: Some(Duration::from_millis(vs)),
            validation_end: Some(Duration::from_millis(ve)),
            commit_start: Duration::from_millis(cs),
            commit_end: Duration::from_millis(ce),
            ..Default::default()
        }
    }

    #[test]
    fn overlap_detection() {
        let mut m = PeerMetrics::default();
        m.record(sample(1, 0, 10, 10, 20));
        m.record(sample(2, 20, 30, 30, 40));
        assert!(!m.validation_overlaps_commit());
        m.record(sample(3, 35, 45, 45, 50));
        assert_eq!(m.overlap_count(), 1);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut m = PeerMetrics::default();
        m.record(sample(1, 0, 19, 19, 55));
        let mut buf = Vec::new();
        m.write_csv(&mut buf, 100).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "time,committedTps,validTps,queueLen,V_ms,C_ms,theoreticalMaxTps");
        assert_eq!(lines[1], "0.055000,181.8,145.5,0,19.000,36.000,1818");
    }
}
