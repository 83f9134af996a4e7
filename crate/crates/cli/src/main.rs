use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use eov_core::fixtures::{replay_distributed, replay_pipeline, snapshot_progression};
use eov_core::sim::{generate_stream, run_org, run_org_wall, run_scenario, DesParams, ScenarioConfig, WallParams};
use eov_core::{theoretical_max_tps, CommitMode, Digest, Filter, PeerId, PipelineConfig};

#[derive(Parser)]
#[command(name = "eov", version, about = "Execute-order-validate ledger simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write summary, digests and per-peer CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override a config field, e.g. `--set block_size=50`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a scenario and fail unless every org matches the serial validator.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Wall-clock throughput of one org under a baseline.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Baseline::Pipelined)]
        baseline: Baseline,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the reference traces of the built-in scenarios.
    Golden,
    /// Print `contract key version value-digest` per committed state, sorted
    /// by key, after a virtual-time run of one org.
    DumpState {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        org: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    /// One full peer validating and committing a block at a time.
    Serial,
    /// One full peer with validation overlapping commit.
    Pipelined,
    /// The configured peers with their filters.
    Sparse,
}

fn load(path: &Path, overrides: &[String]) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ScenarioConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    for o in overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override {o:?} is not KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(config: &Path, out: &Path, overrides: &[String]) -> Result<bool> {
    let cfg = load(config, overrides)?;
    let report = run_scenario(&cfg)?;
    report.write_to(out)?;
    print!("{}", report.summary());
    println!("wrote {}", out.display());
    Ok(report.consistent())
}

fn oracle_check(config: &Path, overrides: &[String]) -> Result<bool> {
    let cfg = load(config, overrides)?;
    let report = run_scenario(&cfg)?;
    for o in &report.orgs {
        let ok = o.matches_oracle && o.disagreements == 0 && o.state_digest == report.oracle_digest;
        println!(
            "{} {}: bitmap {} state {} disagreements {}",
            if ok { "OK  " } else { "FAIL" },
            o.org,
            if o.matches_oracle { "match" } else { "MISMATCH" },
            if o.state_digest == report.oracle_digest { "match" } else { "MISMATCH" },
            o.disagreements
        );
    }
    Ok(report.consistent())
}

fn bench(config: &Path, baseline: Baseline, overrides: &[String]) -> Result<()> {
    let cfg = load(config, overrides)?;
    let stream = generate_stream(&cfg);
    let full = vec![Filter::full(PeerId::new(format!("{}.P1", cfg.org_name(0))))];
    let (filters, serial) = match baseline {
        Baseline::Serial => (full, true),
        Baseline::Pipelined => (full, false),
        Baseline::Sparse => (cfg.filters(0), false),
    };
    let params = WallParams {
        pipeline: PipelineConfig {
            worker_count: cfg.worker_count,
            block_queue_capacity: cfg.queue_capacity,
            endorsement_verify_cost: Duration::from_micros(cfg.sig_cost_us),
            commit_cost_per_tx: Duration::from_micros(cfg.commit_cost_us),
            block_at_a_time: serial,
            ..Default::default()
        },
        mode: cfg.commit_mode,
        sparse_blocks: cfg.sparse_blocks_enabled,
        ..Default::default()
    };
    let out = run_org_wall(&stream.genesis, &stream.blocks, &stream.keys, &filters, &params)?;
    if out.org_bitmaps != stream.bitmaps {
        bail!("org flags differ from the serial validator");
    }
    println!(
        "baseline={} peers={} txs={} elapsed_ms={:.1} org_tps={:.0}",
        match baseline {
            Baseline::Serial => "serial",
            Baseline::Pipelined => "pipelined",
            Baseline::Sparse => "sparse",
        },
        out.peers.len(),
        stream.tx_count(),
        out.elapsed.as_secs_f64() * 1e3,
        out.org_tps()
    );
    for p in &out.peers {
        let m = &p.output.metrics;
        println!(
            "  {}: validated={} V_ms={:.3} C_ms={:.3} overlap_blocks={} max_tps={}",
            p.filter.peer_id,
            m.validated_txs,
            m.mean_validation().as_secs_f64() * 1e3,
            m.mean_commit().as_secs_f64() * 1e3,
            m.overlap_count(),
            theoretical_max_tps(cfg.block_size as u64, m.mean_validation(), m.mean_commit())
        );
    }
    Ok(())
}

fn golden() -> Result<()> {
    let p = replay_pipeline(3)?;
    println!("== single peer, 3 workers");
    for (f, t, k) in &p.edges {
        println!("edge {f} -> {t} {k}");
    }
    for (i, r) in p.rounds.iter().enumerate() {
        println!("round {}: {}", i + 1, r.join(" "));
    }
    let bits: Vec<String> = p.bitmap.iter().map(|(n, v)| format!("{n}:{}", v.label())).collect();
    println!("bitmap {}", bits.join(" "));

    let d = replay_distributed()?;
    println!("== three sparse peers");
    for m in &d.messages {
        println!(
            "{} -> {} {} {} {}",
            m.from,
            m.to.join(","),
            m.tx,
            m.contract,
            if m.valid { "valid" } else { "invalid" }
        );
    }
    let org: Vec<String> = d.org.iter().map(|(n, v)| format!("{n}:{}", v.label())).collect();
    println!("org {}", org.join(" "));

    println!("== snapshots");
    for (b, rows) in snapshot_progression().iter().enumerate() {
        let rows: Vec<String> = rows.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("block {}: {}", b + 1, rows.join(" "));
    }
    Ok(())
}

fn dump_state(config: &Path, org: usize, overrides: &[String]) -> Result<()> {
    let cfg = load(config, overrides)?;
    if org >= cfg.org_count {
        bail!("org {org} out of range, config has {}", cfg.org_count);
    }
    let stream = generate_stream(&cfg);
    let params = DesParams {
        mode: CommitMode::Deferred,
        ..DesParams::from_config(&cfg)
    };
    let out = run_org(&stream.genesis, &stream.blocks, &stream.keys, &cfg.filters(org), &params)?;
    let db = out.org_state();
    for (k, v) in db.iter() {
        println!(
            "{} {} {}:{} {}",
            k.contract,
            printable(&k.key),
            v.version.block,
            v.version.tx,
            Digest::of(&v.value).to_hex()
        );
    }
    println!("# {} keys, digest {}", db.len(), db.digest().to_hex());
    Ok(())
}

fn printable(b: &[u8]) -> String {
    match std::str::from_utf8(b) {
        Ok(s) if s.chars().all(|c| !c.is_control()) => s.to_string(),
        _ => format!("0x{}", hex_prefix(b)),
    }
}

fn hex_prefix(b: &[u8]) -> String {
    let shown: String = b.iter().take(16).map(|x| format!("{x:02x}")).collect();
    if b.len() > 16 {
        format!("{shown}..({} bytes)", b.len())
    } else {
        shown
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, overrides } => run(config, out, overrides),
        Command::OracleCheck { config, overrides } => oracle_check(config, overrides),
        Command::Bench {
            config,
            baseline,
            overrides,
        } => bench(config, *baseline, overrides).map(|_| true),
        Command::Golden => golden().map(|_| true),
        Command::DumpState { config, org, overrides } => dump_state(config, *org, overrides).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: results differ from the serial validator");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
