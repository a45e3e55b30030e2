use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use crosschannel::harness::{enumerate, load_config, run_scenario, sweep, ScenarioConfig};

#[derive(Parser)]
#[command(name = "crosschannel", version, about = "Deterministic cross-chain channel simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario end to end.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace here as JSON Lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the run metrics here as a JSON object.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Throughput over a range of channel counts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `start:end:step`, inclusive.
        #[arg(long, default_value = "10:100:10", value_parser = parse_range)]
        channels: ChannelRange,
    },
    /// Explore every close-phase delivery order up to a bound.
    Enumerate {
        #[arg(long)]
        config: PathBuf,
        /// Maximum choice points per run.
        #[arg(long)]
        bound: usize,
    },
}

#[derive(Clone, Debug)]
struct ChannelRange(Vec<u32>);

fn parse_range(s: &str) -> Result<ChannelRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let (start, end, step) = match nums[..] {
        [a] => (a, a, 1),
        [a, b] => (a, b, 1),
        [a, b, c] => (a, b, c),
        _ => return Err("expected start:end[:step]".into()),
    };
    if step == 0 || start == 0 || start > end {
        return Err("need 0 < start <= end and step > 0".into());
    }
    Ok(ChannelRange((start..=end).step_by(step as usize).collect()))
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

fn config(path: &PathBuf) -> Result<ScenarioConfig> {
    load_config(path).with_context(|| format!("loading {}", path.display()))
}

fn run(path: PathBuf, seed: Option<u64>, trace: Option<PathBuf>, metrics: Option<PathBuf>) -> Result<bool> {
    let mut cfg = config(&path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = run_scenario(&cfg)?;
    let m = &out.metrics;
    if let Some(p) = trace {
        fs::write(&p, out.world.trace_jsonl()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = metrics {
        let json = serde_json::to_string_pretty(m)?;
        fs::write(&p, json + "\n").with_context(|| format!("writing {}", p.display()))?;
    }

    println!("mode {:?}  baseline {:?}  seed {}  channels {}", m.mode, m.baseline, m.seed, m.channels);
    println!(
        "ticks {}  receipts {}/{}  receipts/tick {}",
        m.ticks,
        m.receipts_processed,
        m.receipts_expected,
        opt(m.receipts_per_tick.map(|r| format!("{r:.3}")))
    );
    println!("on-chain txs {} (failed {})", m.onchain_tx_total, m.failed_tx_count);
    for (kind, n) in &m.onchain_tx_count {
        println!("  {kind:<12} {n}");
    }
    for (class, n) in &m.atomicity {
        println!("outcome {class:?}: {n}");
    }
    for v in &m.violations {
        eprintln!("violation at event {}: {}", v.event_index, v.message);
    }
    if m.partial {
        eprintln!("run stopped at max_tick before finishing");
    }
    println!("trace digest {}", m.trace_digest);
    println!("invariants {}", if m.invariants_held { "held" } else { "VIOLATED" });
    Ok(m.invariants_held)
}

fn run_sweep(path: PathBuf, channels: Vec<u32>) -> Result<bool> {
    let cfg = config(&path)?;
    let r = sweep(&cfg, &channels)?;
    println!("{:>8}  {:>10}  {:>6}  {:>14}  invariants", "channels", "receipts", "ticks", "receipts/tick");
    for p in &r.points {
        println!(
            "{:>8}  {:>10}  {:>6}  {:>14}  {}",
            p.channels,
            p.receipts_processed,
            opt(p.receipt_ticks),
            format!("{:.3}", p.receipts_per_tick),
            if p.invariants_held { "held" } else { "VIOLATED" }
        );
    }
    println!(
        "fit: slope {:.4}  intercept {:.4}  R^2 {:.6}  single-channel rate {:.4}",
        r.slope, r.intercept, r.r_squared, r.single_channel_rate
    );
    Ok(r.points.iter().all(|p| p.invariants_held))
}

fn run_enumerate(path: PathBuf, bound: usize) -> Result<bool> {
    let cfg = config(&path)?;
    let r = enumerate(&cfg, bound)?;
    println!("runs {}  max choice points {}", r.runs, r.max_choice_points);
    println!("outcomes {:?}", r.outcomes);
    println!("invariant failures {}", r.invariant_failures);
    if let Some(w) = &r.split_witness {
        println!("split witness {w:?}");
    }
    println!("digest {}", r.trace_digest);
    Ok(r.invariant_failures == 0 && r.split_witness.is_none())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { config, seed, trace, metrics } => run(config, seed, trace, metrics),
        Cmd::Sweep { config, channels } => run_sweep(config, channels.0),
        Cmd::Enumerate { config, bound } => {
            if bound == 0 {
                Err(anyhow::anyhow!("--bound must be positive"))
            } else {
                run_enumerate(config, bound)
            }
        }
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
