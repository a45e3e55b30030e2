//! Running scenarios and summarising what happened.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Baseline, ConfigError, ScenarioConfig};
use super::world::{CoalitionStat, RunViolation, Steered, World};
use crate::channel::{Mode, PartyReport};
use crate::contract::SessionState;
use crate::crypto::hash;
use crate::simnet::{explore, run_until, EnumBounds, EnumError, Simulated};
use crate::types::{Amount, ChainId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Atomicity {
    BothSwapped,
    BothRefunded,
    Split,
    Incomplete,
}

pub fn classify(alpha: Option<SessionState>, beta: Option<SessionState>) -> Atomicity {
    use SessionState::*;
    let back = |s| matches!(s, Some(Refunded) | Some(Terminated));
    match (alpha, beta) {
        (Some(Success), Some(Success)) => Atomicity::BothSwapped,
        (a, b) if back(a) && back(b) => Atomicity::BothRefunded,
        (Some(Success), b) if back(b) => Atomicity::Split,
        (a, Some(Success)) if back(a) => Atomicity::Split,
        _ => Atomicity::Incomplete,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Outcome {
    pub session: u64,
    pub alpha: Option<SessionState>,
    pub beta: Option<SessionState>,
    pub atomicity: Atomicity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartyMetrics {
    pub name: String,
    #[serde(flatten)]
    pub report: PartyReport,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BalanceMetrics {
    pub name: String,
    pub chain: ChainId,
    pub genesis: Amount,
    #[serde(rename = "final")]
    pub end: Amount,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub mode: Mode,
    pub baseline: Baseline,
    pub channels: u32,
    pub receipts_per_channel: u64,
    /// Successful on-chain transactions by kind, both chains.
    pub onchain_tx_count: BTreeMap<String, u64>,
    pub onchain_tx_total: u64,
    pub failed_tx_count: u64,
    pub receipts_processed: u64,
    pub receipts_expected: u64,
    pub outcomes: Vec<Outcome>,
    pub atomicity: BTreeMap<Atomicity, u64>,
    pub ticks: Tick,
    /// Ticks from the first receipt sent to the last one delivered.
    pub receipt_ticks: Option<Tick>,
    pub receipts_per_tick: Option<f64>,
    pub partial: bool,
    pub parties: Vec<PartyMetrics>,
    pub balances: Vec<BalanceMetrics>,
    pub coalition: Vec<CoalitionStat>,
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub violations: Vec<RunViolation>,
    pub trace_digest: String,
    pub invariants_held: bool,
}

impl RunMetrics {
    pub fn tx_count(&self, kind: &str) -> u64 {
        self.onchain_tx_count.get(kind).copied().unwrap_or(0)
    }

    pub fn party(&self, name: &str) -> Option<&PartyReport> {
        self.parties.iter().find(|p| p.name == name).map(|p| &p.report)
    }
}

/// Runs `world` until every exchange settles or `max_tick` passes.
pub fn drive(world: &mut World) -> bool {
    let max = world.config().max_tick;
    let partial = run_until(world, |w| w.finished(), max).partial;
    if partial {
        world.report_undelivered();
    }
    partial
}

pub fn collect(world: &World, partial: bool) -> RunMetrics {
    let cfg = world.config();
    let mut onchain_tx_count = BTreeMap::new();
    let mut failed = 0;
    for c in ChainId::BOTH {
        for block in world.chain(c).blocks() {
            for (tx, bad) in block.txs.iter().zip(&block.failed) {
                if *bad {
                    failed += 1;
                } else {
                    *onchain_tx_count.entry(tx.kind().name().to_string()).or_insert(0) += 1;
                }
            }
        }
    }
    let outcomes: Vec<Outcome> = world
        .sessions()
        .iter()
        .map(|sid| {
            let alpha = world.chain(ChainId::Alpha).session_state(*sid);
            let beta = world.chain(ChainId::Beta).session_state(*sid);
            Outcome {
                session: sid.0,
                alpha,
                beta,
                atomicity: classify(alpha, beta),
            }
        })
        .collect();
    let mut atomicity = BTreeMap::new();
    for o in &outcomes {
        *atomicity.entry(o.atomicity).or_insert(0) += 1;
    }

    let n = cfg.workload.receipts;
    let receipts_processed = if cfg.baseline == Baseline::PlainHtlc {
        2 * atomicity.get(&Atomicity::BothSwapped).copied().unwrap_or(0)
    } else {
        world
            .parties()
            .iter()
            .filter(|p| p.is_level0())
            .map(|p| ChainId::BOTH.iter().map(|c| p.level0_received(*c) as u64).sum::<u64>())
            .sum()
    };
    let receipt_ticks = world.receipt_window().map(|(a, b)| b.saturating_sub(a).max(1));
    let receipts_per_tick = match (cfg.baseline, receipt_ticks) {
        (Baseline::CrossChannel, Some(t)) => Some(receipts_processed as f64 / t as f64),
        _ => None,
    };

    let mut parties = Vec::new();
    let mut balances = Vec::new();
    for p in world.parties().iter().filter(|p| p.is_level0()) {
        parties.push(PartyMetrics {
            name: p.name.clone(),
            report: p.report(),
        });
        for c in ChainId::BOTH {
            if let Some(a) = p.address(c) {
                balances.push(BalanceMetrics {
                    name: p.name.clone(),
                    chain: c,
                    genesis: world.genesis(c).get(&a).copied().unwrap_or(0),
                    end: world.chain(c).balance(&a).unwrap_or(0),
                });
            }
        }
    }

    let violations = world.violations().to_vec();
    let trace = world.trace_jsonl();
    let invariants_held = !partial
        && violations.is_empty()
        && outcomes
            .iter()
            .all(|o| matches!(o.atomicity, Atomicity::BothSwapped | Atomicity::BothRefunded));
    let stats = world.net_stats();
    RunMetrics {
        seed: cfg.seed,
        mode: cfg.mode,
        baseline: cfg.baseline,
        channels: cfg.topology.channels,
        receipts_per_channel: n,
        onchain_tx_total: onchain_tx_count.values().sum(),
        onchain_tx_count,
        failed_tx_count: failed,
        receipts_processed,
        receipts_expected: 2 * n * cfg.topology.channels as u64,
        outcomes,
        atomicity,
        ticks: world.now(),
        receipt_ticks,
        receipts_per_tick,
        partial,
        parties,
        balances,
        coalition: world.coalition().cloned().collect(),
        messages_sent: stats.sent,
        bytes_sent: stats.bytes,
        violations,
        trace_digest: hash(trace.as_bytes()).to_hex(),
        invariants_held,
    }
}

pub struct RunOutput {
    pub metrics: RunMetrics,
    pub world: World,
}

/// Validates `cfg`, then runs it to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    Ok(run_unchecked(cfg))
}

/// Runs `cfg` even if it breaks the protocol's parameter rules.
pub fn run_unchecked(cfg: &ScenarioConfig) -> RunOutput {
    let mut world = World::build(cfg);
    let partial = drive(&mut world);
    RunOutput {
        metrics: collect(&world, partial),
        world,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub channels: u32,
    pub receipts_processed: u64,
    pub receipt_ticks: Option<Tick>,
    pub receipts_per_tick: f64,
    pub invariants_held: bool,
    pub trace_digest: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub single_channel_rate: f64,
    pub points: Vec<SweepPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `slope / single_channel_rate - 1`.
    pub slope_deviation: f64,
}

/// Least-squares line through `(x, y)`: slope, intercept and R².
pub fn fit_line(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Runs `cfg` once per channel count, in parallel.
pub fn sweep(cfg: &ScenarioConfig, channels: &[u32]) -> Result<SweepReport, ConfigError> {
    cfg.validate()?;
    let point = |c: u32| {
        let mut cfg = cfg.clone();
        cfg.topology.channels = c;
        let m = run_unchecked(&cfg).metrics;
        SweepPoint {
            channels: c,
            receipts_processed: m.receipts_processed,
            receipt_ticks: m.receipt_ticks,
            receipts_per_tick: m.receipts_per_tick.unwrap_or(0.0),
            invariants_held: m.invariants_held,
            trace_digest: m.trace_digest,
        }
    };
    let single_channel_rate = point(1).receipts_per_tick;
    let points: Vec<SweepPoint> = channels.par_iter().map(|c| point(*c)).collect();
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.channels as f64, p.receipts_per_tick)).collect();
    let (slope, intercept, r_squared) = fit_line(&xy);
    Ok(SweepReport {
        single_channel_rate,
        slope_deviation: slope / single_channel_rate - 1.0,
        points,
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnumerationReport {
    pub runs: usize,
    pub max_choice_points: usize,
    pub outcomes: BTreeSet<Atomicity>,
    /// Runs that broke an invariant other than atomicity.
    pub invariant_failures: usize,
    /// Choice sequence of the first run whose outcome was a split.
    pub split_witness: Option<Vec<usize>>,
    /// Digest over every run's trace digest, in exploration order.
    pub trace_digest: String,
}

/// Runs `cfg` unsteered to the close phase, then replays every assignment
/// of the configured delays to close-phase messages from there.
pub fn enumerate(cfg: &ScenarioConfig, bound: usize) -> Result<EnumerationReport, EnumerateError> {
    cfg.validate()?;
    let mut base = World::build(cfg);
    run_until(&mut base, |w| w.close_phase_reached() || w.finished(), cfg.max_tick);
    base.steer(cfg.enumeration.delays.clone());
    let bounds = EnumBounds {
        max_choice_points: bound,
        max_runs: cfg.enumeration.max_runs,
    };
    let runs = explore(bounds, |choices| {
        let mut world = base.clone();
        let max = world.config().max_tick;
        let partial = {
            let mut steered = Steered {
                world: &mut world,
                choices,
            };
            run_until(&mut steered, |s| s.world.finished(), max).partial
        };
        if partial {
            world.report_undelivered();
        }
        let m = collect(&world, partial);
        (
            m.atomicity.keys().copied().collect::<Vec<_>>(),
            m.invariants_held || only_split(&m),
            m.trace_digest,
        )
    })?;
    let mut report = EnumerationReport {
        runs: runs.len(),
        max_choice_points: runs.iter().map(|r| r.0.len()).max().unwrap_or(0),
        outcomes: BTreeSet::new(),
        invariant_failures: 0,
        split_witness: None,
        trace_digest: String::new(),
    };
    let mut digests = Vec::new();
    for (path, (outcomes, ok, digest)) in runs {
        digests.extend_from_slice(digest.as_bytes());
        if outcomes.contains(&Atomicity::Split) && report.split_witness.is_none() {
            report.split_witness = Some(path);
        }
        report.outcomes.extend(outcomes);
        report.invariant_failures += usize::from(!ok);
    }
    report.trace_digest = hash(&digests).to_hex();
    Ok(report)
}

/// The run failed atomicity but nothing else.
fn only_split(m: &RunMetrics) -> bool {
    !m.partial && m.violations.is_empty()
}

#[derive(Debug, thiserror::Error)]
pub enum EnumerateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bounds(#[from] EnumError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_covers_every_pairing() {
        use SessionState::*;
        assert_eq!(classify(Some(Success), Some(Success)), Atomicity::BothSwapped);
        assert_eq!(classify(Some(Refunded), Some(Terminated)), Atomicity::BothRefunded);
        assert_eq!(classify(Some(Success), Some(Refunded)), Atomicity::Split);
        assert_eq!(classify(Some(Terminated), Some(Success)), Atomicity::Split);
        assert_eq!(classify(Some(Lock), Some(Success)), Atomicity::Incomplete);
        assert_eq!(classify(None, None), Atomicity::Incomplete);
    }

    #[test]
    fn fit_line_recovers_an_exact_line() {
        let pts: Vec<(f64, f64)> = (1..=10).map(|x| (x as f64, 3.0 * x as f64 + 2.0)).collect();
        let (m, b, r2) = fit_line(&pts);
        assert!((m - 3.0).abs() < 1e-9 && (b - 2.0).abs() < 1e-9 && (r2 - 1.0).abs() < 1e-12);
    }
}
