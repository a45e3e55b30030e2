//! Scenario description, loaded from JSON.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{MinerFlags, Mode, PartyFlags};
use crate::crypto::GroupParams;
use crate::simnet::Latency;
use crate::types::{Amount, Tick};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    CrossChannel,
    PlainHtlc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupChoice {
    #[default]
    Standard,
    Tiny,
}

impl GroupChoice {
    pub fn params(self) -> &'static GroupParams {
        match self {
            GroupChoice::Standard => GroupParams::standard(),
            GroupChoice::Tiny => GroupParams::tiny(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainTiming {
    pub alpha_block_interval: Tick,
    pub beta_block_interval: Tick,
}

impl Default for ChainTiming {
    fn default() -> Self {
        ChainTiming {
            alpha_block_interval: 2,
            beta_block_interval: 3,
        }
    }
}

/// T1 appeal window, T2 close window, T3/T4 unlock windows on α/β, T5
/// miner-assist window on α (counted from the α lock; `null` disables it).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timers {
    pub t1: Tick,
    pub t2: Tick,
    pub t3: Tick,
    pub t4: Tick,
    pub t5: Option<Tick>,
}

impl Default for Timers {
    fn default() -> Self {
        Timers {
            t1: 12,
            t2: 20,
            t3: 60,
            t4: 40,
            t5: Some(120),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VssConfig {
    pub t: u32,
    pub n: u32,
}

impl Default for VssConfig {
    fn default() -> Self {
        VssConfig { t: 2, n: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ByzantineConfig {
    pub ell: u32,
    pub n_node: u32,
    /// Indices of the Byzantine miners on each chain; sampled from the
    /// seed when absent.
    pub placement: Option<Vec<u32>>,
    pub behavior: MinerFlags,
}

impl Default for ByzantineConfig {
    fn default() -> Self {
        ByzantineConfig {
            ell: 1,
            n_node: 4,
            placement: None,
            behavior: MinerFlags::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    /// Independent channel pairs, each with its own session on both chains.
    pub channels: u32,
    /// Channel tree depth on each chain; 1 means level 0 only.
    pub levels: u32,
    /// Deposit of the paying party on each chain.
    pub funding: Amount,
    /// Deposit of the receiving party on each chain.
    pub counter_deposit: Amount,
    /// Receipts the funder sends inside each sub-channel.
    pub sub_receipts: u32,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            channels: 1,
            levels: 1,
            funding: 1000,
            counter_deposit: 0,
            sub_receipts: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AmountDist {
    Fixed { value: Amount },
    Uniform { min: Amount, max: Amount },
}

impl AmountDist {
    pub fn max(&self) -> Amount {
        match *self {
            AmountDist::Fixed { value } => value,
            AmountDist::Uniform { min, max } => max.max(min),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    /// Level-0 receipts per channel per chain.
    pub receipts: u64,
    pub amount: AmountDist,
    /// Defaults to 130 for CE and 1300 for FE/EIE.
    pub receipt_size_bytes: Option<u64>,
    pub plaintext_blocks: u32,
    pub block_bits: u32,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            receipts: 10,
            amount: AmountDist::Fixed { value: 1 },
            receipt_size_bytes: None,
            plaintext_blocks: 10,
            block_bits: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// From the start of the run.
    #[default]
    All,
    /// Once every level-0 session on both chains has reached Close.
    Htlc,
}

/// Latency for links between roles. Roles: `alpha`, `beta`, `S`, `R`,
/// `D` (sub-channel members), `miner`, `miner.alpha`, `miner.beta`, `*`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub from: String,
    pub to: String,
    pub latency: Latency,
    #[serde(default)]
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub latency: Latency,
    /// Bytes per tick on each directed link.
    pub bandwidth: Option<u64>,
    pub overrides: Vec<LinkOverride>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            latency: Latency::Fixed { ticks: 1 },
            bandwidth: None,
            overrides: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    /// Flags for every S (the α payer and initiator).
    pub sender: PartyFlags,
    /// Flags for every R.
    pub receiver: PartyFlags,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnumerationConfig {
    /// Delays an in-flight close-phase message may take.
    pub delays: Vec<Tick>,
    pub max_runs: usize,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        EnumerationConfig {
            delays: vec![1, 4],
            max_runs: 1 << 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub baseline: Baseline,
    pub seed: u64,
    pub group: GroupChoice,
    pub chains: ChainTiming,
    pub timers: Timers,
    /// Assisting miner's cut of the beneficiary's allocation, in basis points.
    pub assist_reward_bps: u32,
    pub vss: VssConfig,
    pub byzantine: ByzantineConfig,
    pub topology: Topology,
    pub workload: Workload,
    pub network: NetworkConfig,
    pub adversary: AdversaryConfig,
    pub enumeration: EnumerationConfig,
    pub max_tick: Tick,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: Mode::CE,
            baseline: Baseline::CrossChannel,
            seed: 1,
            group: GroupChoice::Standard,
            chains: ChainTiming::default(),
            timers: Timers::default(),
            assist_reward_bps: 100,
            vss: VssConfig::default(),
            byzantine: ByzantineConfig::default(),
            topology: Topology::default(),
            workload: Workload::default(),
            network: NetworkConfig::default(),
            adversary: AdversaryConfig::default(),
            enumeration: EnumerationConfig::default(),
            max_tick: 100_000,
        }
    }
}

/// One violated load-time constraint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated: {}", self.rule, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

impl ScenarioConfig {
    pub fn receipt_size(&self) -> u64 {
        self.workload.receipt_size_bytes.unwrap_or(match self.mode {
            Mode::CE => 130,
            Mode::FE | Mode::EIE => 1300,
        })
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, rule: &'static str, detail: String| {
            if !ok {
                out.push(Violation { rule, detail });
            }
        };
        let tm = &self.timers;
        check(tm.t3 > tm.t4, "T3 > T4", format!("t3={}, t4={}", tm.t3, tm.t4));
        if let Some(t5) = tm.t5 {
            check(t5 > tm.t3, "T5 > T3", format!("t5={t5}, t3={}", tm.t3));
        }
        check(
            tm.t1 > 0 && tm.t2 > 0 && tm.t4 > 0,
            "timers > 0",
            format!("t1={}, t2={}, t4={}", tm.t1, tm.t2, tm.t4),
        );
        let (t, n) = (self.vss.t, self.vss.n);
        let ell = self.byzantine.ell;
        let nodes = self.byzantine.n_node;
        check(t > ell, "t > ell", format!("t={t}, ell={ell}"));
        check(n >= t + ell, "n >= t + ell", format!("n={n}, t={t}, ell={ell}"));
        check(nodes == 3 * ell + 1, "N_node = 3*ell + 1", format!("n_node={nodes}, ell={ell}"));
        check(n <= nodes, "n <= N_node", format!("n={n}, n_node={nodes}"));
        self.structural(&mut out);
        out
    }

    /// Constraints the simulator itself needs, checked even when the
    /// protocol inequalities are deliberately waived.
    fn structural(&self, out: &mut Vec<Violation>) {
        let mut check = |ok: bool, rule: &'static str, detail: String| {
            if !ok {
                out.push(Violation { rule, detail });
            }
        };
        check(
            self.chains.alpha_block_interval > 0 && self.chains.beta_block_interval > 0,
            "block_interval > 0",
            format!("{:?}", self.chains),
        );
        check(self.topology.channels > 0, "channels > 0", "channels=0".into());
        check(self.topology.levels > 0, "levels > 0", "levels=0".into());
        check(self.vss.t >= 1 && self.vss.t <= self.vss.n, "1 <= t <= n", format!("{:?}", self.vss));
        check(self.vss.n <= self.byzantine.n_node, "n <= N_node", format!("{:?}", self.vss));
        let need = self.workload.receipts.saturating_mul(self.workload.amount.max());
        check(
            self.topology.funding >= need,
            "funding >= receipts * max amount",
            format!("funding={}, needed={need}", self.topology.funding),
        );
        if let AmountDist::Uniform { min, max } = self.workload.amount {
            check(min <= max, "amount min <= max", format!("min={min}, max={max}"));
        }
        if let Some(p) = &self.byzantine.placement {
            let mut ids = p.clone();
            ids.sort_unstable();
            ids.dedup();
            check(
                ids.len() == p.len() && p.iter().all(|i| *i < self.byzantine.n_node),
                "placement indexes distinct miners",
                format!("{p:?}"),
            );
        }
        check(
            self.workload.block_bits > 0 && self.workload.plaintext_blocks > 0,
            "plaintext shape",
            format!("{:?}", self.workload),
        );
        check(!self.enumeration.delays.is_empty(), "enumeration delays", "empty".into());
    }

    /// Structural checks only; lets negative controls run with `t <= ell`.
    pub fn structural_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        self.structural(&mut out);
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg = Self::from_json_unchecked(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_unchecked(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    ScenarioConfig::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(cfg: &ScenarioConfig) -> Vec<&'static str> {
        cfg.violations().into_iter().map(|v| v.rule).collect()
    }

    #[test]
    fn defaults_are_valid() {
        assert!(ScenarioConfig::default().violations().is_empty());
    }

    #[test]
    fn valid_eie_config_loads() {
        let cfg = ScenarioConfig::from_json(
            r#"{"mode":"EIE","vss":{"t":3,"n":5},"byzantine":{"ell":2,"n_node":7}}"#,
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::EIE);
        assert_eq!(cfg.receipt_size(), 1300);
    }

    #[test]
    fn equal_unlock_windows_cite_the_t3_t4_rule() {
        let mut cfg = ScenarioConfig::default();
        cfg.timers.t4 = cfg.timers.t3;
        assert_eq!(rules(&cfg), vec!["T3 > T4"]);
        let msg = ScenarioConfig::from_json(r#"{"timers":{"t3":40,"t4":40}}"#)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("T3 > T4"), "{msg}");
    }

    #[test]
    fn threshold_at_ell_cites_t_gt_ell() {
        let mut cfg = ScenarioConfig::default();
        cfg.vss = VssConfig { t: 1, n: 3 };
        assert_eq!(rules(&cfg), vec!["t > ell"]);
    }

    #[test]
    fn node_count_and_share_count_rules() {
        let mut cfg = ScenarioConfig::default();
        cfg.byzantine.n_node = 5;
        assert_eq!(rules(&cfg), vec!["N_node = 3*ell + 1"]);
        let mut cfg = ScenarioConfig::default();
        cfg.vss = VssConfig { t: 3, n: 3 };
        assert_eq!(rules(&cfg), vec!["n >= t + ell"]);
        let mut cfg = ScenarioConfig::default();
        cfg.timers.t5 = Some(cfg.timers.t3);
        assert_eq!(rules(&cfg), vec!["T5 > T3"]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ScenarioConfig::from_json_unchecked(r#"{"mdoe":"CE"}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ScenarioConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg);
    }
}
