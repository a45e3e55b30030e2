//! What actors see and what they ask the simulation to do.

use serde::{Deserialize, Serialize};

use super::OffChain;
use crate::contract::{ContractEvent, OnChainTx};
use crate::simnet::NodeId;
use crate::types::{ChainId, SessionId, Tick};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Currency for currency.
    #[default]
    CE,
    /// Encrypted information for currency; the HTLC preimage is the key.
    FE,
    /// Encrypted information both ways, keys recovered through miners.
    EIE,
}

/// A contract event as delivered to a subscriber.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Notice {
    pub chain: ChainId,
    pub session: SessionId,
    pub tick: Tick,
    pub event: ContractEvent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Send { to: NodeId, msg: OffChain },
    Submit(OnChainTx),
    Wake { at: Tick, tag: u64 },
    /// Free-form observation for the trace.
    Note(String),
}

#[derive(Debug)]
pub struct Ctx {
    pub now: Tick,
    pub out: Vec<Action>,
}

impl Ctx {
    pub fn new(now: Tick) -> Self {
        Ctx { now, out: Vec::new() }
    }

    pub fn send(&mut self, to: NodeId, msg: OffChain) {
        self.out.push(Action::Send { to, msg });
    }

    pub fn submit(&mut self, tx: OnChainTx) {
        self.out.push(Action::Submit(tx));
    }

    pub fn wake(&mut self, at: Tick, tag: u64) {
        self.out.push(Action::Wake { at, tag });
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.out.push(Action::Note(s.into()));
    }
}

/// Deviations a channel party may take.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartyFlags {
    /// Lock but never reveal the preimage.
    pub withhold_pre: bool,
    /// Deal corrupted shares to every bound miner.
    pub fake_key_share: bool,
    /// Claim the counterparty's whole balance in the level-0 final state.
    pub inflate_final_state: bool,
    /// Send one receipt beyond the channel balance.
    pub overspend: bool,
    /// Never submit Close.
    pub refuse_close: bool,
    /// Issue a second `Sr` over the funding receipt and submit it.
    pub duplicate_sr: bool,
    /// Send a corrupted proof in the exchange.
    pub invalid_proof: bool,
}

/// Deviations a Byzantine miner may take.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerFlags {
    /// Keep shares back at recovery time.
    pub withhold_shares: bool,
    /// Never submit a preimage on a party's behalf.
    pub skip_assist: bool,
    /// Never appeal a fake share.
    pub skip_appeal: bool,
    /// Appeal with a share signed for an earlier serial number.
    pub stale_sn_replay: bool,
}

impl Default for MinerFlags {
    fn default() -> Self {
        MinerFlags {
            withhold_shares: true,
            skip_assist: true,
            skip_appeal: true,
            stale_sn_replay: false,
        }
    }
}
