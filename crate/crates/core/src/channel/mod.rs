//! Off-chain channel layer: receipts, sub-channel authorisations and the
//! party actors that exchange them.

mod actor;
mod ledger;
mod messages;
mod miner;
mod party;
mod receipt;

pub use actor::{Action, Ctx, MinerFlags, Mode, Notice, PartyFlags};
pub use ledger::{ChannelLedger, LedgerError};
pub use messages::{ExchangeMsg, OffChain, ShareMsg};
pub use miner::MinerActor;
pub use party::{ChildPlan, Commodity, ExchangeSetup, PartyActor, PartyReport, SideRole, SideSetup};
pub use receipt::{
    fold_channel, ChannelPath, ChannelSpec, Equivocation, FinalState, FoldResult, Receipt, SubReceipt,
};
