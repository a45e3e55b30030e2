//! The per-session channel contract.

mod session;
pub mod settlement;
mod tx;

pub use session::{
    Contract, ContractConfig, ContractEvent, ExecCtx, Session, SessionState, TxError, UploadRecord,
};
pub use settlement::{settle_levels, ChannelFailure, CloseSubmission, SettlementError, SettlementReport};
pub use tx::{share_message, HtlcOffer, OnChainTx, TxKind, TxPayload, UploadPayload};
