pub mod codec;
pub mod crypto;
pub mod vss;
pub mod proof;
pub mod channel;
pub mod contract;
pub mod types;
pub mod chain;
pub mod simnet;
pub mod harness;
