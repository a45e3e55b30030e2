//! In-memory chain: accounts, a mempool, periodic blocks and the contract.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::codec::{CodecError, Decode, Encoder};
use crate::contract::{Contract, ContractConfig, ContractEvent, ExecCtx, OnChainTx, Session, SessionState, TxKind};
use crate::crypto::{hash, Address, Digest};
use crate::types::{Amount, ChainId, SessionId, Tick};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmitError {
    #[error("transaction addressed to {0}")]
    WrongChain(ChainId),
    #[error("bad signature")]
    BadSignature,
    #[error("unknown sender")]
    UnknownSender,
    #[error("undecodable transaction: {0}")]
    Decode(#[from] CodecError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("unknown account")]
    UnknownAccount,
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
}

#[derive(Clone, Debug)]
pub struct ChainConfig {
    pub id: ChainId,
    pub block_interval: Tick,
    pub miners: Vec<Address>,
    pub genesis: BTreeMap<Address, Amount>,
    pub contract: ContractConfig,
}

/// One entry of the chain's event log. Serialises as a JSON object whose
/// first six keys are stable.
#[derive(Clone, Debug, Serialize)]
pub struct ChainEvent {
    pub tick: Tick,
    pub chain_id: ChainId,
    pub block: u64,
    /// `None` for deadline-driven events.
    pub tx_kind: Option<TxKind>,
    pub session_id: SessionId,
    pub result: String,
    #[serde(skip)]
    pub sender: Option<Address>,
    #[serde(skip)]
    pub detail: Option<ContractEvent>,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub height: u64,
    pub tick: Tick,
    pub prev: Digest,
    pub hash: Digest,
    pub txs: Vec<OnChainTx>,
    pub failed: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Chain {
    id: ChainId,
    block_interval: Tick,
    miners: Vec<Address>,
    accounts: BTreeMap<Address, Amount>,
    contract: Contract,
    mempool: Vec<OnChainTx>,
    blocks: Vec<Block>,
    events: Vec<ChainEvent>,
    total_supply: Amount,
    conservation_failures: Vec<u64>,
}

impl Chain {
    pub fn new(config: ChainConfig) -> Self {
        assert!(config.block_interval > 0, "block interval must be positive");
        let mut accounts = config.genesis;
        for m in &config.miners {
            accounts.entry(*m).or_default();
        }
        let total_supply = accounts.values().sum();
        Chain {
            id: config.id,
            block_interval: config.block_interval,
            miners: config.miners,
            accounts,
            contract: Contract::new(config.contract),
            mempool: Vec::new(),
            blocks: Vec::new(),
            events: Vec::new(),
            total_supply,
            conservation_failures: Vec::new(),
        }
    }

    pub fn id(&self) -> ChainId {
        self.id
    }

    pub fn block_interval(&self) -> Tick {
        self.block_interval
    }

    pub fn miners(&self) -> &[Address] {
        &self.miners
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn events(&self) -> &[ChainEvent] {
        &self.events
    }

    pub fn head_hash(&self) -> Digest {
        self.blocks.last().map(|b| b.hash).unwrap_or_else(|| genesis_hash(self.id))
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn balance(&self, a: &Address) -> Result<Amount, QueryError> {
        self.accounts.get(a).copied().ok_or(QueryError::UnknownAccount)
    }

    pub fn accounts(&self) -> &BTreeMap<Address, Amount> {
        &self.accounts
    }

    pub fn session(&self, id: SessionId) -> Result<&Session, QueryError> {
        self.contract.session(id).ok_or(QueryError::UnknownSession(id))
    }

    pub fn session_state(&self, id: SessionId) -> Option<SessionState> {
        self.contract.session(id).map(|s| s.state)
    }

    pub fn contract(&self) -> &Contract {
        &self.contract
    }

    /// Accounts plus escrow; constant for the life of the chain.
    pub fn total_value(&self) -> Amount {
        self.accounts.values().sum::<Amount>() + self.contract.escrow_total()
    }

    pub fn total_supply(&self) -> Amount {
        self.total_supply
    }

    /// Heights of blocks after which accounts plus escrow drifted.
    pub fn conservation_failures(&self) -> &[u64] {
        &self.conservation_failures
    }

    pub fn submit(&mut self, tx: OnChainTx) -> Result<(), SubmitError> {
        if tx.chain != self.id {
            return Err(SubmitError::WrongChain(tx.chain));
        }
        if !tx.verify() {
            return Err(SubmitError::BadSignature);
        }
        if !self.accounts.contains_key(&tx.sender) {
            return Err(SubmitError::UnknownSender);
        }
        self.mempool.push(tx);
        Ok(())
    }

    pub fn submit_raw(&mut self, bytes: &[u8]) -> Result<(), SubmitError> {
        self.submit(OnChainTx::from_canonical_bytes(bytes)?)
    }

    pub fn is_block_tick(&self, now: Tick) -> bool {
        now > 0 && now % self.block_interval == 0
    }

    /// Executes the mempool in submission order, then the deadlines.
    pub fn produce_block(&mut self, now: Tick) -> &[ChainEvent] {
        let first_new = self.events.len();
        let height = self.height() + 1;
        let prev = self.head_hash();
        let txs = std::mem::take(&mut self.mempool);
        let mut failed = Vec::with_capacity(txs.len());
        let mut ctx = ExecCtx {
            chain: self.id,
            now,
            prev_block: prev,
            accounts: &mut self.accounts,
            miners: &self.miners,
        };
        for tx in &txs {
            let base = |result: String, detail: Option<ContractEvent>| ChainEvent {
                tick: now,
                chain_id: self.id,
                block: height,
                tx_kind: Some(tx.kind()),
                session_id: tx.session,
                result,
                sender: Some(tx.sender),
                detail,
            };
            match self.contract.execute(tx, &mut ctx) {
                Ok(evs) => {
                    failed.push(false);
                    if evs.is_empty() {
                        self.events.push(base("ok".into(), None));
                    }
                    for ev in evs {
                        self.events.push(base(format!("ok:{}", ev.label()), Some(ev)));
                    }
                }
                Err(e) => {
                    failed.push(true);
                    self.events.push(base(format!("failed:{e}"), None));
                }
            }
        }
        for (sid, ev) in self.contract.tick_timers(&mut ctx) {
            self.events.push(ChainEvent {
                tick: now,
                chain_id: self.id,
                block: height,
                tx_kind: None,
                session_id: sid,
                result: format!("ok:{}", ev.label()),
                sender: None,
                detail: Some(ev),
            });
        }
        let mut enc = Encoder::new();
        enc.item(&prev).u64(height).u64(now).list(&txs);
        for f in &failed {
            enc.u8(*f as u8);
        }
        let hash = hash(&enc.finish());
        self.blocks.push(Block {
            height,
            tick: now,
            prev,
            hash,
            txs,
            failed,
        });
        if self.total_value() != self.total_supply {
            self.conservation_failures.push(height);
        }
        &self.events[first_new..]
    }
}

fn genesis_hash(id: ChainId) -> Digest {
    crate::crypto::hash_parts(&[b"crosschannel/genesis", &[id.tag()]])
}
