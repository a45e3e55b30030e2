//! Per-session state machine and transaction handlers.
//!
//! Every handler validates fully before it mutates anything, so a failed
//! transaction leaves balances and session state untouched.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::settlement::{settle_levels, CloseSubmission, SettlementReport};
use super::tx::{share_message, HtlcOffer, OnChainTx, TxPayload, UploadPayload};
use crate::channel::{ChannelPath, ChannelSpec};
use crate::crypto::{hash, hash_parts, Address, Digest, GroupParams, Signature};
use crate::types::{Amount, ChainId, SessionId, Tick};
use crate::vss::{verify_share, KeyShare};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionState {
    #[serde(rename = "INIT")]
    Init,
    #[serde(rename = "Open_CE")]
    OpenCE,
    Open,
    Close,
    Lock,
    Success,
    Terminated,
    Refunded,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Success | SessionState::Terminated | SessionState::Refunded)
    }

    /// Edges of the contract's state diagram. `Init -> Lock` serves
    /// single-payment HTLC sessions and `Close -> Success` intra-chain
    /// settlement.
    pub fn can_move_to(self, to: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, to),
            (Init, OpenCE)
                | (Init, Lock)
                | (OpenCE, Open)
                | (OpenCE, Close)
                | (Open, Close)
                | (OpenCE, Terminated)
                | (Open, Terminated)
                | (Close, Lock)
                | (Close, Success)
                | (Lock, Success)
                | (Lock, Refunded)
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ContractConfig {
    pub t1: Tick,
    pub t2: Tick,
    /// T3 on the chain whose lock is set first, T4 on the other.
    pub lock_window: Tick,
    /// T5, measured from the lock; `None` disables miner assistance.
    pub assist_window: Option<Tick>,
    pub assist_reward_bps: u32,
    /// Cross-chain sessions stop at `Close` and wait for the hash lock.
    pub cross_chain: bool,
    pub params: &'static GroupParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContractEvent {
    OpenRecorded { party: Address, v: Amount },
    Opened { parties: [Address; 2] },
    UploadBound {
        uploader: Address,
        bindings: Vec<Address>,
        sn: u64,
        appeal_deadline: Tick,
        upload: Box<UploadPayload>,
    },
    AppealWindowPassed,
    CloseSubmitted { submitter: Address },
    CloseStarted { deadline: Tick },
    Closed { allocations: BTreeMap<Address, Amount> },
    Locked {
        h_pre: Digest,
        locker: Address,
        lock_deadline: Tick,
        assist_deadline: Option<Tick>,
    },
    Success {
        pre: Vec<u8>,
        assisted_by: Option<Address>,
        reward: Amount,
    },
    Refunded,
    Terminated { reason: String },
    RecoveryRequested { requester: Address, h_k: Digest },
    ShareAccepted { index: u32 },
    SharesPublished { shares: Vec<KeyShare> },
}

impl ContractEvent {
    pub fn label(&self) -> &'static str {
        match self {
            ContractEvent::OpenRecorded { .. } => "open_recorded",
            ContractEvent::Opened { .. } => "opened",
            ContractEvent::UploadBound { .. } => "upload_bound",
            ContractEvent::AppealWindowPassed => "appeal_window_passed",
            ContractEvent::CloseSubmitted { .. } => "close_submitted",
            ContractEvent::CloseStarted { .. } => "close_started",
            ContractEvent::Closed { .. } => "closed",
            ContractEvent::Locked { .. } => "locked",
            ContractEvent::Success { .. } => "success",
            ContractEvent::Refunded => "refunded",
            ContractEvent::Terminated { .. } => "terminated",
            ContractEvent::RecoveryRequested { .. } => "recovery_requested",
            ContractEvent::ShareAccepted { .. } => "share_accepted",
            ContractEvent::SharesPublished { .. } => "shares_published",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxError {
    #[error("session is {found:?}, expected {expected}")]
    WrongState { expected: &'static str, found: SessionState },
    #[error("unknown session")]
    UnknownSession,
    #[error("sender is not a party of this session")]
    NotParty,
    #[error("open names different parties than the session")]
    PartyMismatch,
    #[error("insufficient balance")]
    InsufficientBalance,
    #[error("party already opened")]
    DuplicateOpen,
    #[error("malformed upload: {0}")]
    BadUpload(&'static str),
    #[error("key metadata already uploaded")]
    DuplicateUpload,
    #[error("not enough miners for n")]
    NotEnoughMiners,
    #[error("no key upload in this session")]
    NoUpload,
    #[error("sender is not the miner bound to this share")]
    NotBoundMiner,
    #[error("serial number does not match this session")]
    StaleSerial,
    #[error("appeal window closed")]
    AppealWindowClosed,
    #[error("evidence signature invalid")]
    BadEvidenceSignature,
    #[error("appealed share is genuine")]
    AppealNotFake,
    #[error("share index out of range")]
    BadShareIndex,
    #[error("close window closed")]
    CloseWindowClosed,
    #[error("sender already closed")]
    DuplicateClose,
    #[error("session already locked")]
    DuplicateLock,
    #[error("wrong preimage")]
    WrongPreimage,
    #[error("key hash does not match the uploaded key")]
    KeyHashMismatch,
    #[error("outside the submission window")]
    OutsideWindow,
    #[error("no recovery requested")]
    NoRecoveryRequested,
    #[error("share does not match its binding")]
    ShareHashMismatch,
    #[error("share fails verification")]
    ShareInvalid,
}

#[derive(Clone, Debug)]
pub struct UploadRecord {
    pub uploader: Address,
    pub payload: UploadPayload,
    pub bindings: Vec<Address>,
    pub sn: u64,
}

#[derive(Clone, Debug)]
pub struct Session {
    pub id: SessionId,
    pub state: SessionState,
    pub parties: [Address; 2],
    pub deposits: BTreeMap<Address, Amount>,
    pub escrow: Amount,
    pub upload: Option<UploadRecord>,
    pub appeal_deadline: Option<Tick>,
    pub closes: BTreeMap<Address, CloseSubmission>,
    pub first_party_close: Option<Tick>,
    pub close_deadline: Option<Tick>,
    pub settlement: Option<SettlementReport>,
    pub allocations: Option<BTreeMap<Address, Amount>>,
    pub h_pre: Option<Digest>,
    pub locker: Option<Address>,
    pub lock_deadline: Option<Tick>,
    pub assist_deadline: Option<Tick>,
    pub assisted_by: Option<Address>,
    pub recovery_requested: bool,
    pub recovered: BTreeMap<u32, KeyShare>,
    pub shares_published: bool,
    /// Every state entered, with the tick it was entered at.
    pub history: Vec<(Tick, SessionState)>,
}

impl Session {
    fn new(id: SessionId, parties: [Address; 2], now: Tick) -> Self {
        Session {
            id,
            state: SessionState::Init,
            parties,
            deposits: BTreeMap::new(),
            escrow: 0,
            upload: None,
            appeal_deadline: None,
            closes: BTreeMap::new(),
            first_party_close: None,
            close_deadline: None,
            settlement: None,
            allocations: None,
            h_pre: None,
            locker: None,
            lock_deadline: None,
            assist_deadline: None,
            assisted_by: None,
            recovery_requested: false,
            recovered: BTreeMap::new(),
            shares_published: false,
            history: vec![(now, SessionState::Init)],
        }
    }

    pub fn is_party(&self, a: &Address) -> bool {
        self.parties.contains(a)
    }

    fn move_to(&mut self, to: SessionState, now: Tick) {
        debug_assert!(self.state.can_move_to(to), "{:?} -> {:?}", self.state, to);
        self.state = to;
        self.history.push((now, to));
    }

    fn expect(&self, ok: bool, expected: &'static str) -> Result<(), TxError> {
        if ok {
            Ok(())
        } else {
            Err(TxError::WrongState {
                expected,
                found: self.state,
            })
        }
    }
}

/// Mutable chain state a handler may touch.
pub struct ExecCtx<'a> {
    pub chain: ChainId,
    pub now: Tick,
    pub prev_block: Digest,
    pub accounts: &'a mut BTreeMap<Address, Amount>,
    pub miners: &'a [Address],
}

impl ExecCtx<'_> {
    fn balance(&self, a: &Address) -> Amount {
        self.accounts.get(a).copied().unwrap_or(0)
    }

    fn credit(&mut self, a: Address, v: Amount) {
        *self.accounts.entry(a).or_default() += v;
    }
}

#[derive(Clone, Debug)]
pub struct Contract {
    pub config: ContractConfig,
    sessions: BTreeMap<SessionId, Session>,
}

impl Contract {
    pub fn new(config: ContractConfig) -> Self {
        Contract {
            config,
            sessions: BTreeMap::new(),
        }
    }

    pub fn session(&self, id: SessionId) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn escrow_total(&self) -> Amount {
        self.sessions.values().map(|s| s.escrow).sum()
    }

    pub fn execute(&mut self, tx: &OnChainTx, ctx: &mut ExecCtx<'_>) -> Result<Vec<ContractEvent>, TxError> {
        let sid = tx.session;
        match &tx.payload {
            TxPayload::Open { parties, v } => self.open(sid, tx.sender, *parties, *v, ctx),
            TxPayload::Lock { h_pre, offer: Some(offer) } => self.lock_offer(sid, tx.sender, *h_pre, *offer, ctx),
            payload => {
                let config = self.config;
                let s = self.sessions.get_mut(&sid).ok_or(TxError::UnknownSession)?;
                match payload {
                    TxPayload::Upload(u) => upload(&config, s, tx.sender, u, ctx),
                    TxPayload::Appeal { sig, share, sn } => appeal(&config, s, tx.sender, sig, share, *sn, ctx),
                    TxPayload::Close(sub) => close(&config, s, tx.sender, sub, ctx),
                    TxPayload::Lock { h_pre, offer: None } => lock(&config, s, tx.sender, *h_pre, ctx),
                    TxPayload::Update { pre } => update(&config, s, tx.sender, pre, None, ctx),
                    TxPayload::UpdateEIE { pre, h_k } => update(&config, s, tx.sender, pre, Some(*h_k), ctx),
                    TxPayload::Recover { share_s, share_r } => {
                        recover(&config, s, tx.sender, [share_s.as_ref(), share_r.as_ref()], ctx)
                    }
                    TxPayload::Open { .. } | TxPayload::Lock { .. } => unreachable!("handled above"),
                }
            }
        }
    }

    fn open(
        &mut self,
        sid: SessionId,
        sender: Address,
        parties: [Address; 2],
        v: Amount,
        ctx: &mut ExecCtx<'_>,
    ) -> Result<Vec<ContractEvent>, TxError> {
        if parties[0] == parties[1] || !parties.contains(&sender) {
            return Err(TxError::NotParty);
        }
        if let Some(s) = self.sessions.get(&sid) {
            s.expect(s.state == SessionState::Init, "INIT")?;
            if s.parties != parties {
                return Err(TxError::PartyMismatch);
            }
            if s.deposits.contains_key(&sender) {
                return Err(TxError::DuplicateOpen);
            }
        }
        if ctx.balance(&sender) < v {
            return Err(TxError::InsufficientBalance);
        }
        let s = self
            .sessions
            .entry(sid)
            .or_insert_with(|| Session::new(sid, parties, ctx.now));
        *ctx.accounts.get_mut(&sender).expect("balance checked") -= v;
        s.deposits.insert(sender, v);
        s.escrow += v;
        let mut events = vec![ContractEvent::OpenRecorded { party: sender, v }];
        if s.deposits.len() == 2 {
            s.move_to(SessionState::OpenCE, ctx.now);
            events.push(ContractEvent::Opened { parties });
        }
        Ok(events)
    }

    fn lock_offer(
        &mut self,
        sid: SessionId,
        sender: Address,
        h_pre: Digest,
        offer: HtlcOffer,
        ctx: &mut ExecCtx<'_>,
    ) -> Result<Vec<ContractEvent>, TxError> {
        if let Some(s) = self.sessions.get(&sid) {
            return Err(TxError::WrongState {
                expected: "INIT",
                found: s.state,
            });
        }
        if offer.payee == sender {
            return Err(TxError::NotParty);
        }
        if ctx.balance(&sender) < offer.amount {
            return Err(TxError::InsufficientBalance);
        }
        let config = self.config;
        let mut s = Session::new(sid, [sender, offer.payee], ctx.now);
        *ctx.accounts.get_mut(&sender).expect("balance checked") -= offer.amount;
        s.deposits = BTreeMap::from([(sender, offer.amount), (offer.payee, 0)]);
        s.escrow = offer.amount;
        s.allocations = Some(BTreeMap::from([(sender, 0), (offer.payee, offer.amount)]));
        let ev = set_lock(&config, &mut s, sender, h_pre, ctx.now);
        self.sessions.insert(sid, s);
        Ok(vec![ev])
    }

    /// Deadline processing, run after the block's transactions.
    pub fn tick_timers(&mut self, ctx: &mut ExecCtx<'_>) -> Vec<(SessionId, ContractEvent)> {
        let config = self.config;
        let mut out = Vec::new();
        for (sid, s) in self.sessions.iter_mut() {
            for ev in session_timers(&config, s, ctx) {
                out.push((*sid, ev));
            }
        }
        out
    }
}

fn session_timers(config: &ContractConfig, s: &mut Session, ctx: &mut ExecCtx<'_>) -> Vec<ContractEvent> {
    let now = ctx.now;
    let mut events = Vec::new();
    if s.state == SessionState::OpenCE && s.appeal_deadline.is_some_and(|d| now >= d) {
        s.move_to(SessionState::Open, now);
        events.push(ContractEvent::AppealWindowPassed);
    }
    if matches!(s.state, SessionState::OpenCE | SessionState::Open) {
        if let Some(deadline) = s.close_deadline {
            if now >= deadline {
                events.extend(settle(config, s, ctx));
            }
        } else if s.first_party_close.is_some_and(|c| now >= c + config.t2) {
            events.push(terminate(s, ctx, "counterparty never closed"));
        }
    }
    if s.state == SessionState::Lock {
        let last = s.assist_deadline.or(s.lock_deadline).expect("lock sets deadlines");
        if now > last {
            refund(s, ctx);
            events.push(ContractEvent::Refunded);
        }
    }
    events
}

fn return_deposits(s: &mut Session, ctx: &mut ExecCtx<'_>) {
    for (a, v) in &s.deposits {
        ctx.credit(*a, *v);
    }
    s.escrow = 0;
}

fn terminate(s: &mut Session, ctx: &mut ExecCtx<'_>, reason: &str) -> ContractEvent {
    return_deposits(s, ctx);
    s.move_to(SessionState::Terminated, ctx.now);
    ContractEvent::Terminated {
        reason: reason.to_string(),
    }
}

fn refund(s: &mut Session, ctx: &mut ExecCtx<'_>) {
    return_deposits(s, ctx);
    s.move_to(SessionState::Refunded, ctx.now);
}

fn settle(config: &ContractConfig, s: &mut Session, ctx: &mut ExecCtx<'_>) -> Vec<ContractEvent> {
    let root = ChannelSpec {
        path: ChannelPath::root(ctx.chain, s.id),
        initial: s.deposits.clone(),
        funder_only: None,
    };
    match settle_levels(&root, &s.closes) {
        Err(e) => vec![terminate(s, ctx, &e.to_string())],
        Ok(report) => {
            let allocations = report.allocations.clone();
            s.settlement = Some(report);
            s.allocations = Some(allocations.clone());
            s.move_to(SessionState::Close, ctx.now);
            let mut events = vec![ContractEvent::Closed {
                allocations: allocations.clone(),
            }];
            if !config.cross_chain {
                pay_out(s, ctx, &allocations);
                s.move_to(SessionState::Success, ctx.now);
                events.push(ContractEvent::Success {
                    pre: Vec::new(),
                    assisted_by: None,
                    reward: 0,
                });
            }
            events
        }
    }
}

fn pay_out(s: &mut Session, ctx: &mut ExecCtx<'_>, allocations: &BTreeMap<Address, Amount>) {
    let total: Amount = allocations.values().sum();
    assert_eq!(total, s.escrow, "allocations must exhaust escrow");
    for (a, v) in allocations {
        ctx.credit(*a, *v);
    }
    s.escrow = 0;
}

fn require_party(s: &Session, sender: &Address) -> Result<(), TxError> {
    if s.is_party(sender) {
        Ok(())
    } else {
        Err(TxError::NotParty)
    }
}

fn upload(
    config: &ContractConfig,
    s: &mut Session,
    sender: Address,
    u: &UploadPayload,
    ctx: &mut ExecCtx<'_>,
) -> Result<Vec<ContractEvent>, TxError> {
    s.expect(s.state == SessionState::OpenCE, "Open_CE")?;
    require_party(s, &sender)?;
    if s.upload.is_some() {
        return Err(TxError::DuplicateUpload);
    }
    if !s.closes.is_empty() {
        return Err(TxError::WrongState {
            expected: "Open_CE before close",
            found: s.state,
        });
    }
    if u.t == 0 || u.t > u.n {
        return Err(TxError::BadUpload("t must satisfy 1 <= t <= n"));
    }
    if u.share_hashes.len() != u.n as usize {
        return Err(TxError::BadUpload("share hash count differs from n"));
    }
    if u.commitments.t != u.t || u.commitments.n != u.n || !u.commitments.is_well_formed() {
        return Err(TxError::BadUpload("commitments disagree with (t, n)"));
    }
    if !u.commitments.coeffs.iter().chain([&u.commitments.e_sr]).all(|e| config.params.is_element(e)) {
        return Err(TxError::BadUpload("commitment outside the group"));
    }
    if u.n as usize > ctx.miners.len() {
        return Err(TxError::NotEnoughMiners);
    }
    let seed_parts: [&[u8]; 4] = [
        ctx.prev_block.as_bytes(),
        &s.id.0.to_be_bytes(),
        &sender.0,
        &[ctx.chain.tag()],
    ];
    let select = hash_parts(&[&[b"crosschannel/select".as_slice()], &seed_parts[..]].concat());
    let mut rng = ChaCha20Rng::from_seed(select.0);
    let bindings: Vec<Address> = sample(&mut rng, ctx.miners.len(), u.n as usize)
        .into_iter()
        .map(|i| ctx.miners[i])
        .collect();
    let sn = hash_parts(&[&[b"crosschannel/sn".as_slice()], &seed_parts[..]].concat()).prefix_u64();
    let appeal_deadline = ctx.now + config.t1;
    s.upload = Some(UploadRecord {
        uploader: sender,
        payload: u.clone(),
        bindings: bindings.clone(),
        sn,
    });
    s.appeal_deadline = Some(appeal_deadline);
    Ok(vec![ContractEvent::UploadBound {
        uploader: sender,
        bindings,
        sn,
        appeal_deadline,
        upload: Box::new(u.clone()),
    }])
}

fn bound_index(up: &UploadRecord, sender: &Address, share: &KeyShare) -> Result<usize, TxError> {
    if share.index == 0 || share.index > up.payload.n {
        return Err(TxError::BadShareIndex);
    }
    let i = share.index as usize - 1;
    if up.bindings[i] != *sender {
        return Err(TxError::NotBoundMiner);
    }
    Ok(i)
}

fn appeal(
    config: &ContractConfig,
    s: &mut Session,
    sender: Address,
    sig: &Signature,
    share: &KeyShare,
    sn: u64,
    ctx: &mut ExecCtx<'_>,
) -> Result<Vec<ContractEvent>, TxError> {
    let up = s.upload.as_ref().ok_or(TxError::NoUpload)?;
    if sn != up.sn {
        return Err(TxError::StaleSerial);
    }
    if s.appeal_deadline.is_none_or(|d| ctx.now > d) {
        return Err(TxError::AppealWindowClosed);
    }
    s.expect(matches!(s.state, SessionState::OpenCE | SessionState::Open), "Open_CE")?;
    let i = bound_index(up, &sender, share)?;
    if !up.uploader.verify(&share_message(share, sn), sig) {
        return Err(TxError::BadEvidenceSignature);
    }
    let genuine =
        share.hash() == up.payload.share_hashes[i] && verify_share(config.params, share, &up.payload.commitments);
    if genuine {
        return Err(TxError::AppealNotFake);
    }
    Ok(vec![terminate(s, ctx, "fake key share")])
}

fn close(
    config: &ContractConfig,
    s: &mut Session,
    sender: Address,
    sub: &CloseSubmission,
    ctx: &mut ExecCtx<'_>,
) -> Result<Vec<ContractEvent>, TxError> {
    s.expect(matches!(s.state, SessionState::OpenCE | SessionState::Open), "Open_CE or Open")?;
    if s.close_deadline.is_some_and(|d| ctx.now > d) {
        return Err(TxError::CloseWindowClosed);
    }
    if s.closes.contains_key(&sender) {
        return Err(TxError::DuplicateClose);
    }
    s.closes.insert(sender, sub.clone());
    let mut events = vec![ContractEvent::CloseSubmitted { submitter: sender }];
    if s.is_party(&sender) {
        s.first_party_close.get_or_insert(ctx.now);
        if s.close_deadline.is_none() && s.parties.iter().all(|p| s.closes.contains_key(p)) {
            let deadline = ctx.now + config.t2;
            s.close_deadline = Some(deadline);
            events.push(ContractEvent::CloseStarted { deadline });
        }
    }
    Ok(events)
}

fn set_lock(config: &ContractConfig, s: &mut Session, locker: Address, h_pre: Digest, now: Tick) -> ContractEvent {
    let lock_deadline = now + config.lock_window;
    let assist_deadline = config.assist_window.map(|w| now + w);
    s.h_pre = Some(h_pre);
    s.locker = Some(locker);
    s.lock_deadline = Some(lock_deadline);
    s.assist_deadline = assist_deadline;
    s.move_to(SessionState::Lock, now);
    ContractEvent::Locked {
        h_pre,
        locker,
        lock_deadline,
        assist_deadline,
    }
}

fn lock(
    config: &ContractConfig,
    s: &mut Session,
    sender: Address,
    h_pre: Digest,
    ctx: &mut ExecCtx<'_>,
) -> Result<Vec<ContractEvent>, TxError> {
    if s.h_pre.is_some() {
        return Err(TxError::DuplicateLock);
    }
    s.expect(s.state == SessionState::Close, "Close")?;
    require_party(s, &sender)?;
    Ok(vec![set_lock(config, s, sender, h_pre, ctx.now)])
}

fn update(
    config: &ContractConfig,
    s: &mut Session,
    sender: Address,
    pre: &[u8],
    h_k: Option<Digest>,
    ctx: &mut ExecCtx<'_>,
) -> Result<Vec<ContractEvent>, TxError> {
    s.expect(s.state == SessionState::Lock, "Lock")?;
    if Some(hash(pre)) != s.h_pre {
        return Err(TxError::WrongPreimage);
    }
    if let Some(h_k) = h_k {
        let up = s.upload.as_ref().ok_or(TxError::NoUpload)?;
        if up.payload.h_k != h_k {
            return Err(TxError::KeyHashMismatch);
        }
    }
    let lock_deadline = s.lock_deadline.expect("locked");
    let assisted = if s.is_party(&sender) {
        if ctx.now > lock_deadline {
            return Err(TxError::OutsideWindow);
        }
        false
    } else if ctx.miners.contains(&sender) {
        match s.assist_deadline {
            Some(end) if lock_deadline < ctx.now && ctx.now <= end => true,
            _ => return Err(TxError::OutsideWindow),
        }
    } else {
        return Err(TxError::NotParty);
    };

    let mut allocations = s.allocations.clone().expect("lock implies allocations");
    let mut reward = 0;
    if assisted {
        let locker = s.locker.expect("locked");
        let beneficiary = *s.parties.iter().find(|p| **p != locker).expect("two parties");
        let share = allocations.get(&beneficiary).copied().unwrap_or(0);
        reward = share * config.assist_reward_bps as Amount / 10_000;
        *allocations.get_mut(&beneficiary).expect("beneficiary allocated") -= reward;
        *allocations.entry(sender).or_default() += reward;
        s.assisted_by = Some(sender);
    }
    pay_out(s, ctx, &allocations);
    s.move_to(SessionState::Success, ctx.now);
    let mut events = vec![ContractEvent::Success {
        pre: pre.to_vec(),
        assisted_by: assisted.then_some(sender),
        reward,
    }];
    if let Some(h_k) = h_k {
        s.recovery_requested = true;
        events.push(ContractEvent::RecoveryRequested { requester: sender, h_k });
    }
    Ok(events)
}

fn recover(
    config: &ContractConfig,
    s: &mut Session,
    sender: Address,
    offered: [Option<&KeyShare>; 2],
    _ctx: &mut ExecCtx<'_>,
) -> Result<Vec<ContractEvent>, TxError> {
    s.expect(s.state == SessionState::Success, "Success")?;
    if !s.recovery_requested {
        return Err(TxError::NoRecoveryRequested);
    }
    let up = s.upload.as_ref().ok_or(TxError::NoUpload)?;
    let dealing = up.payload.commitments.id();
    let share = offered
        .into_iter()
        .flatten()
        .find(|sh| sh.dealing_id == dealing)
        .ok_or(TxError::ShareInvalid)?;
    let i = bound_index(up, &sender, share)?;
    if share.hash() != up.payload.share_hashes[i] {
        return Err(TxError::ShareHashMismatch);
    }
    if !verify_share(config.params, share, &up.payload.commitments) {
        return Err(TxError::ShareInvalid);
    }
    if s.recovered.contains_key(&share.index) {
        return Ok(Vec::new());
    }
    let t = up.payload.t as usize;
    s.recovered.insert(share.index, share.clone());
    let mut events = vec![ContractEvent::ShareAccepted { index: share.index }];
    if !s.shares_published && s.recovered.len() >= t {
        s.shares_published = true;
        events.push(ContractEvent::SharesPublished {
            shares: s.recovered.values().cloned().collect(),
        });
    }
    Ok(events)
}
