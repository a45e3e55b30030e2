//! Channel participants: the two level-0 parties and sub-channel members.
//!
//! A party is a state machine driven by notices from the chains and
//! messages from its peers. It re-derives everything a peer claims before
//! acting on it.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;
use rand_chacha::ChaCha20Rng;

use super::actor::{Ctx, Mode, Notice, PartyFlags};
use super::ledger::ChannelLedger;
use super::messages::{ExchangeMsg, OffChain, ShareMsg};
use super::{ChannelPath, ChannelSpec, FinalState, Receipt, SubReceipt};
use crate::contract::{
    share_message, CloseSubmission, ContractEvent, OnChainTx, TxPayload, UploadPayload,
};
use crate::crypto::{decrypt, encrypt, hash, Address, Digest, GroupParams, KeyPair, Plaintext, Scalar};
use crate::proof::{MacBackend, MacKey, ProofBackend, RelationPublicInputs, RelationWitness};
use crate::simnet::NodeId;
use crate::types::{Amount, ChainId, SessionId};
use crate::vss::{self, Dealing, KeyShare};

#[derive(Clone, Debug)]
pub struct ChildPlan {
    pub member: NodeId,
    pub member_addr: Address,
    pub receipts: u32,
}

#[derive(Clone, Debug)]
pub enum SideRole {
    /// Opens the level-0 channel and pays `plan` across it.
    Payer {
        peer: NodeId,
        spec: ChannelSpec,
        plan: Vec<Amount>,
    },
    /// Opens the level-0 channel and expects `expect` receipts.
    Payee { peer: NodeId, spec: ChannelSpec, expect: usize },
    /// Joins a sub-channel funded by `funder`.
    Member {
        funder: NodeId,
        funder_addr: Address,
        expect: usize,
    },
}

#[derive(Clone, Debug)]
pub struct SideSetup {
    pub chain: ChainId,
    pub key: KeyPair,
    pub session: SessionId,
    pub role: SideRole,
    pub child: Option<ChildPlan>,
}

/// A secret message, its key, and the key's VSS dealing.
#[derive(Clone, Debug)]
pub struct Commodity {
    pub m: Plaintext,
    pub k: Scalar,
    pub dealing: Dealing,
}

impl Commodity {
    pub fn key_bytes(&self) -> [u8; 32] {
        self.k.to_bytes32()
    }

    pub fn publics(&self) -> RelationPublicInputs {
        let key = self.key_bytes();
        RelationPublicInputs {
            h_m: self.m.digest(),
            m_bar: encrypt(&key, &self.m),
            h_k: hash(&key),
            t: self.dealing.commitments.t,
            n: self.dealing.commitments.n,
        }
    }

    pub fn witness(&self) -> RelationWitness {
        RelationWitness {
            m: self.m.clone(),
            k_shares: self.dealing.shares[..self.dealing.commitments.t as usize].to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExchangeSetup {
    /// The chain this party pays on, uploads to, and locks first (S: α).
    pub home: ChainId,
    pub counterpart: NodeId,
    pub commodity: Option<Commodity>,
    pub expect_commodity: bool,
    pub pk: <MacBackend as ProofBackend>::ProvingKey,
    pub counter_vk: MacKey,
    /// Miners of the home chain by address.
    pub miners: Arc<BTreeMap<Address, NodeId>>,
    pub params: &'static GroupParams,
}

#[derive(Clone, Debug)]
struct Link {
    ledger: ChannelLedger,
    peer: NodeId,
    plan: Vec<Amount>,
    sent: usize,
    expect: usize,
    got: usize,
    peer_done: bool,
    extra_srs: Vec<SubReceipt>,
}

impl Link {
    fn new(ledger: ChannelLedger, peer: NodeId) -> Self {
        Link {
            ledger,
            peer,
            plan: Vec::new(),
            sent: 0,
            expect: 0,
            got: 0,
            peer_done: false,
            extra_srs: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
struct UploadView {
    uploader: Address,
    payload: UploadPayload,
}

#[derive(Clone, Debug, Default)]
struct SessionView {
    opened: bool,
    open: bool,
    closed: bool,
    terminal: bool,
    locked: Option<(Digest, Address)>,
    success_pre: Option<Vec<u8>>,
    upload: Option<UploadView>,
}

#[derive(Clone, Debug)]
struct Side {
    chain: ChainId,
    key: KeyPair,
    session: SessionId,
    /// `[payer, payee]` and own deposit, for level-0 sides.
    open: Option<([Address; 2], Amount)>,
    l0_payer: bool,
    member_of: Option<(NodeId, Address, usize)>,
    incoming: Option<Link>,
    outgoing: Option<Link>,
    child: Option<ChildPlan>,
    pending_sr: Option<Receipt>,
    done_sent: bool,
    close_sent: bool,
    view: SessionView,
}

impl Side {
    fn me(&self) -> Address {
        self.key.address()
    }

    fn counterparty(&self) -> Option<Address> {
        self.open.map(|(p, _)| if p[0] == self.me() { p[1] } else { p[0] })
    }

    fn l0_done(&self) -> bool {
        if self.l0_payer {
            self.outgoing.as_ref().is_some_and(|l| l.sent >= l.plan.len() && l.peer_done)
        } else {
            self.done_sent
        }
    }

    fn submission(&self, inflate: bool) -> CloseSubmission {
        let mut sub = CloseSubmission::default();
        for link in [&self.incoming, &self.outgoing].into_iter().flatten() {
            let mut balances = link.ledger.recompute();
            if inflate && link.ledger.spec.path.level == 0 {
                let other = link.ledger.counterparty();
                let grab = balances.insert(other, 0).unwrap_or(0);
                *balances.entry(self.me()).or_default() += grab;
            }
            sub.finals.push(FinalState::new_signed(&self.key, link.ledger.spec.path, &balances));
            sub.tr_list.extend(link.ledger.receipts().cloned());
            sub.sr_list.extend(link.ledger.srs().cloned());
            sub.sr_list.extend(link.extra_srs.iter().cloned());
        }
        if let Some(sr) = self.incoming.as_ref().and_then(|l| l.ledger.funding.clone()) {
            sub.sr_list.push(sr);
        }
        sub.sr_list.sort_by_key(|s| s.id());
        sub.sr_list.dedup_by_key(|s| s.id());
        sub.tr_list.sort_by_key(|r| r.id());
        sub.tr_list.dedup_by_key(|r| r.id());
        sub
    }
}

/// Level-0 only: exchange and hash-lock progress.
#[derive(Clone, Debug)]
struct Exchange {
    setup: ExchangeSetup,
    counter_msg: Option<ExchangeMsg>,
    verified: bool,
    aborted: bool,
    pre: Option<Vec<u8>>,
    lock_sent: bool,
    update_sent: bool,
    obtained: Option<bool>,
    plaintext: Option<Plaintext>,
}

/// How a level-0 party's exchange ended, from its own point of view.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct PartyReport {
    pub aborted: bool,
    pub verified_counterpart: bool,
    /// `Some(true)` once a counterpart plaintext matching its committed
    /// hash is in hand.
    pub obtained: Option<bool>,
    pub sent: usize,
    pub received: usize,
}

#[derive(Clone, Debug)]
pub struct PartyActor {
    pub name: String,
    pub node: NodeId,
    mode: Mode,
    flags: PartyFlags,
    sides: [Option<Side>; 2],
    exchange: Option<Box<Exchange>>,
    rng: ChaCha20Rng,
    /// Address the duplicate-`Sr` deviation names.
    decoy: Address,
}

impl PartyActor {
    pub fn new(
        name: String,
        node: NodeId,
        mode: Mode,
        flags: PartyFlags,
        sides: Vec<SideSetup>,
        exchange: Option<ExchangeSetup>,
        rng: ChaCha20Rng,
    ) -> Self {
        let mut slots: [Option<Side>; 2] = [None, None];
        for s in sides {
            let me = s.key.address();
            let mut side = Side {
                chain: s.chain,
                key: s.key,
                session: s.session,
                open: None,
                l0_payer: false,
                member_of: None,
                incoming: None,
                outgoing: None,
                child: s.child,
                pending_sr: None,
                done_sent: false,
                close_sent: false,
                view: SessionView::default(),
            };
            match s.role {
                SideRole::Payer { peer, spec, plan } => {
                    let parties = parties_of(&spec);
                    side.open = Some((parties, spec.initial[&me]));
                    side.l0_payer = true;
                    let mut link = Link::new(ChannelLedger::new(spec, me, None), peer);
                    link.plan = plan;
                    side.outgoing = Some(link);
                }
                SideRole::Payee { peer, spec, expect } => {
                    let parties = parties_of(&spec);
                    side.open = Some((parties, spec.initial[&me]));
                    let mut link = Link::new(ChannelLedger::new(spec, me, None), peer);
                    link.expect = expect;
                    side.incoming = Some(link);
                }
                SideRole::Member {
                    funder,
                    funder_addr,
                    expect,
                } => side.member_of = Some((funder, funder_addr, expect)),
            }
            let i = side.chain.index();
            slots[i] = Some(side);
        }
        let decoy = KeyPair::derive(&format!("{name}/decoy"), 0).address();
        PartyActor {
            name,
            node,
            mode,
            flags,
            sides: slots,
            exchange: exchange.map(|e| {
                Box::new(Exchange {
                    setup: e,
                    counter_msg: None,
                    verified: false,
                    aborted: false,
                    pre: None,
                    lock_sent: false,
                    update_sent: false,
                    obtained: None,
                    plaintext: None,
                })
            }),
            rng,
            decoy,
        }
    }

    pub fn address(&self, chain: ChainId) -> Option<Address> {
        self.sides[chain.index()].as_ref().map(|s| s.me())
    }

    /// The counterpart's plaintext as decrypted here, matching or not.
    pub fn obtained_plaintext(&self) -> Option<&Plaintext> {
        self.exchange.as_ref()?.plaintext.as_ref()
    }

    /// The plaintext this party sells, if any.
    pub fn own_plaintext(&self) -> Option<&Plaintext> {
        self.exchange.as_ref()?.setup.commodity.as_ref().map(|c| &c.m)
    }

    pub fn is_level0(&self) -> bool {
        self.exchange.is_some()
    }

    /// Sessions this party is a member of, for event subscriptions.
    pub fn sessions(&self) -> impl Iterator<Item = (ChainId, SessionId)> + '_ {
        self.sides.iter().flatten().map(|s| (s.chain, s.session))
    }

    pub fn report(&self) -> PartyReport {
        let mut r = PartyReport::default();
        if let Some(x) = &self.exchange {
            r.aborted = x.aborted;
            r.verified_counterpart = x.verified;
            r.obtained = x.obtained;
        }
        for s in self.sides.iter().flatten() {
            if let Some(l) = &s.outgoing {
                r.sent += l.sent;
            }
            if let Some(l) = &s.incoming {
                r.received += l.got;
            }
        }
        r
    }

    /// Level-0 receipts accepted on `chain`.
    pub fn level0_received(&self, chain: ChainId) -> usize {
        self.sides[chain.index()]
            .as_ref()
            .and_then(|s| s.incoming.as_ref())
            .filter(|l| l.ledger.spec.path.level == 0)
            .map_or(0, |l| l.got)
    }

    /// Nothing left for this party to learn: every session it watches has
    /// ended and any plaintext it was owed has been dealt with.
    pub fn finished(&self) -> bool {
        let Some(x) = &self.exchange else {
            return true;
        };
        if !self.sides.iter().flatten().all(|s| s.view.terminal) {
            return false;
        }
        if !x.setup.expect_commodity || x.obtained.is_some() || x.aborted {
            return true;
        }
        // Owed a key only if the counterpart's home session paid out.
        let counter_home = x.setup.home.other();
        match self.mode {
            Mode::FE => self.side(ChainId::Beta).view.success_pre.is_none(),
            Mode::EIE => self.side(counter_home).view.success_pre.is_none(),
            Mode::CE => true,
        }
    }

    fn side(&self, c: ChainId) -> &Side {
        self.sides[c.index()].as_ref().expect("side exists")
    }

    fn side_mut(&mut self, c: ChainId) -> &mut Side {
        self.sides[c.index()].as_mut().expect("side exists")
    }

    fn submit(&self, ctx: &mut Ctx, c: ChainId, payload: TxPayload) {
        let s = self.side(c);
        ctx.submit(OnChainTx::new_signed(&s.key, c, s.session, payload));
    }

    pub fn start(&mut self, ctx: &mut Ctx) {
        for c in ChainId::BOTH {
            if let Some((parties, v)) = self.sides[c.index()].as_ref().and_then(|s| s.open) {
                self.submit(ctx, c, TxPayload::Open { parties, v });
            }
        }
    }

    pub fn on_notice(&mut self, n: &Notice, ctx: &mut Ctx) {
        let c = n.chain;
        let Some(side) = self.sides[c.index()].as_mut() else {
            return;
        };
        if side.session != n.session {
            return;
        }
        match &n.event {
            ContractEvent::Opened { .. } => {
                side.view.opened = true;
                self.pay_out(c, ctx);
                self.on_opened(c, ctx);
            }
            ContractEvent::UploadBound {
                uploader,
                bindings,
                sn,
                upload,
                ..
            } => {
                side.view.upload = Some(UploadView {
                    uploader: *uploader,
                    payload: (**upload).clone(),
                });
                if *uploader == side.me() {
                    self.deal_shares(c, bindings, *sn, ctx);
                    self.send_exchange(ctx);
                } else {
                    self.check_exchange(ctx);
                }
            }
            ContractEvent::AppealWindowPassed => {
                side.view.open = true;
                self.try_close_all(ctx);
            }
            ContractEvent::CloseStarted { .. } => {
                if side.open.is_none() && !side.close_sent {
                    side.close_sent = true;
                    let sub = side.submission(false);
                    self.submit(ctx, c, TxPayload::Close(sub));
                }
            }
            ContractEvent::Closed { .. } => {
                side.view.closed = true;
                self.htlc(ctx);
            }
            ContractEvent::Locked { h_pre, locker, .. } => {
                side.view.locked = Some((*h_pre, *locker));
                self.htlc(ctx);
            }
            ContractEvent::Success { pre, .. } => {
                side.view.success_pre = Some(pre.clone());
                side.view.terminal = true;
                self.htlc(ctx);
            }
            ContractEvent::Refunded => side.view.terminal = true,
            ContractEvent::Terminated { reason } => {
                side.view.terminal = true;
                if self.exchange.is_some() {
                    ctx.note(format!("{} sees {c} session terminated: {reason}", self.name));
                    self.abort(ctx);
                }
            }
            ContractEvent::SharesPublished { shares } => self.recover_key(c, shares, ctx),
            _ => {}
        }
    }

    pub fn on_message(&mut self, from: NodeId, msg: OffChain, ctx: &mut Ctx) {
        match msg {
            OffChain::Receipt(r) => self.on_receipt(r, ctx),
            OffChain::SrRequest { tr, counterparty } => self.on_sr_request(from, tr, counterparty, ctx),
            OffChain::SrGrant(sr) => self.on_sr_grant(sr, ctx),
            OffChain::SubChannelOffer(sr) => self.on_offer(from, sr, ctx),
            OffChain::SubChannelAccept { path } => self.on_accept(path, ctx),
            OffChain::SubtreeDone { path } => self.on_subtree_done(path, ctx),
            OffChain::Exchange(m) => {
                if let Some(x) = self.exchange.as_mut() {
                    x.counter_msg = Some(*m);
                }
                self.check_exchange(ctx);
            }
            OffChain::Share(_) => ctx.note(format!("{} ignores a key share", self.name)),
        }
    }

    fn chain_of(&self, path: &ChannelPath) -> Option<ChainId> {
        ChainId::BOTH.into_iter().find(|c| {
            self.sides[c.index()].as_ref().is_some_and(|s| {
                [&s.incoming, &s.outgoing]
                    .into_iter()
                    .flatten()
                    .any(|l| l.ledger.spec.path == *path)
            })
        })
    }

    fn pay_out(&mut self, c: ChainId, ctx: &mut Ctx) {
        let overspend = self.flags.overspend;
        let side = self.side_mut(c);
        let level0 = side.l0_payer;
        let Some(link) = side.outgoing.as_mut() else {
            return;
        };
        if link.sent > 0 || (level0 && !side.view.opened) {
            return;
        }
        for &v in &link.plan {
            match link.ledger.pay(&side.key, v, true) {
                Ok(r) => ctx.send(link.peer, OffChain::Receipt(r)),
                Err(e) => ctx.note(format!("payment of {v} refused: {e}")),
            }
        }
        link.sent = link.plan.len();
        if overspend && level0 {
            let v = link.ledger.balance(&side.key.address()) + 1;
            if let Ok(r) = link.ledger.pay(&side.key, v, false) {
                ctx.send(link.peer, OffChain::Receipt(r));
            }
        }
    }

    fn on_receipt(&mut self, r: Receipt, ctx: &mut Ctx) {
        let Some(c) = self.chain_of(&r.channel) else {
            ctx.note(format!("{} got a receipt for an unknown channel", self.name));
            return;
        };
        let side = self.side_mut(c);
        let Some(link) = side.incoming.as_mut().filter(|l| l.ledger.spec.path == r.channel) else {
            return;
        };
        let seq = r.seq;
        if let Err(e) = link.ledger.accept(r.clone()) {
            ctx.note(format!("receipt {seq} rejected: {e}"));
            return;
        }
        link.got += 1;
        let payer = link.peer;
        if seq == 0 && side.pending_sr.is_none() {
            if let Some(child) = &side.child {
                side.pending_sr = Some(r.clone());
                ctx.send(
                    payer,
                    OffChain::SrRequest {
                        tr: r,
                        counterparty: child.member_addr,
                    },
                );
            }
        }
        self.check_done(c, ctx);
    }

    fn on_sr_request(&mut self, from: NodeId, tr: Receipt, counterparty: Address, ctx: &mut Ctx) {
        let Some(c) = self.chain_of(&tr.channel) else {
            return;
        };
        let dup = self.flags.duplicate_sr;
        let decoy = self.decoy;
        let side = self.side_mut(c);
        let Some(link) = side.outgoing.as_mut().filter(|l| l.peer == from) else {
            return;
        };
        let me = side.key.address();
        let known = link.ledger.receipts().any(|r| *r == tr);
        if tr.snd != me || !known || counterparty == tr.rcv || link.ledger.has_sr(&tr.id()) {
            ctx.note("sub-channel request refused");
            return;
        }
        let sr = SubReceipt::new_signed(&side.key, counterparty, tr.clone());
        if let Err(e) = link.ledger.delegate(sr.clone()) {
            ctx.note(format!("sub-channel request refused: {e}"));
            return;
        }
        if dup {
            link.extra_srs.push(SubReceipt::new_signed(&side.key, decoy, tr));
        }
        ctx.send(from, OffChain::SrGrant(sr));
    }

    fn on_sr_grant(&mut self, sr: SubReceipt, ctx: &mut Ctx) {
        let Some(c) = self.chain_of(&sr.tr.channel) else {
            return;
        };
        let side = self.side_mut(c);
        let (Some(pending), Some(child)) = (&side.pending_sr, &side.child) else {
            return;
        };
        if !sr.verify() || sr.tr != *pending || sr.counterparty != child.member_addr {
            ctx.note("sub-channel grant rejected");
            return;
        }
        let member = child.member;
        let Some(link) = side.incoming.as_mut() else {
            return;
        };
        if let Err(e) = link.ledger.delegate(sr.clone()) {
            ctx.note(format!("sub-channel grant rejected: {e}"));
            return;
        }
        let me = side.key.address();
        let spec = ChannelSpec {
            path: sr.child_path(),
            initial: sr.child_funding(),
            funder_only: Some(me),
        };
        side.outgoing = Some(Link::new(ChannelLedger::new(spec, me, Some(sr.clone())), member));
        ctx.send(member, OffChain::SubChannelOffer(sr));
    }

    fn on_offer(&mut self, from: NodeId, sr: SubReceipt, ctx: &mut Ctx) {
        let Some(c) = ChainId::BOTH.into_iter().find(|c| {
            self.sides[c.index()]
                .as_ref()
                .is_some_and(|s| s.member_of.is_some_and(|(f, _, _)| f == from) && s.incoming.is_none())
        }) else {
            return;
        };
        let side = self.side_mut(c);
        let (funder, funder_addr, expect) = side.member_of.expect("checked");
        let me = side.key.address();
        if !sr.verify() || sr.counterparty != me || sr.tr.rcv != funder_addr {
            ctx.note("sub-channel offer refused");
            return;
        }
        let spec = ChannelSpec {
            path: sr.child_path(),
            initial: sr.child_funding(),
            funder_only: Some(funder_addr),
        };
        let path = spec.path;
        let mut link = Link::new(ChannelLedger::new(spec, me, Some(sr)), funder);
        link.expect = expect;
        side.incoming = Some(link);
        ctx.send(funder, OffChain::SubChannelAccept { path });
        self.check_done(c, ctx);
    }

    fn on_accept(&mut self, path: ChannelPath, ctx: &mut Ctx) {
        let Some(c) = self.chain_of(&path) else {
            return;
        };
        let side = self.side_mut(c);
        let k = side.child.as_ref().map_or(0, |ch| ch.receipts) as u64;
        let Some(link) = side.outgoing.as_mut().filter(|l| l.ledger.spec.path == path) else {
            return;
        };
        let each = link.ledger.spec.funding() / (k + 1);
        link.plan = vec![each; k as usize];
        self.pay_out(c, ctx);
        self.check_done(c, ctx);
    }

    fn on_subtree_done(&mut self, path: ChannelPath, ctx: &mut Ctx) {
        let Some(c) = self.chain_of(&path) else {
            return;
        };
        let side = self.side_mut(c);
        match side.outgoing.as_mut() {
            Some(l) if l.ledger.spec.path == path => l.peer_done = true,
            _ => return,
        }
        if side.l0_payer {
            self.try_close_all(ctx);
        } else {
            self.check_done(c, ctx);
        }
    }

    fn check_done(&mut self, c: ChainId, ctx: &mut Ctx) {
        let side = self.side_mut(c);
        let Some(link) = side.incoming.as_ref() else {
            return;
        };
        let child_done = side.child.is_none() || side.outgoing.as_ref().is_some_and(|l| l.peer_done);
        if side.done_sent || link.got < link.expect || !child_done {
            return;
        }
        side.done_sent = true;
        ctx.send(
            link.peer,
            OffChain::SubtreeDone {
                path: link.ledger.spec.path,
            },
        );
        if side.open.is_some() {
            self.try_close_all(ctx);
        }
    }

    fn on_opened(&mut self, c: ChainId, ctx: &mut Ctx) {
        let Some(x) = self.exchange.as_ref() else {
            return;
        };
        if c != x.setup.home {
            return;
        }
        match (self.mode, &x.setup.commodity) {
            (Mode::FE, Some(_)) => self.send_exchange(ctx),
            (Mode::EIE, Some(com)) => {
                let d = &com.dealing;
                let upload = UploadPayload {
                    h_k: hash(&com.key_bytes()),
                    n: d.commitments.n,
                    t: d.commitments.t,
                    share_hashes: d.share_hashes(),
                    commitments: d.commitments.clone(),
                };
                self.submit(ctx, c, TxPayload::Upload(upload));
            }
            _ => {}
        }
    }

    fn deal_shares(&mut self, c: ChainId, bindings: &[Address], sn: u64, ctx: &mut Ctx) {
        let fake = self.flags.fake_key_share;
        let Some(x) = self.exchange.as_ref() else {
            return;
        };
        let Some(com) = &x.setup.commodity else {
            return;
        };
        let params = x.setup.params;
        let key = &self.side(c).key;
        let session = self.side(c).session;
        for (share, miner) in com.dealing.shares.iter().zip(bindings) {
            let Some(&node) = x.setup.miners.get(miner) else {
                continue;
            };
            let mut share: KeyShare = share.clone();
            if fake {
                share.s = params.add(&share.s, &params.scalar(1));
            }
            let sig = key.sign(&share_message(&share, sn));
            ctx.send(
                node,
                OffChain::Share(Box::new(ShareMsg {
                    chain: c,
                    session,
                    share,
                    sn,
                    sig,
                })),
            );
        }
    }

    fn send_exchange(&mut self, ctx: &mut Ctx) {
        let corrupt = self.flags.invalid_proof;
        let Some(x) = self.exchange.as_ref() else {
            return;
        };
        let Some(com) = &x.setup.commodity else {
            return;
        };
        let publics = com.publics();
        let mut proof = match MacBackend.prove(&x.setup.pk, &com.witness(), &publics) {
            Ok(p) => p.to_bytes(),
            Err(e) => {
                ctx.note(format!("{} cannot prove its commodity: {e}", self.name));
                return;
            }
        };
        if corrupt {
            let last = proof.len() - 1;
            proof[last] ^= 1;
        }
        let home = x.setup.home;
        let msg = ExchangeMsg {
            chain: home,
            session: self.side(home).session,
            proof,
            publics,
        };
        ctx.send(x.setup.counterpart, OffChain::Exchange(Box::new(msg)));
    }

    fn check_exchange(&mut self, ctx: &mut Ctx) {
        let mode = self.mode;
        let Some(x) = self.exchange.as_ref() else {
            return;
        };
        if x.verified || x.aborted {
            return;
        }
        let Some(msg) = &x.counter_msg else {
            return;
        };
        let counter_home = x.setup.home.other();
        let consistent = match mode {
            Mode::EIE => match &self.side(counter_home).view.upload {
                None => return,
                Some(up) => {
                    up.payload.h_k == msg.publics.h_k
                        && up.payload.t == msg.publics.t
                        && up.payload.n == msg.publics.n
                        && Some(up.uploader) == self.side(counter_home).counterparty()
                }
            },
            _ => true,
        };
        let ok = consistent
            && msg.chain == counter_home
            && MacBackend.verify_bytes(&x.setup.counter_vk, &msg.publics, &msg.proof);
        if ok {
            self.exchange.as_mut().expect("checked").verified = true;
            self.try_close_all(ctx);
        } else {
            ctx.note(format!("{} rejects the counterpart proof", self.name));
            self.abort(ctx);
        }
    }

    /// Leaves the exchange before anything is locked. An empty close makes
    /// the contract return deposits.
    fn abort(&mut self, ctx: &mut Ctx) {
        let Some(x) = self.exchange.as_mut() else {
            return;
        };
        if x.aborted || x.lock_sent {
            return;
        }
        x.aborted = true;
        for c in ChainId::BOTH {
            let side = self.side_mut(c);
            if side.close_sent || side.view.terminal {
                continue;
            }
            side.close_sent = true;
            self.submit(ctx, c, TxPayload::Close(CloseSubmission::default()));
        }
    }

    fn gate_open(&self) -> bool {
        let Some(x) = self.exchange.as_ref() else {
            return false;
        };
        if x.aborted {
            return false;
        }
        match self.mode {
            Mode::CE => true,
            Mode::FE => x.setup.commodity.is_some() || x.verified,
            Mode::EIE => {
                x.verified
                    && ChainId::BOTH
                        .iter()
                        .all(|c| self.side(*c).view.open && !self.side(*c).view.terminal)
            }
        }
    }

    fn try_close_all(&mut self, ctx: &mut Ctx) {
        if self.exchange.is_none() || self.flags.refuse_close || !self.gate_open() {
            return;
        }
        let inflate = self.flags.inflate_final_state;
        for c in ChainId::BOTH {
            let side = self.side(c);
            if side.close_sent || !side.l0_done() || side.view.terminal {
                continue;
            }
            let sub = side.submission(inflate);
            self.side_mut(c).close_sent = true;
            self.submit(ctx, c, TxPayload::Close(sub));
        }
    }

    fn htlc(&mut self, ctx: &mut Ctx) {
        let Some(x) = self.exchange.as_ref() else {
            return;
        };
        if x.aborted {
            return;
        }
        let home = x.setup.home;
        let alpha = &self.side(ChainId::Alpha).view;
        let beta = &self.side(ChainId::Beta).view;
        if home == ChainId::Alpha {
            // Initiator: lock α, then reveal on β once R has locked.
            if !x.lock_sent && alpha.closed && beta.closed {
                let pre = match (&x.setup.commodity, self.mode) {
                    (Some(com), Mode::FE) => com.key_bytes().to_vec(),
                    _ => {
                        let mut b = vec![0u8; 32];
                        self.rng.fill_bytes(&mut b);
                        b
                    }
                };
                let h_pre = hash(&pre);
                let x = self.exchange.as_mut().expect("checked");
                x.pre = Some(pre);
                x.lock_sent = true;
                self.submit(ctx, ChainId::Alpha, TxPayload::Lock { h_pre, offer: None });
                return;
            }
            let counter = self.side(ChainId::Beta).counterparty();
            let Some(pre) = x.pre.clone() else {
                return;
            };
            let locked_ok = beta.locked.is_some_and(|(h, by)| h == hash(&pre) && Some(by) == counter);
            if x.lock_sent && !x.update_sent && locked_ok && beta.success_pre.is_none() {
                if self.flags.withhold_pre {
                    return;
                }
                let payload = match (&beta.upload, self.mode) {
                    (Some(up), Mode::EIE) => TxPayload::UpdateEIE {
                        pre,
                        h_k: up.payload.h_k,
                    },
                    _ => TxPayload::Update { pre },
                };
                self.exchange.as_mut().expect("checked").update_sent = true;
                self.submit(ctx, ChainId::Beta, payload);
            }
        } else {
            // Responder: mirror α's lock on β, then use the revealed preimage on α.
            let counter = self.side(ChainId::Alpha).counterparty();
            if !x.lock_sent && beta.closed {
                if let Some((h, by)) = alpha.locked {
                    if Some(by) != counter {
                        return;
                    }
                    if self.mode == Mode::FE {
                        let expected = x.counter_msg.as_ref().map(|m| m.publics.h_k);
                        if !x.verified || expected != Some(h) {
                            ctx.note(format!("{} refuses a lock not tied to the key", self.name));
                            return;
                        }
                    }
                    self.exchange.as_mut().expect("checked").lock_sent = true;
                    self.submit(ctx, ChainId::Beta, TxPayload::Lock { h_pre: h, offer: None });
                }
                return;
            }
            let Some(pre) = beta.success_pre.clone() else {
                return;
            };
            if self.mode == Mode::FE && x.obtained.is_none() {
                self.open_with_pre(&pre, ctx);
            }
            let x = self.exchange.as_ref().expect("checked");
            let alpha = &self.side(ChainId::Alpha).view;
            let fits = alpha.locked.is_some_and(|(h, _)| h == hash(&pre));
            if x.update_sent || !fits || alpha.success_pre.is_some() || alpha.terminal {
                return;
            }
            let payload = match (&alpha.upload, self.mode) {
                (Some(up), Mode::EIE) => TxPayload::UpdateEIE {
                    pre,
                    h_k: up.payload.h_k,
                },
                _ => TxPayload::Update { pre },
            };
            self.exchange.as_mut().expect("checked").update_sent = true;
            self.submit(ctx, ChainId::Alpha, payload);
        }
    }

    /// FE: the revealed preimage is the key for the counterpart's ciphertext.
    fn open_with_pre(&mut self, pre: &[u8], ctx: &mut Ctx) {
        let x = self.exchange.as_mut().expect("level 0");
        let Some(msg) = &x.counter_msg else {
            return;
        };
        let Ok(key) = <[u8; 32]>::try_from(pre) else {
            x.obtained = Some(false);
            return;
        };
        let m = decrypt(&key, &msg.publics.m_bar);
        let ok = m.digest() == msg.publics.h_m;
        x.obtained = Some(ok);
        x.plaintext = Some(m);
        if !ok {
            ctx.note(format!("{} decrypted a plaintext with the wrong hash", self.name));
        }
    }

    fn recover_key(&mut self, c: ChainId, shares: &[KeyShare], ctx: &mut Ctx) {
        let name = self.name.clone();
        let Some(x) = self.exchange.as_mut() else {
            return;
        };
        if c == x.setup.home || x.obtained.is_some() || !x.setup.expect_commodity {
            return;
        }
        let Some(msg) = &x.counter_msg else {
            return;
        };
        let ok = match vss::recover(x.setup.params, shares, msg.publics.t) {
            Ok(k) => {
                let key = k.to_bytes32();
                let m = decrypt(&key, &msg.publics.m_bar);
                let ok = hash(&key) == msg.publics.h_k && m.digest() == msg.publics.h_m;
                x.plaintext = Some(m);
                ok
            }
            Err(_) => false,
        };
        x.obtained = Some(ok);
        if !ok {
            ctx.note(format!("{name} recovered a key that does not open the ciphertext"));
        }
    }
}

fn parties_of(spec: &ChannelSpec) -> [Address; 2] {
    let mut it = spec.participants().copied();
    [it.next().expect("two participants"), it.next().expect("two participants")]
}
