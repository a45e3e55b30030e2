//! Miners: share custody, appeals, recovery and preimage assistance.

use std::collections::{BTreeMap, BTreeSet};

use super::actor::{Ctx, MinerFlags, Notice};
use super::messages::ShareMsg;
use crate::contract::{share_message, ContractEvent, OnChainTx, TxPayload, UploadPayload};
use crate::crypto::{hash, Address, Digest, GroupParams, KeyPair};
use crate::simnet::NodeId;
use crate::types::{ChainId, SessionId, Tick};
use crate::vss::{verify_share, KeyShare};

#[derive(Clone, Debug)]
struct UploadView {
    uploader: Address,
    bindings: Vec<Address>,
    sn: u64,
    payload: UploadPayload,
}

#[derive(Clone, Debug)]
pub struct MinerActor {
    pub name: String,
    pub node: NodeId,
    pub chain: ChainId,
    key: KeyPair,
    pub byzantine: bool,
    flags: MinerFlags,
    params: &'static GroupParams,
    /// Whether this chain's contract accepts assisted updates.
    assist: bool,
    uploads: BTreeMap<SessionId, UploadView>,
    early: BTreeMap<SessionId, Vec<ShareMsg>>,
    /// Every share that reached this miner, valid or not.
    pub received: BTreeMap<SessionId, KeyShare>,
    held: BTreeMap<SessionId, KeyShare>,
    locks: BTreeMap<SessionId, (Digest, Tick)>,
    revealed: BTreeMap<SessionId, Vec<u8>>,
    settled: BTreeSet<SessionId>,
    assisted: BTreeSet<SessionId>,
    /// Old signed shares this miner may try to replay.
    stale: BTreeMap<SessionId, ShareMsg>,
}

impl MinerActor {
    pub fn new(
        name: String,
        node: NodeId,
        chain: ChainId,
        key: KeyPair,
        byzantine: bool,
        flags: MinerFlags,
        params: &'static GroupParams,
        assist: bool,
    ) -> Self {
        MinerActor {
            name,
            node,
            chain,
            key,
            byzantine,
            flags,
            params,
            assist,
            uploads: BTreeMap::new(),
            early: BTreeMap::new(),
            received: BTreeMap::new(),
            held: BTreeMap::new(),
            locks: BTreeMap::new(),
            revealed: BTreeMap::new(),
            settled: BTreeSet::new(),
            assisted: BTreeSet::new(),
            stale: BTreeMap::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.key.address()
    }

    pub fn give_stale_evidence(&mut self, session: SessionId, msg: ShareMsg) {
        self.stale.insert(session, msg);
    }

    fn deviates(&self, flag: bool) -> bool {
        self.byzantine && flag
    }

    fn submit(&self, ctx: &mut Ctx, session: SessionId, payload: TxPayload) {
        ctx.submit(OnChainTx::new_signed(&self.key, self.chain, session, payload));
    }

    pub fn on_notice(&mut self, n: &Notice, ctx: &mut Ctx) {
        let sid = n.session;
        if n.chain != self.chain {
            if let ContractEvent::Success { pre, .. } = &n.event {
                if !pre.is_empty() {
                    self.revealed.insert(sid, pre.clone());
                    self.try_assist(sid, ctx);
                }
            }
            return;
        }
        match &n.event {
            ContractEvent::UploadBound {
                uploader,
                bindings,
                sn,
                upload,
                ..
            } => {
                self.uploads.insert(
                    sid,
                    UploadView {
                        uploader: *uploader,
                        bindings: bindings.clone(),
                        sn: *sn,
                        payload: (**upload).clone(),
                    },
                );
                if self.deviates(self.flags.stale_sn_replay) {
                    if let Some(old) = self.stale.get(&sid).cloned() {
                        self.submit(
                            ctx,
                            sid,
                            TxPayload::Appeal {
                                sig: old.sig,
                                share: old.share,
                                sn: old.sn,
                            },
                        );
                    }
                }
                for msg in self.early.remove(&sid).unwrap_or_default() {
                    self.check_share(msg, ctx);
                }
            }
            ContractEvent::Locked { h_pre, lock_deadline, .. } => {
                self.locks.insert(sid, (*h_pre, *lock_deadline));
                if self.assist && !self.deviates(self.flags.skip_assist) {
                    ctx.wake(lock_deadline + 1, sid.0);
                }
            }
            ContractEvent::Success { .. } | ContractEvent::Refunded | ContractEvent::Terminated { .. } => {
                self.settled.insert(sid);
            }
            ContractEvent::RecoveryRequested { .. } => {
                if self.deviates(self.flags.withhold_shares) {
                    return;
                }
                if let Some(share) = self.held.get(&sid).cloned() {
                    self.submit(
                        ctx,
                        sid,
                        TxPayload::Recover {
                            share_s: Some(share),
                            share_r: None,
                        },
                    );
                }
            }
            _ => {}
        }
    }

    pub fn on_share(&mut self, msg: ShareMsg, ctx: &mut Ctx) {
        if msg.chain != self.chain {
            return;
        }
        if self.uploads.contains_key(&msg.session) {
            self.check_share(msg, ctx);
        } else {
            self.early.entry(msg.session).or_default().push(msg);
        }
    }

    fn check_share(&mut self, msg: ShareMsg, ctx: &mut Ctx) {
        let up = &self.uploads[&msg.session];
        if msg.sn != up.sn || !up.uploader.verify(&share_message(&msg.share, msg.sn), &msg.sig) {
            ctx.note(format!("{} drops an unsigned or stale share", self.name));
            return;
        }
        let i = msg.share.index as usize;
        if i == 0 || up.bindings.get(i - 1) != Some(&self.address()) {
            ctx.note(format!("{} was sent a share it is not bound to", self.name));
            return;
        }
        self.received.insert(msg.session, msg.share.clone());
        let genuine = msg.share.hash() == up.payload.share_hashes[i - 1]
            && verify_share(self.params, &msg.share, &up.payload.commitments);
        if genuine {
            self.held.insert(msg.session, msg.share);
        } else if !self.deviates(self.flags.skip_appeal) {
            ctx.note(format!("{} appeals share {}", self.name, i));
            self.submit(
                ctx,
                msg.session,
                TxPayload::Appeal {
                    sig: msg.sig,
                    share: msg.share,
                    sn: msg.sn,
                },
            );
        }
    }

    pub fn on_wake(&mut self, tag: u64, ctx: &mut Ctx) {
        self.try_assist(SessionId(tag), ctx);
    }

    fn try_assist(&mut self, sid: SessionId, ctx: &mut Ctx) {
        if !self.assist || self.deviates(self.flags.skip_assist) {
            return;
        }
        if self.settled.contains(&sid) || self.assisted.contains(&sid) {
            return;
        }
        let (Some(&(h_pre, deadline)), Some(pre)) = (self.locks.get(&sid), self.revealed.get(&sid)) else {
            return;
        };
        if ctx.now <= deadline || hash(pre) != h_pre {
            return;
        }
        let payload = match self.uploads.get(&sid) {
            Some(up) => TxPayload::UpdateEIE {
                pre: pre.clone(),
                h_k: up.payload.h_k,
            },
            None => TxPayload::Update { pre: pre.clone() },
        };
        self.assisted.insert(sid);
        ctx.note(format!("{} submits the revealed preimage for session {}", self.name, sid));
        self.submit(ctx, sid, payload);
    }
}
