//! Plain HTLC swaps, one contract session per exchanged payment.

use rand::RngCore;
use rand_chacha::ChaCha20Rng;

use crate::channel::{Ctx, Notice};
use crate::contract::{ContractEvent, HtlcOffer, OnChainTx, TxPayload};
use crate::crypto::{hash, Address, Digest, KeyPair};
use crate::types::{Amount, ChainId, SessionId};

#[derive(Clone, Debug)]
struct Swap {
    session: SessionId,
    amount: Amount,
    pre: Option<Vec<u8>>,
    h_pre: Option<Digest>,
    acted: bool,
    finished: [bool; 2],
}

/// One side of a run of independent swaps. The initiator locks on α and
/// reveals on β; the responder mirrors the lock and reuses the preimage.
#[derive(Clone, Debug)]
pub struct HtlcActor {
    pub name: String,
    initiator: bool,
    keys: [KeyPair; 2],
    counter: [Address; 2],
    swaps: Vec<Swap>,
    first: u64,
    rng: ChaCha20Rng,
}

impl HtlcActor {
    pub fn new(
        name: String,
        initiator: bool,
        keys: [KeyPair; 2],
        counter: [Address; 2],
        first_session: u64,
        amounts: &[Amount],
        rng: ChaCha20Rng,
    ) -> Self {
        let swaps = amounts
            .iter()
            .enumerate()
            .map(|(i, &amount)| Swap {
                session: SessionId(first_session + i as u64),
                amount,
                pre: None,
                h_pre: None,
                acted: false,
                finished: [false; 2],
            })
            .collect();
        HtlcActor {
            name,
            initiator,
            keys,
            counter,
            swaps,
            first: first_session,
            rng,
        }
    }

    pub fn sessions(&self) -> impl Iterator<Item = SessionId> + '_ {
        self.swaps.iter().map(|s| s.session)
    }

    pub fn finished(&self) -> bool {
        self.swaps.iter().all(|s| s.finished.iter().all(|f| *f))
    }

    fn submit(&self, ctx: &mut Ctx, c: ChainId, session: SessionId, payload: TxPayload) {
        ctx.submit(OnChainTx::new_signed(&self.keys[c.index()], c, session, payload));
    }

    pub fn start(&mut self, ctx: &mut Ctx) {
        if !self.initiator {
            return;
        }
        for i in 0..self.swaps.len() {
            let mut pre = vec![0u8; 32];
            self.rng.fill_bytes(&mut pre);
            let h_pre = hash(&pre);
            let swap = &mut self.swaps[i];
            swap.pre = Some(pre);
            swap.h_pre = Some(h_pre);
            let (session, amount) = (swap.session, swap.amount);
            let offer = HtlcOffer {
                payee: self.counter[ChainId::Alpha.index()],
                amount,
            };
            self.submit(ctx, ChainId::Alpha, session, TxPayload::Lock { h_pre, offer: Some(offer) });
        }
    }

    pub fn on_notice(&mut self, n: &Notice, ctx: &mut Ctx) {
        let Some(i) = n.session.0.checked_sub(self.first).map(|i| i as usize) else {
            return;
        };
        if i >= self.swaps.len() {
            return;
        }
        let c = n.chain;
        let counter = self.counter[c.index()];
        match &n.event {
            ContractEvent::Locked { h_pre, locker, .. } if *locker == counter => {
                let swap = &mut self.swaps[i];
                if swap.acted {
                    return;
                }
                if self.initiator && c == ChainId::Beta && Some(*h_pre) == swap.h_pre {
                    swap.acted = true;
                    let (session, pre) = (swap.session, swap.pre.clone().expect("initiator"));
                    self.submit(ctx, ChainId::Beta, session, TxPayload::Update { pre });
                } else if !self.initiator && c == ChainId::Alpha {
                    swap.acted = true;
                    swap.h_pre = Some(*h_pre);
                    let (session, amount) = (swap.session, swap.amount);
                    let offer = HtlcOffer {
                        payee: self.counter[ChainId::Beta.index()],
                        amount,
                    };
                    self.submit(ctx, ChainId::Beta, session, TxPayload::Lock { h_pre: *h_pre, offer: Some(offer) });
                }
            }
            ContractEvent::Success { pre, .. } => {
                let swap = &mut self.swaps[i];
                swap.finished[c.index()] = true;
                if !self.initiator && c == ChainId::Beta && Some(hash(pre)) == swap.h_pre {
                    let session = swap.session;
                    self.submit(ctx, ChainId::Alpha, session, TxPayload::Update { pre: pre.clone() });
                }
            }
            ContractEvent::Refunded | ContractEvent::Terminated { .. } => {
                self.swaps[i].finished[c.index()] = true;
            }
            _ => {}
        }
    }
}
