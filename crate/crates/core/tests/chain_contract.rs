use std::collections::BTreeMap;

use crosschannel::chain::{Chain, ChainConfig, SubmitError};
use crosschannel::channel::{ChannelPath, FinalState, Receipt};
use crosschannel::codec::Canonical;
use crosschannel::contract::{
    share_message, CloseSubmission, ContractConfig, ContractEvent, OnChainTx, SessionState, TxPayload, UploadPayload,
};
use crosschannel::crypto::{hash, GroupParams, KeyPair};
use crosschannel::types::{ChainId, SessionId};
use crosschannel::vss;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const SID: SessionId = SessionId(7);

struct World {
    chain: Chain,
    s: KeyPair,
    r: KeyPair,
    miners: Vec<KeyPair>,
    now: u64,
}

impl World {
    fn new(cross_chain: bool, assist: Option<u64>) -> Self {
        let s = KeyPair::derive("S", 1);
        let r = KeyPair::derive("R", 1);
        let miners: Vec<KeyPair> = (0..20).map(|i| KeyPair::derive(&format!("M{i}"), 1)).collect();
        let chain = Chain::new(ChainConfig {
            id: ChainId::Alpha,
            block_interval: 2,
            miners: miners.iter().map(KeyPair::address).collect(),
            genesis: BTreeMap::from([(s.address(), 500), (r.address(), 500)]),
            contract: ContractConfig {
                t1: 10,
                t2: 10,
                lock_window: 30,
                assist_window: assist,
                assist_reward_bps: 100,
                cross_chain,
                params: GroupParams::standard(),
            },
        });
        World {
            chain,
            s,
            r,
            miners,
            now: 0,
        }
    }

    fn tx(&mut self, key: &KeyPair, payload: TxPayload) {
        self.chain
            .submit(OnChainTx::new_signed(key, ChainId::Alpha, SID, payload))
            .unwrap();
    }

    /// Advances to and produces the next block, returning its event labels.
    fn block(&mut self) -> Vec<String> {
        self.now += 1;
        while !self.chain.is_block_tick(self.now) {
            self.now += 1;
        }
        self.chain.produce_block(self.now).iter().map(|e| e.result.clone()).collect()
    }

    fn state(&self) -> SessionState {
        self.chain.session_state(SID).unwrap()
    }

    fn open(&mut self, vs: u64, vr: u64) {
        let parties = [self.s.address(), self.r.address()];
        let (s, r) = (self.s.clone(), self.r.clone());
        self.tx(&s, TxPayload::Open { parties, v: vs });
        self.tx(&r, TxPayload::Open { parties, v: vr });
        self.block();
    }

    fn close_both(&mut self, receipts: Vec<Receipt>) {
        let path = ChannelPath::root(ChainId::Alpha, SID);
        let deposits = self.chain.session(SID).unwrap().deposits.clone();
        for k in [self.s.clone(), self.r.clone()] {
            let sub = CloseSubmission {
                finals: vec![FinalState::new_signed(&k, path, &deposits)],
                sr_list: vec![],
                tr_list: receipts.clone(),
            };
            self.tx(&k, TxPayload::Close(sub));
        }
        self.block();
        for _ in 0..6 {
            self.block();
        }
    }
}

#[test]
fn open_escrows_both_deposits() {
    let mut w = World::new(true, None);
    w.open(100, 100);
    assert_eq!(w.state(), SessionState::OpenCE);
    assert_eq!(w.chain.balance(&w.s.address()).unwrap(), 400);
    assert_eq!(w.chain.contract().escrow_total(), 200);
    assert_eq!(w.chain.total_value(), w.chain.total_supply());
}

#[test]
fn open_beyond_balance_fails_without_escrow() {
    let mut w = World::new(true, None);
    let parties = [w.s.address(), w.r.address()];
    let s = w.s.clone();
    w.tx(&s, TxPayload::Open { parties, v: 501 });
    let ev = w.block();
    assert!(ev[0].starts_with("failed"));
    assert_eq!(w.chain.balance(&w.s.address()).unwrap(), 500);
    assert_eq!(w.chain.contract().escrow_total(), 0);
}

#[test]
fn zero_deposits_open() {
    let mut w = World::new(true, None);
    w.open(0, 0);
    assert_eq!(w.state(), SessionState::OpenCE);
}

#[test]
fn forged_and_garbled_txs_are_rejected() {
    let mut w = World::new(true, None);
    let parties = [w.s.address(), w.r.address()];
    let mut tx = OnChainTx::new_signed(&w.s, ChainId::Alpha, SID, TxPayload::Open { parties, v: 1 });
    tx.payload = TxPayload::Open { parties, v: 2 };
    assert_eq!(w.chain.submit(tx.clone()), Err(SubmitError::BadSignature));
    assert_eq!(w.chain.mempool_len(), 0);
    let mut bytes = tx.to_canonical_bytes();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(w.chain.submit_raw(&bytes), Err(SubmitError::Decode(_))));
}

#[test]
fn ce_session_closes_from_open_ce_and_swaps_with_preimage() {
    let mut w = World::new(true, None);
    w.open(100, 100);
    let path = ChannelPath::root(ChainId::Alpha, SID);
    let tr = Receipt::new_signed(&w.s, path, 0, w.r.address(), 30);
    w.close_both(vec![tr]);
    assert_eq!(w.state(), SessionState::Close);
    let pre = b"a 256-bit random preimage value!".to_vec();
    let s = w.s.clone();
    w.tx(&s, TxPayload::Lock { h_pre: hash(&pre), offer: None });
    w.tx(&s, TxPayload::Lock { h_pre: hash(&pre), offer: None });
    let ev = w.block();
    assert!(ev[1].starts_with("failed"), "{ev:?}");
    let r = w.r.clone();
    w.tx(&r, TxPayload::Update { pre: b"wrong".to_vec() });
    w.tx(&r, TxPayload::Update { pre });
    let ev = w.block();
    assert!(ev[0].starts_with("failed"));
    assert_eq!(w.state(), SessionState::Success);
    assert_eq!(w.chain.balance(&w.s.address()).unwrap(), 470);
    assert_eq!(w.chain.balance(&w.r.address()).unwrap(), 530);
    assert!(w.chain.conservation_failures().is_empty());
}

#[test]
fn lock_before_close_is_rejected() {
    let mut w = World::new(true, None);
    w.open(10, 10);
    let s = w.s.clone();
    w.tx(&s, TxPayload::Lock { h_pre: hash(b"p"), offer: None });
    let ev = w.block();
    assert!(ev[0].starts_with("failed"));
    assert_eq!(w.state(), SessionState::OpenCE);
}

#[test]
fn no_preimage_refunds_after_deadline() {
    let mut w = World::new(true, Some(50));
    w.open(100, 100);
    w.close_both(vec![]);
    let s = w.s.clone();
    w.tx(&s, TxPayload::Lock { h_pre: hash(b"p"), offer: None });
    w.block();
    while w.state() == SessionState::Lock {
        w.block();
    }
    assert_eq!(w.state(), SessionState::Refunded);
    let locked_at = w.chain.session(SID).unwrap().history.iter().find(|h| h.1 == SessionState::Lock).unwrap().0;
    assert!(w.now > locked_at + 50);
    assert_eq!(w.chain.balance(&w.s.address()).unwrap(), 500);
}

#[test]
fn miner_assist_only_inside_window_and_pays_reward() {
    let mut w = World::new(true, Some(60));
    w.open(100, 100);
    let tr = Receipt::new_signed(&w.s, ChannelPath::root(ChainId::Alpha, SID), 0, w.r.address(), 50);
    w.close_both(vec![tr]);
    let pre = b"preimage".to_vec();
    let s = w.s.clone();
    w.tx(&s, TxPayload::Lock { h_pre: hash(&pre), offer: None });
    w.block();
    let m = w.miners[3].clone();
    w.tx(&m, TxPayload::Update { pre: pre.clone() });
    assert!(w.block()[0].starts_with("failed"));
    let lock_deadline = w.chain.session(SID).unwrap().lock_deadline.unwrap();
    while w.now <= lock_deadline {
        w.block();
    }
    let r = w.r.clone();
    w.tx(&r, TxPayload::Update { pre: pre.clone() });
    assert!(w.block()[0].starts_with("failed"));
    w.tx(&m, TxPayload::Update { pre });
    w.block();
    assert_eq!(w.state(), SessionState::Success);
    // R's allocation is 150; 1% goes to the miner.
    assert_eq!(w.chain.balance(&m.address()).unwrap(), 1);
    assert_eq!(w.chain.balance(&w.r.address()).unwrap(), 400 + 149);
}

#[test]
fn one_sided_close_terminates_after_t2() {
    let mut w = World::new(true, None);
    w.open(100, 100);
    let s = w.s.clone();
    w.tx(&s, TxPayload::Close(CloseSubmission::default()));
    for _ in 0..8 {
        w.block();
    }
    assert_eq!(w.state(), SessionState::Terminated);
    assert_eq!(w.chain.balance(&w.s.address()).unwrap(), 500);
}

#[test]
fn intra_chain_settles_at_close() {
    let mut w = World::new(false, None);
    w.open(100, 100);
    let tr = Receipt::new_signed(&w.r, ChannelPath::root(ChainId::Alpha, SID), 0, w.s.address(), 5);
    w.close_both(vec![tr]);
    assert_eq!(w.state(), SessionState::Success);
    assert_eq!(w.chain.balance(&w.s.address()).unwrap(), 505);
}

struct Eie {
    w: World,
    dealing: vss::Dealing,
    bindings: Vec<crosschannel::crypto::Address>,
    sn: u64,
}

fn eie_upload(seed: u64, t: u32, n: u32) -> Eie {
    let mut w = World::new(true, None);
    w.open(100, 100);
    let p = GroupParams::standard();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let k = p.random_scalar(&mut rng);
    let dealing = vss::share(p, &k, t, n, &mut rng).unwrap();
    let s = w.s.clone();
    w.tx(
        &s,
        TxPayload::Upload(UploadPayload {
            h_k: hash(&k.to_bytes32()),
            n,
            t,
            share_hashes: dealing.share_hashes(),
            commitments: dealing.commitments.clone(),
        }),
    );
    w.block();
    let ev = w.chain.events().iter().rev().find_map(|e| match &e.detail {
        Some(ContractEvent::UploadBound { bindings, sn, .. }) => Some((bindings.clone(), *sn)),
        _ => None,
    });
    let (bindings, sn) = ev.expect("upload bound");
    Eie { w, dealing, bindings, sn }
}

fn miner_key(w: &World, addr: &crosschannel::crypto::Address) -> KeyPair {
    w.miners.iter().find(|m| m.address() == *addr).unwrap().clone()
}

#[test]
fn upload_binds_distinct_miners_and_opens_after_t1() {
    let mut e = eie_upload(1, 2, 4);
    let mut uniq = e.bindings.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), 4);
    let deadline = e.w.chain.session(SID).unwrap().appeal_deadline.unwrap();
    while e.w.state() == SessionState::OpenCE {
        e.w.block();
    }
    assert_eq!(e.w.state(), SessionState::Open);
    assert_eq!(e.w.now, deadline);
}

#[test]
fn fake_share_appeal_terminates_and_stale_serial_is_rejected() {
    let mut e = eie_upload(2, 2, 4);
    let p = GroupParams::standard();
    let mut fake = e.dealing.shares[0].clone();
    fake.s = p.add(&fake.s, &p.scalar(1));
    let sig = e.w.s.sign(&share_message(&fake, e.sn ^ 1));
    let m = miner_key(&e.w, &e.bindings[0]);
    e.w.tx(&m, TxPayload::Appeal { sig, share: fake.clone(), sn: e.sn ^ 1 });
    assert!(e.w.block()[0].contains("serial"));
    assert_eq!(e.w.state(), SessionState::OpenCE);

    let genuine = e.dealing.shares[0].clone();
    let sig = e.w.s.sign(&share_message(&genuine, e.sn));
    e.w.tx(&m, TxPayload::Appeal { sig, share: genuine, sn: e.sn });
    assert!(e.w.block()[0].contains("genuine"));

    let sig = e.w.s.sign(&share_message(&fake, e.sn));
    e.w.tx(&m, TxPayload::Appeal { sig, share: fake, sn: e.sn });
    e.w.block();
    assert_eq!(e.w.state(), SessionState::Terminated);
    assert_eq!(e.w.chain.balance(&e.w.s.address()).unwrap(), 500);
    assert_eq!(e.w.chain.balance(&e.w.r.address()).unwrap(), 500);
}

#[test]
fn appeal_after_window_is_rejected() {
    let mut e = eie_upload(3, 2, 4);
    let p = GroupParams::standard();
    let deadline = e.w.chain.session(SID).unwrap().appeal_deadline.unwrap();
    while e.w.now < deadline {
        e.w.block();
    }
    let mut fake = e.dealing.shares[1].clone();
    fake.r = p.add(&fake.r, &p.scalar(1));
    let sig = e.w.s.sign(&share_message(&fake, e.sn));
    let m = miner_key(&e.w, &e.bindings[1]);
    e.w.tx(&m, TxPayload::Appeal { sig, share: fake, sn: e.sn });
    assert!(e.w.block()[0].starts_with("failed"));
    assert_eq!(e.w.state(), SessionState::Open);
}

#[test]
fn recovery_publishes_at_threshold() {
    let mut e = eie_upload(4, 2, 3);
    while e.w.state() != SessionState::Open {
        e.w.block();
    }
    e.w.close_both(vec![]);
    let pre = b"k".to_vec();
    let s = e.w.s.clone();
    e.w.tx(&s, TxPayload::Lock { h_pre: hash(&pre), offer: None });
    e.w.block();
    let r = e.w.r.clone();
    let h_k = e.w.chain.session(SID).unwrap().upload.as_ref().unwrap().payload.h_k;
    e.w.tx(&r, TxPayload::UpdateEIE { pre, h_k });
    e.w.block();
    assert!(e.w.chain.session(SID).unwrap().recovery_requested);

    let outsider = e.w.miners.iter().find(|m| !e.bindings.contains(&m.address())).unwrap().clone();
    e.w.tx(&outsider, TxPayload::Recover { share_s: Some(e.dealing.shares[0].clone()), share_r: None });
    let mut bad = e.dealing.shares[1].clone();
    bad.s = GroupParams::standard().scalar(3);
    let m1 = miner_key(&e.w, &e.bindings[1]);
    e.w.tx(&m1, TxPayload::Recover { share_s: Some(bad), share_r: None });
    let ev = e.w.block();
    assert!(ev.iter().all(|e| e.starts_with("failed")), "{ev:?}");

    for i in 0..3 {
        let m = miner_key(&e.w, &e.bindings[i]);
        e.w.tx(&m, TxPayload::Recover { share_s: Some(e.dealing.shares[i].clone()), share_r: None });
    }
    let ev = e.w.block();
    assert_eq!(ev.iter().filter(|e| e.contains("shares_published")).count(), 1, "{ev:?}");
    let published = e.w.chain.events().iter().find_map(|e| match &e.detail {
        Some(ContractEvent::SharesPublished { shares }) => Some(shares.clone()),
        _ => None,
    });
    let shares = published.unwrap();
    assert_eq!(shares.len(), 2);
    let k = vss::recover(GroupParams::standard(), &shares, 2).unwrap();
    assert_eq!(hash(&k.to_bytes32()), h_k);
}

#[test]
fn replay_gives_identical_block_hashes() {
    let run = || {
        let mut w = World::new(true, None);
        w.open(100, 100);
        let tr = Receipt::new_signed(&w.s, ChannelPath::root(ChainId::Alpha, SID), 0, w.r.address(), 3);
        w.close_both(vec![tr]);
        w.chain.blocks().iter().map(|b| b.hash).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
