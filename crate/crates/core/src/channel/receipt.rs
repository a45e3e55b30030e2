//! Off-chain receipts and the deterministic balance fold over them.

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};
use crate::crypto::{hash, hash_parts, Address, Digest, KeyPair, Signature};
use crate::types::{Amount, ChainId, SessionId};

/// Position of a channel in the hierarchy. The level-0 id is derived from
/// the contract session; each sub-channel id hashes its parent's id with the
/// funding receipt, so paths cannot be forged across trees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelPath {
    pub level: u32,
    pub id: Digest,
}

impl ChannelPath {
    pub fn root(chain: ChainId, session: SessionId) -> Self {
        ChannelPath {
            level: 0,
            id: hash_parts(&[b"crosschannel/channel/root", &[chain.tag()], &session.0.to_be_bytes()]),
        }
    }

    pub fn child(&self, funding: &Receipt) -> Self {
        ChannelPath {
            level: self.level + 1,
            id: hash_parts(&[b"crosschannel/channel/sub", self.id.as_bytes(), funding.id().as_bytes()]),
        }
    }
}

impl Canonical for ChannelPath {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.level as u64).item(&self.id);
    }
}

impl Decode for ChannelPath {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(ChannelPath {
            level: u32::try_from(dec.u64()?).map_err(|_| CodecError::Invalid("level"))?,
            id: dec.item()?,
        })
    }
}

/// `Tr`: `snd` pays `v` to `rcv` inside one channel. `seq` counts the
/// sender's receipts in that channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub channel: ChannelPath,
    pub seq: u64,
    pub snd: Address,
    pub rcv: Address,
    pub v: Amount,
    pub sig: Signature,
}

impl Receipt {
    fn body_bytes(channel: &ChannelPath, seq: u64, snd: &Address, rcv: &Address, v: Amount) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str("tr").item(channel).u64(seq).item(snd).item(rcv).u64(v);
        enc.finish()
    }

    pub fn new_signed(key: &KeyPair, channel: ChannelPath, seq: u64, rcv: Address, v: Amount) -> Self {
        let snd = key.address();
        let sig = key.sign(&Self::body_bytes(&channel, seq, &snd, &rcv, v));
        Receipt {
            channel,
            seq,
            snd,
            rcv,
            v,
            sig,
        }
    }

    pub fn body(&self) -> Vec<u8> {
        Self::body_bytes(&self.channel, self.seq, &self.snd, &self.rcv, self.v)
    }

    /// Identity of the signed content, independent of signature bytes.
    pub fn id(&self) -> Digest {
        hash(&self.body())
    }

    pub fn verify(&self) -> bool {
        self.snd.verify(&self.body(), &self.sig)
    }
}

impl Canonical for Receipt {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.channel)
            .u64(self.seq)
            .item(&self.snd)
            .item(&self.rcv)
            .u64(self.v)
            .item(&self.sig);
    }
}

impl Decode for Receipt {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Receipt {
            channel: dec.item()?,
            seq: dec.u64()?,
            snd: dec.item()?,
            rcv: dec.item()?,
            v: dec.u64()?,
            sig: dec.item()?,
        })
    }
}

/// `Sr`: the payer of `tr` lets its payee spend `tr.v` in a sub-channel with
/// `counterparty`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubReceipt {
    pub counterparty: Address,
    pub tr: Receipt,
    pub sig: Signature,
}

impl SubReceipt {
    fn body_bytes(counterparty: &Address, tr: &Receipt) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str("sr").item(counterparty).item(tr);
        enc.finish()
    }

    pub fn new_signed(payer: &KeyPair, counterparty: Address, tr: Receipt) -> Self {
        let sig = payer.sign(&Self::body_bytes(&counterparty, &tr));
        SubReceipt { counterparty, tr, sig }
    }

    pub fn id(&self) -> Digest {
        hash(&Self::body_bytes(&self.counterparty, &self.tr))
    }

    /// Signed by the payer of an intact `Tr`, naming someone other than the payee.
    pub fn verify(&self) -> bool {
        self.tr.verify()
            && self.counterparty != self.tr.rcv
            && self.tr.snd.verify(&Self::body_bytes(&self.counterparty, &self.tr), &self.sig)
    }

    pub fn child_path(&self) -> ChannelPath {
        self.tr.channel.child(&self.tr)
    }

    /// Initial state of the sub-channel: `[payee -> v, counterparty -> 0]`.
    pub fn child_funding(&self) -> BTreeMap<Address, Amount> {
        BTreeMap::from([(self.tr.rcv, self.tr.v), (self.counterparty, 0)])
    }
}

impl Canonical for SubReceipt {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.counterparty).item(&self.tr).item(&self.sig);
    }
}

impl Decode for SubReceipt {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(SubReceipt {
            counterparty: dec.item()?,
            tr: dec.item()?,
            sig: dec.item()?,
        })
    }
}

/// A participant's claimed balances for one channel. Signed by the submitter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinalState {
    pub channel: ChannelPath,
    pub balances: Vec<(Address, Amount)>,
    pub submitter: Address,
    pub sig: Signature,
}

impl FinalState {
    fn body_bytes(channel: &ChannelPath, balances: &[(Address, Amount)], submitter: &Address) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str("final").item(channel).list(balances).item(submitter);
        enc.finish()
    }

    pub fn new_signed(key: &KeyPair, channel: ChannelPath, balances: &BTreeMap<Address, Amount>) -> Self {
        let balances: Vec<_> = balances.iter().map(|(a, v)| (*a, *v)).collect();
        let submitter = key.address();
        let sig = key.sign(&Self::body_bytes(&channel, &balances, &submitter));
        FinalState {
            channel,
            balances,
            submitter,
            sig,
        }
    }

    pub fn verify(&self) -> bool {
        self.submitter
            .verify(&Self::body_bytes(&self.channel, &self.balances, &self.submitter), &self.sig)
    }
}

impl Canonical for FinalState {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.channel)
            .list(&self.balances)
            .item(&self.submitter)
            .item(&self.sig);
    }
}

impl Decode for FinalState {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(FinalState {
            channel: dec.item()?,
            balances: dec.list()?,
            submitter: dec.item()?,
            sig: dec.item()?,
        })
    }
}

/// Rules for folding one channel's receipts.
#[derive(Clone, Debug)]
pub struct ChannelSpec {
    pub path: ChannelPath,
    pub initial: BTreeMap<Address, Amount>,
    /// Sub-channels only let their funder pay.
    pub funder_only: Option<Address>,
}

impl ChannelSpec {
    pub fn participants(&self) -> impl Iterator<Item = &Address> {
        self.initial.keys()
    }

    pub fn funding(&self) -> Amount {
        self.initial.values().sum()
    }

    fn admits(&self, r: &Receipt) -> bool {
        r.channel == self.path
            && r.snd != r.rcv
            && self.initial.contains_key(&r.snd)
            && self.initial.contains_key(&r.rcv)
            && self.funder_only.is_none_or(|f| f == r.snd)
            && r.verify()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Equivocation {
    pub snd: Address,
    pub seq: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FoldResult {
    pub balances: BTreeMap<Address, Amount>,
    /// Ids of receipts that moved value, in fold order.
    pub applied: Vec<Digest>,
    /// Receipts that were admitted but skipped for insufficient balance.
    pub overspends: Vec<Digest>,
}

/// Folds receipts in `(seq, snd)` order. Receipts in `delegated` debit the
/// payer but do not credit the payee: their value moves into a sub-channel.
/// Duplicates of one signed body count once; two different bodies under the
/// same `(snd, seq)` are an equivocation and fail the channel.
pub fn fold_channel<'a>(
    spec: &ChannelSpec,
    receipts: impl IntoIterator<Item = &'a Receipt>,
    delegated: &BTreeSet<Digest>,
) -> Result<FoldResult, Equivocation> {
    let mut slots: BTreeMap<(u64, Address), &Receipt> = BTreeMap::new();
    for r in receipts {
        if !spec.admits(r) {
            continue;
        }
        if let Some(prev) = slots.insert((r.seq, r.snd), r) {
            if prev.id() != r.id() {
                return Err(Equivocation { snd: r.snd, seq: r.seq });
            }
        }
    }
    let mut out = FoldResult {
        balances: spec.initial.clone(),
        ..FoldResult::default()
    };
    for r in slots.values() {
        let id = r.id();
        let have = out.balances[&r.snd];
        if have < r.v {
            out.overspends.push(id);
            continue;
        }
        *out.balances.get_mut(&r.snd).expect("admitted") -= r.v;
        if !delegated.contains(&id) {
            *out.balances.get_mut(&r.rcv).expect("admitted") += r.v;
        }
        out.applied.push(id);
    }
    Ok(out)
}
