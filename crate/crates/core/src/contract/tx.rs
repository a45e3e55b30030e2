//! On-chain transaction envelope and payloads.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::settlement::CloseSubmission;
use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};
use crate::crypto::{hash, Address, Digest, KeyPair, Signature};
use crate::types::{Amount, ChainId, SessionId};
use crate::vss::{Commitments, KeyShare};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    Open,
    Upload,
    Appeal,
    Close,
    Lock,
    Update,
    UpdateEIE,
    Recover,
}

impl TxKind {
    pub const ALL: [TxKind; 8] = [
        TxKind::Open,
        TxKind::Upload,
        TxKind::Appeal,
        TxKind::Close,
        TxKind::Lock,
        TxKind::Update,
        TxKind::UpdateEIE,
        TxKind::Recover,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TxKind::Open => "Open",
            TxKind::Upload => "Upload",
            TxKind::Appeal => "Appeal",
            TxKind::Close => "Close",
            TxKind::Lock => "Lock",
            TxKind::Update => "Update",
            TxKind::UpdateEIE => "UpdateEIE",
            TxKind::Recover => "Recover",
        }
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Published key metadata: `h(k)`, `(n, t)`, the per-share hashes and the
/// dealing commitments miners and the contract verify shares against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UploadPayload {
    pub h_k: Digest,
    pub n: u32,
    pub t: u32,
    pub share_hashes: Vec<Digest>,
    pub commitments: Commitments,
}

/// A direct payment locked under `h_pre`, used when a session carries a
/// single HTLC transfer instead of a channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HtlcOffer {
    pub payee: Address,
    pub amount: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxPayload {
    Open { parties: [Address; 2], v: Amount },
    Upload(UploadPayload),
    /// The dealer's signature over `(share, sn)` as received by the miner.
    Appeal { sig: Signature, share: KeyShare, sn: u64 },
    Close(CloseSubmission),
    Lock { h_pre: Digest, offer: Option<HtlcOffer> },
    Update { pre: Vec<u8> },
    UpdateEIE { pre: Vec<u8>, h_k: Digest },
    Recover { share_s: Option<KeyShare>, share_r: Option<KeyShare> },
}

impl TxPayload {
    pub fn kind(&self) -> TxKind {
        match self {
            TxPayload::Open { .. } => TxKind::Open,
            TxPayload::Upload(_) => TxKind::Upload,
            TxPayload::Appeal { .. } => TxKind::Appeal,
            TxPayload::Close(_) => TxKind::Close,
            TxPayload::Lock { .. } => TxKind::Lock,
            TxPayload::Update { .. } => TxKind::Update,
            TxPayload::UpdateEIE { .. } => TxKind::UpdateEIE,
            TxPayload::Recover { .. } => TxKind::Recover,
        }
    }
}

impl Canonical for HtlcOffer {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.payee).u64(self.amount);
    }
}

impl Decode for HtlcOffer {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(HtlcOffer {
            payee: dec.item()?,
            amount: dec.u64()?,
        })
    }
}

/// Appeal evidence is the dealer's signature over this byte string.
pub fn share_message(share: &KeyShare, sn: u64) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str("share").item(share).u64(sn);
    enc.finish()
}

impl Canonical for TxPayload {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.kind().tag());
        match self {
            TxPayload::Open { parties, v } => {
                enc.item(&parties[0]).item(&parties[1]).u64(*v);
            }
            TxPayload::Upload(u) => {
                enc.item(&u.h_k)
                    .u64(u.n as u64)
                    .u64(u.t as u64)
                    .list(&u.share_hashes)
                    .item(&u.commitments);
            }
            TxPayload::Appeal { sig, share, sn } => {
                enc.item(sig).item(share).u64(*sn);
            }
            TxPayload::Close(c) => {
                enc.item(c);
            }
            TxPayload::Lock { h_pre, offer } => {
                enc.item(h_pre).option(offer.as_ref());
            }
            TxPayload::Update { pre } => {
                enc.bytes(pre);
            }
            TxPayload::UpdateEIE { pre, h_k } => {
                enc.bytes(pre).item(h_k);
            }
            TxPayload::Recover { share_s, share_r } => {
                enc.option(share_s.as_ref()).option(share_r.as_ref());
            }
        }
    }
}

fn small(v: u64, what: &'static str) -> Result<u32, CodecError> {
    u32::try_from(v).map_err(|_| CodecError::Invalid(what))
}

impl Decode for TxPayload {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let tag = dec.u8()?;
        let kind = TxKind::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or(CodecError::UnknownTag(tag))?;
        Ok(match kind {
            TxKind::Open => TxPayload::Open {
                parties: [dec.item()?, dec.item()?],
                v: dec.u64()?,
            },
            TxKind::Upload => TxPayload::Upload(UploadPayload {
                h_k: dec.item()?,
                n: small(dec.u64()?, "n")?,
                t: small(dec.u64()?, "t")?,
                share_hashes: dec.list()?,
                commitments: dec.item()?,
            }),
            TxKind::Appeal => TxPayload::Appeal {
                sig: dec.item()?,
                share: dec.item()?,
                sn: dec.u64()?,
            },
            TxKind::Close => TxPayload::Close(dec.item()?),
            TxKind::Lock => TxPayload::Lock {
                h_pre: dec.item()?,
                offer: dec.option()?,
            },
            TxKind::Update => TxPayload::Update {
                pre: dec.bytes()?.to_vec(),
            },
            TxKind::UpdateEIE => TxPayload::UpdateEIE {
                pre: dec.bytes()?.to_vec(),
                h_k: dec.item()?,
            },
            TxKind::Recover => TxPayload::Recover {
                share_s: dec.option()?,
                share_r: dec.option()?,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OnChainTx {
    pub chain: ChainId,
    pub session: SessionId,
    pub sender: Address,
    pub payload: TxPayload,
    pub sig: Signature,
}

impl OnChainTx {
    fn body_bytes(chain: ChainId, session: SessionId, sender: &Address, payload: &TxPayload) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str("tx").item(&chain).item(&session).item(sender).item(payload);
        enc.finish()
    }

    pub fn new_signed(key: &KeyPair, chain: ChainId, session: SessionId, payload: TxPayload) -> Self {
        let sender = key.address();
        let sig = key.sign(&Self::body_bytes(chain, session, &sender, &payload));
        OnChainTx {
            chain,
            session,
            sender,
            payload,
            sig,
        }
    }

    pub fn kind(&self) -> TxKind {
        self.payload.kind()
    }

    pub fn verify(&self) -> bool {
        self.sender.verify(
            &Self::body_bytes(self.chain, self.session, &self.sender, &self.payload),
            &self.sig,
        )
    }

    pub fn id(&self) -> Digest {
        hash(&self.to_canonical_bytes())
    }

    /// Size on the wire, used for bandwidth accounting.
    pub fn wire_len(&self) -> usize {
        self.to_canonical_bytes().len()
    }
}

impl Canonical for OnChainTx {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.chain)
            .item(&self.session)
            .item(&self.sender)
            .item(&self.payload)
            .item(&self.sig);
    }
}

impl Decode for OnChainTx {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(OnChainTx {
            chain: dec.item()?,
            session: dec.item()?,
            sender: dec.item()?,
            payload: dec.item()?,
            sig: dec.item()?,
        })
    }
}
