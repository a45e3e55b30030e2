//! Off-chain messages exchanged between parties and miners.

use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};
use crate::crypto::{Address, Signature};
use crate::proof::RelationPublicInputs;
use crate::types::{ChainId, SessionId};
use crate::vss::KeyShare;

use super::{ChannelPath, Receipt, SubReceipt};

/// `(π, m̄, h(m), h(k))` plus the VSS parameters the proof was made for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExchangeMsg {
    pub chain: ChainId,
    pub session: SessionId,
    pub proof: Vec<u8>,
    pub publics: RelationPublicInputs,
}

impl Canonical for ExchangeMsg {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.chain)
            .item(&self.session)
            .bytes(&self.proof)
            .item(&self.publics);
    }
}

impl Decode for ExchangeMsg {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(ExchangeMsg {
            chain: dec.item()?,
            session: dec.item()?,
            proof: dec.bytes()?.to_vec(),
            publics: dec.item()?,
        })
    }
}

/// A key share for a bound miner, signed by the dealer together with `sn`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareMsg {
    pub chain: ChainId,
    pub session: SessionId,
    pub share: KeyShare,
    pub sn: u64,
    pub sig: Signature,
}

impl Canonical for ShareMsg {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.chain)
            .item(&self.session)
            .item(&self.share)
            .u64(self.sn)
            .item(&self.sig);
    }
}

impl Decode for ShareMsg {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(ShareMsg {
            chain: dec.item()?,
            session: dec.item()?,
            share: dec.item()?,
            sn: dec.u64()?,
            sig: dec.item()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OffChain {
    Receipt(Receipt),
    /// The payee of `tr` asks its payer for an `Sr` naming `counterparty`.
    SrRequest { tr: Receipt, counterparty: Address },
    SrGrant(SubReceipt),
    SubChannelOffer(SubReceipt),
    SubChannelAccept { path: ChannelPath },
    /// Everything at or below `path` has finished exchanging.
    SubtreeDone { path: ChannelPath },
    Exchange(Box<ExchangeMsg>),
    Share(Box<ShareMsg>),
}

impl OffChain {
    pub fn tag(&self) -> u8 {
        match self {
            OffChain::Receipt(_) => 0,
            OffChain::SrRequest { .. } => 1,
            OffChain::SrGrant(_) => 2,
            OffChain::SubChannelOffer(_) => 3,
            OffChain::SubChannelAccept { .. } => 4,
            OffChain::SubtreeDone { .. } => 5,
            OffChain::Exchange(_) => 6,
            OffChain::Share(_) => 7,
        }
    }
}

impl Canonical for OffChain {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
        match self {
            OffChain::Receipt(r) => enc.item(r),
            OffChain::SrRequest { tr, counterparty } => enc.item(tr).item(counterparty),
            OffChain::SrGrant(sr) | OffChain::SubChannelOffer(sr) => enc.item(sr),
            OffChain::SubChannelAccept { path } | OffChain::SubtreeDone { path } => enc.item(path),
            OffChain::Exchange(m) => enc.item(m.as_ref()),
            OffChain::Share(m) => enc.item(m.as_ref()),
        };
    }
}

impl Decode for OffChain {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.u8()? {
            0 => OffChain::Receipt(dec.item()?),
            1 => OffChain::SrRequest {
                tr: dec.item()?,
                counterparty: dec.item()?,
            },
            2 => OffChain::SrGrant(dec.item()?),
            3 => OffChain::SubChannelOffer(dec.item()?),
            4 => OffChain::SubChannelAccept { path: dec.item()? },
            5 => OffChain::SubtreeDone { path: dec.item()? },
            6 => OffChain::Exchange(Box::new(dec.item()?)),
            7 => OffChain::Share(Box::new(dec.item()?)),
            t => return Err(CodecError::UnknownTag(t)),
        })
    }
}
