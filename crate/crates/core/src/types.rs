//! Identifiers shared across the chain, contract and party layers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};

pub type Tick = u64;
pub type Amount = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainId {
    Alpha,
    Beta,
}

impl ChainId {
    pub const BOTH: [ChainId; 2] = [ChainId::Alpha, ChainId::Beta];

    pub fn other(self) -> ChainId {
        match self {
            ChainId::Alpha => ChainId::Beta,
            ChainId::Beta => ChainId::Alpha,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ChainId::Alpha => "alpha",
            ChainId::Beta => "beta",
        }
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Canonical for ChainId {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
    }
}

impl Decode for ChainId {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        match dec.u8()? {
            0 => Ok(ChainId::Alpha),
            1 => Ok(ChainId::Beta),
            t => Err(CodecError::UnknownTag(t)),
        }
    }
}

/// One contract session (a level-0 channel and everything hanging off it).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Canonical for SessionId {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.0);
    }
}

impl Decode for SessionId {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(SessionId(dec.u64()?))
    }
}
