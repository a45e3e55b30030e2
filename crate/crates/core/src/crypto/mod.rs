//! Hashing, Pedersen commitments, signatures and the block cipher used by the
//! protocol layers. Everything here is deterministic given its inputs.

mod cipher;
mod group;
mod sign;

pub use cipher::{decrypt, encrypt, Ciphertext, HashStreamCipher, Plaintext, SymmetricCipher};
pub use group::{GroupElement, GroupParams, Scalar};
pub use sign::{Address, KeyPair, Signature};

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex_encode(&self.0)
    }

    /// First eight bytes as a big-endian integer; handy for seeding and ids.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let raw = hex_decode(&s).ok_or_else(|| serde::de::Error::custom("bad hex digest"))?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Digest(arr))
    }
}

impl Canonical for Digest {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for Digest {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Digest(dec.fixed::<32>()?))
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the concatenation of several byte strings, each length-prefixed so
/// that distinct splits never collide.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut enc = Encoder::new();
    for p in parts {
        enc.bytes(p);
    }
    hash(&enc.finish())
}

pub(crate) fn hex_encode(bytes: &[u8]) -> String {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push(HEX[(b >> 4) as usize] as char);
        out.push(HEX[(b & 0xf) as usize] as char);
    }
    out
}

pub(crate) fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_matches_sha256_vector() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn abc_matches_sha256_vector() {
        assert_eq!(
            hash(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn deterministic_and_bit_sensitive() {
        let x = b"cross channel receipt".to_vec();
        assert_eq!(hash(&x), hash(&x));
        for byte in 0..x.len() {
            for bit in 0..8 {
                let mut y = x.clone();
                y[byte] ^= 1 << bit;
                assert_ne!(hash(&x), hash(&y));
            }
        }
    }

    #[test]
    fn hash_parts_separates_boundaries() {
        assert_ne!(hash_parts(&[b"ab", b"c"]), hash_parts(&[b"a", b"bc"]));
    }

    #[test]
    fn digest_serde_is_hex() {
        let d = hash(b"x");
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, format!("\"{}\"", d.to_hex()));
        let back: Digest = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }
}
