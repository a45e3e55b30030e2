//! Ed25519 signatures. Addresses are the 32-byte verifying keys.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{hash_parts, hex_decode, hex_encode};
use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; 32]);

impl Address {
    pub fn short(&self) -> String {
        hex_encode(&self.0[..4])
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let Ok(raw): Result<[u8; 64], _> = sig.0.as_slice().try_into() else {
            return false;
        };
        vk.verify(msg, &ed25519_dalek::Signature::from_bytes(&raw)).is_ok()
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.short())
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short())
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex_encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let raw = hex_decode(&s).ok_or_else(|| serde::de::Error::custom("bad hex address"))?;
        let arr: [u8; 32] = raw
            .try_into()
            .map_err(|_| serde::de::Error::custom("address must be 32 bytes"))?;
        Ok(Address(arr))
    }
}

impl Canonical for Address {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for Address {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Address(dec.fixed::<32>()?))
    }
}

/// Raw signature bytes. Kept as a vector so malformed signatures can travel
/// through the system and simply fail verification.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len().min(4);
        write!(f, "Signature({}..)", hex_encode(&self.0[..n]))
    }
}

impl Canonical for Signature {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for Signature {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Signature(dec.bytes()?.to_vec()))
    }
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    /// Deterministic key for a named participant in a seeded run.
    pub fn derive(label: &str, seed: u64) -> Self {
        let d = hash_parts(&[b"crosschannel/key", label.as_bytes(), &seed.to_be_bytes()]);
        Self::from_seed(d.0)
    }

    pub fn address(&self) -> Address {
        Address(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes().to_vec())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", self.address().short())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_then_verify() {
        let kp = KeyPair::derive("alice", 1);
        let sig = kp.sign(b"hello");
        assert!(kp.address().verify(b"hello", &sig));
        assert!(!kp.address().verify(b"hellp", &sig));
        assert!(!KeyPair::derive("bob", 1).address().verify(b"hello", &sig));
    }

    #[test]
    fn every_single_byte_flip_fails() {
        let kp = KeyPair::derive("carol", 7);
        let msg = b"receipt body".to_vec();
        let sig = kp.sign(&msg);
        for i in 0..msg.len() {
            let mut m = msg.clone();
            m[i] ^= 0x01;
            assert!(!kp.address().verify(&m, &sig));
        }
        for i in 0..sig.0.len() {
            let mut s = sig.clone();
            s.0[i] ^= 0x01;
            assert!(!kp.address().verify(&msg, &s));
        }
    }

    #[test]
    fn malformed_signatures_do_not_panic() {
        let kp = KeyPair::derive("dave", 0);
        assert!(!kp.address().verify(b"x", &Signature(vec![])));
        assert!(!kp.address().verify(b"x", &Signature(vec![0; 63])));
        assert!(!Address([0xff; 32]).verify(b"x", &kp.sign(b"x")));
    }

    #[test]
    fn derivation_is_deterministic() {
        assert_eq!(KeyPair::derive("a", 3).address(), KeyPair::derive("a", 3).address());
        assert_ne!(KeyPair::derive("a", 3).address(), KeyPair::derive("a", 4).address());
    }
}
