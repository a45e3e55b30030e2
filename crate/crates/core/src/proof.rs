//! Setup / prove / verify for the verifiable-encryption relation used by the
//! fair exchange: "I know `m` and shares of `k` such that the shares recover
//! `k`, `h(k)` is the published key hash, `Enc(k, m) = m̄`, and `h(m)` is the
//! published plaintext hash".
//!
//! The default backend authenticates the public inputs with a secret MAC key
//! fixed at setup and refuses to prove anything the relation rejects.

use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};
use crate::crypto::{encrypt, hash, hash_parts, Ciphertext, Digest, GroupParams, Plaintext};
use crate::vss::{self, KeyShare};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationPublicInputs {
    pub h_m: Digest,
    pub m_bar: Ciphertext,
    pub h_k: Digest,
    pub t: u32,
    pub n: u32,
}

impl Canonical for RelationPublicInputs {
    fn encode(&self, enc: &mut Encoder) {
        enc.item(&self.h_m)
            .item(&self.m_bar)
            .item(&self.h_k)
            .u64(self.t as u64)
            .u64(self.n as u64);
    }
}

impl Decode for RelationPublicInputs {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(RelationPublicInputs {
            h_m: dec.item()?,
            m_bar: dec.item()?,
            h_k: dec.item()?,
            t: u32::try_from(dec.u64()?).map_err(|_| CodecError::Invalid("t"))?,
            n: u32::try_from(dec.u64()?).map_err(|_| CodecError::Invalid("n"))?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RelationWitness {
    pub m: Plaintext,
    pub k_shares: Vec<KeyShare>,
}

/// The relation together with the group its key shares live in.
#[derive(Clone, Copy, Debug)]
pub struct Relation {
    pub params: &'static GroupParams,
}

impl Relation {
    pub fn new(params: &'static GroupParams) -> Self {
        Relation { params }
    }

    pub fn id(&self) -> Digest {
        hash_parts(&[b"crosschannel/relation/verifiable-encryption/v1", self.params.id().as_bytes()])
    }

    /// Accepts any number of shares from `t` up to `n`, all from one dealing.
    pub fn eval(&self, w: &RelationWitness, x: &RelationPublicInputs) -> bool {
        if x.t == 0 || x.t > x.n || w.k_shares.len() > x.n as usize {
            return false;
        }
        if w.k_shares.iter().any(|s| s.index > x.n) {
            return false;
        }
        let Ok(k) = vss::recover(self.params, &w.k_shares, x.t) else {
            return false;
        };
        let key = k.to_bytes32();
        hash(&key) == x.h_k && encrypt(&key, &w.m) == x.m_bar && w.m.digest() == x.h_m
    }
}

pub fn eval_relation(relation: &Relation, w: &RelationWitness, x: &RelationPublicInputs) -> bool {
    relation.eval(w, x)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProofError {
    #[error("witness does not satisfy the relation")]
    RelationUnsatisfied,
    #[error("proving key belongs to a different relation")]
    WrongRelation,
}

pub struct Crs<P, V> {
    pub pk: P,
    pub vk: V,
    pub lambda: u32,
}

pub trait ProofBackend {
    type ProvingKey: Clone;
    type VerifyingKey: Clone;

    const TAG: u8;

    fn setup(&self, lambda: u32, relation: &Relation, seed: u64) -> Crs<Self::ProvingKey, Self::VerifyingKey>;

    fn prove(
        &self,
        pk: &Self::ProvingKey,
        w: &RelationWitness,
        x: &RelationPublicInputs,
    ) -> Result<Proof, ProofError>;

    fn verify(&self, vk: &Self::VerifyingKey, x: &RelationPublicInputs, proof: &Proof) -> bool;

    /// Verification over untrusted bytes; malformed input is simply rejected.
    fn verify_bytes(&self, vk: &Self::VerifyingKey, x: &RelationPublicInputs, bytes: &[u8]) -> bool {
        Proof::from_bytes(bytes).is_some_and(|p| self.verify(vk, x, &p))
    }
}

pub const PROOF_LEN: usize = 33;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Proof {
    pub backend_tag: u8,
    pub binding: [u8; 32],
}

impl Proof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PROOF_LEN);
        out.push(self.backend_tag);
        out.extend_from_slice(&self.binding);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Proof> {
        if bytes.len() != PROOF_LEN {
            return None;
        }
        Some(Proof {
            backend_tag: bytes[0],
            binding: bytes[1..].try_into().ok()?,
        })
    }
}

type HmacSha256 = Hmac<Sha256>;

/// Key material shared by the proving authority and verifiers. Opaque: the
/// MAC key never leaves this module.
#[derive(Clone)]
pub struct MacKey {
    key: [u8; 32],
    relation: Digest,
}

impl std::fmt::Debug for MacKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MacKey(relation {:?})", self.relation)
    }
}

impl MacKey {
    pub fn key_len(&self) -> usize {
        self.key.len()
    }

    fn tag(&self, x: &RelationPublicInputs) -> [u8; 32] {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("hmac accepts any key length");
        mac.update(self.relation.as_bytes());
        mac.update(&x.to_canonical_bytes());
        mac.finalize().into_bytes().into()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MacBackend;

impl ProofBackend for MacBackend {
    type ProvingKey = (MacKey, Relation);
    type VerifyingKey = MacKey;

    const TAG: u8 = 0x01;

    fn setup(&self, lambda: u32, relation: &Relation, seed: u64) -> Crs<Self::ProvingKey, Self::VerifyingKey> {
        let key = hash_parts(&[
            b"crosschannel/mac-backend/setup",
            &lambda.to_be_bytes(),
            relation.id().as_bytes(),
            &seed.to_be_bytes(),
        ]);
        let mk = MacKey {
            key: key.0,
            relation: relation.id(),
        };
        Crs {
            pk: (mk.clone(), *relation),
            vk: mk,
            lambda,
        }
    }

    fn prove(
        &self,
        pk: &Self::ProvingKey,
        w: &RelationWitness,
        x: &RelationPublicInputs,
    ) -> Result<Proof, ProofError> {
        let (key, relation) = pk;
        if key.relation != relation.id() {
            return Err(ProofError::WrongRelation);
        }
        if !relation.eval(w, x) {
            return Err(ProofError::RelationUnsatisfied);
        }
        Ok(Proof {
            backend_tag: Self::TAG,
            binding: key.tag(x),
        })
    }

    fn verify(&self, vk: &Self::VerifyingKey, x: &RelationPublicInputs, proof: &Proof) -> bool {
        proof.backend_tag == Self::TAG && vk.tag(x) == proof.binding
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn instance(seed: u64) -> (Relation, RelationWitness, RelationPublicInputs) {
        let rel = Relation::new(GroupParams::standard());
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let k = rel.params.random_scalar(&mut rng);
        let d = vss::share(rel.params, &k, 3, 5, &mut rng).unwrap();
        let m = Plaintext::random(&mut rng, 10, 100);
        let x = RelationPublicInputs {
            h_m: m.digest(),
            m_bar: encrypt(&k.to_bytes32(), &m),
            h_k: hash(&k.to_bytes32()),
            t: 3,
            n: 5,
        };
        let w = RelationWitness {
            m,
            k_shares: d.shares[1..4].to_vec(),
        };
        (rel, w, x)
    }

    #[test]
    fn honest_proof_verifies() {
        let (rel, w, x) = instance(1);
        let crs = MacBackend.setup(128, &rel, 7);
        assert_eq!(crs.vk.key_len(), 32);
        let proof = MacBackend.prove(&crs.pk, &w, &x).unwrap();
        assert!(MacBackend.verify(&crs.vk, &x, &proof));
        assert_eq!(proof.to_bytes().len(), PROOF_LEN);
    }

    #[test]
    fn false_statement_is_refused() {
        let (rel, mut w, x) = instance(2);
        w.k_shares.pop();
        let crs = MacBackend.setup(128, &rel, 7);
        assert_eq!(MacBackend.prove(&crs.pk, &w, &x), Err(ProofError::RelationUnsatisfied));
    }

    #[test]
    fn altered_inputs_and_truncation_reject() {
        let (rel, w, x) = instance(3);
        let crs = MacBackend.setup(128, &rel, 7);
        let proof = MacBackend.prove(&crs.pk, &w, &x).unwrap();
        let mut x2 = x.clone();
        x2.h_k = hash(b"other");
        assert!(!MacBackend.verify(&crs.vk, &x2, &proof));
        let bytes = proof.to_bytes();
        assert!(!MacBackend.verify_bytes(&crs.vk, &x, &bytes[..32]));
        assert!(MacBackend.verify_bytes(&crs.vk, &x, &bytes));
    }

    #[test]
    fn setup_is_seed_deterministic() {
        let (rel, w, x) = instance(4);
        let a = MacBackend.setup(128, &rel, 1);
        let b = MacBackend.setup(128, &rel, 1);
        let c = MacBackend.setup(128, &rel, 2);
        let proof = MacBackend.prove(&a.pk, &w, &x).unwrap();
        assert!(MacBackend.verify(&b.vk, &x, &proof));
        assert!(!MacBackend.verify(&c.vk, &x, &proof));
    }
}
