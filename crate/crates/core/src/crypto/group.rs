//! Prime-order subgroups of Z_p^* and Pedersen commitments over them.

use std::fmt;
use std::sync::OnceLock;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::RngCore;

use super::{hash, hash_parts, Digest};
use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};

/// An integer modulo the group order `q`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scalar(BigUint);

impl Scalar {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// 32-byte big-endian form. Scalars of every supported group fit.
    pub fn to_bytes32(&self) -> [u8; 32] {
        let raw = self.0.to_bytes_be();
        let mut out = [0u8; 32];
        out[32 - raw.len()..].copy_from_slice(&raw);
        out
    }

    /// Builds a scalar from raw bytes without reduction. Callers that accept
    /// untrusted bytes must check the result with [`GroupParams::is_scalar`].
    pub fn from_bytes_unreduced(bytes: &[u8]) -> Self {
        Scalar(BigUint::from_bytes_be(bytes))
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar({})", self.0)
    }
}

impl Canonical for Scalar {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.to_bytes32());
    }
}

impl Decode for Scalar {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Scalar(BigUint::from_bytes_be(&dec.fixed::<32>()?)))
    }
}

/// An element of the order-`q` subgroup, stored as its residue mod `p`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupElement(BigUint);

impl GroupElement {
    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex = format!("{:x}", self.0);
        if hex.len() > 12 {
            write!(f, "GroupElement({}..)", &hex[..12])
        } else {
            write!(f, "GroupElement({hex})")
        }
    }
}

impl Canonical for GroupElement {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0.to_bytes_be());
    }
}

impl Decode for GroupElement {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(GroupElement(BigUint::from_bytes_be(dec.bytes()?)))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("q does not divide p - 1")]
    OrderMismatch,
    #[error("generator {0} is not an element of order q")]
    BadGenerator(&'static str),
    #[error("g and h must differ")]
    EqualGenerators,
}

/// Parameters `(p, q, g, h)`: `q` prime, `q | p - 1`, and `g`, `h` generate
/// the order-`q` subgroup with no known discrete-log relation.
#[derive(Clone, PartialEq, Eq)]
pub struct GroupParams {
    name: &'static str,
    p: BigUint,
    q: BigUint,
    g: GroupElement,
    h: GroupElement,
}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupParams({}, {} bits)", self.name, self.p.bits())
    }
}

const STANDARD_P: &str = "ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff72ef";

impl GroupParams {
    pub fn new(
        name: &'static str,
        p: BigUint,
        q: BigUint,
        g: BigUint,
        h: BigUint,
    ) -> Result<Self, GroupError> {
        if !((&p - 1u32) % &q).is_zero() {
            return Err(GroupError::OrderMismatch);
        }
        let params = GroupParams {
            name,
            p,
            q,
            g: GroupElement(g),
            h: GroupElement(h),
        };
        if !params.is_element(&params.g) || params.g.0.is_one() {
            return Err(GroupError::BadGenerator("g"));
        }
        if !params.is_element(&params.h) || params.h.0.is_one() {
            return Err(GroupError::BadGenerator("h"));
        }
        if params.g == params.h {
            return Err(GroupError::EqualGenerators);
        }
        Ok(params)
    }

    /// 256-bit safe prime `p = 2q + 1`; `g = 4` and `h` hashed into the
    /// quadratic residues so nobody knows `log_g h`.
    pub fn standard() -> &'static GroupParams {
        static STANDARD: OnceLock<GroupParams> = OnceLock::new();
        STANDARD.get_or_init(|| {
            let p = BigUint::parse_bytes(STANDARD_P.as_bytes(), 16).expect("hex");
            let q = (&p - 1u32) >> 1;
            let g = BigUint::from(4u32);
            let mut counter = 0u64;
            let h = loop {
                let seed = hash_parts(&[b"crosschannel/pedersen-h", &counter.to_be_bytes()]);
                let x = BigUint::from_bytes_be(seed.as_bytes()) % &p;
                let cand = x.modpow(&BigUint::from(2u32), &p);
                if cand > BigUint::one() && cand != g {
                    break cand;
                }
                counter += 1;
            };
            GroupParams::new("standard-256", p, q, g, h).expect("standard group is valid")
        })
    }

    /// Order-101 subgroup of Z_607^*, small enough for brute-force oracles.
    pub fn tiny() -> &'static GroupParams {
        static TINY: OnceLock<GroupParams> = OnceLock::new();
        TINY.get_or_init(|| {
            GroupParams::new(
                "tiny-101",
                BigUint::from(607u32),
                BigUint::from(101u32),
                BigUint::from(64u32),
                BigUint::from(122u32),
            )
            .expect("tiny group is valid")
        })
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn modulus(&self) -> &BigUint {
        &self.p
    }

    pub fn order(&self) -> &BigUint {
        &self.q
    }

    pub fn g(&self) -> &GroupElement {
        &self.g
    }

    pub fn h(&self) -> &GroupElement {
        &self.h
    }

    /// Fingerprint of the parameter set.
    pub fn id(&self) -> Digest {
        hash(
            &Encoder::new()
                .bytes(&self.p.to_bytes_be())
                .bytes(&self.q.to_bytes_be())
                .item(&self.g)
                .item(&self.h)
                .clone()
                .finish(),
        )
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement(BigUint::one())
    }

    pub fn is_element(&self, e: &GroupElement) -> bool {
        !e.0.is_zero() && e.0 < self.p && e.0.modpow(&self.q, &self.p).is_one()
    }

    pub fn is_scalar(&self, s: &Scalar) -> bool {
        s.0 < self.q
    }

    pub fn element(&self, v: BigUint) -> Option<GroupElement> {
        let e = GroupElement(v);
        self.is_element(&e).then_some(e)
    }

    pub fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        GroupElement((&a.0 * &b.0) % &self.p)
    }

    pub fn pow(&self, base: &GroupElement, e: &Scalar) -> GroupElement {
        GroupElement(base.0.modpow(&e.0, &self.p))
    }

    pub fn pow_u64(&self, base: &GroupElement, e: u64) -> GroupElement {
        GroupElement(base.0.modpow(&BigUint::from(e), &self.p))
    }

    /// Pedersen commitment `g^s h^r`.
    pub fn commit(&self, s: &Scalar, r: &Scalar) -> GroupElement {
        self.mul(&self.pow(&self.g, s), &self.pow(&self.h, r))
    }

    pub fn scalar(&self, v: u64) -> Scalar {
        Scalar(BigUint::from(v) % &self.q)
    }

    pub fn reduce(&self, v: &BigUint) -> Scalar {
        Scalar(v % &self.q)
    }

    pub fn reduce_bytes(&self, bytes: &[u8]) -> Scalar {
        self.reduce(&BigUint::from_bytes_be(bytes))
    }

    /// Uniform scalar: 64 random bytes reduced mod `q` (bias below 2^-256).
    pub fn random_scalar<R: RngCore + ?Sized>(&self, rng: &mut R) -> Scalar {
        let mut buf = [0u8; 64];
        rng.fill_bytes(&mut buf);
        self.reduce_bytes(&buf)
    }

    pub fn add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &b.0) % &self.q)
    }

    pub fn sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &self.q - &b.0 % &self.q) % &self.q)
    }

    pub fn mul_scalar(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 * &b.0) % &self.q)
    }

    /// Multiplicative inverse mod the prime `q`, via Fermat.
    pub fn inv(&self, a: &Scalar) -> Option<Scalar> {
        if a.0.is_zero() {
            return None;
        }
        let e = &self.q - 2u32;
        Some(Scalar(a.0.modpow(&e, &self.q)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Repeated multiplication, independent of `modpow`.
    fn naive_pow(base: u64, exp: u64, p: u64) -> u64 {
        (0..exp).fold(1u64, |acc, _| acc * base % p)
    }

    #[test]
    fn generators_have_order_q() {
        for params in [GroupParams::standard(), GroupParams::tiny()] {
            assert!(params.pow(params.g(), &Scalar(params.order().clone())).0.is_one());
            assert!(params.pow(params.h(), &Scalar(params.order().clone())).0.is_one());
            assert_ne!(params.g(), params.h());
        }
        assert_eq!(GroupParams::standard().modulus().bits(), 256);
    }

    #[test]
    fn zero_exponents_commit_to_identity() {
        let p = GroupParams::standard();
        assert_eq!(p.commit(&p.scalar(0), &p.scalar(0)), p.identity());
    }

    #[test]
    fn tiny_commitment_matches_naive_multiplication() {
        let p = GroupParams::tiny();
        let expected = naive_pow(64, 5, 607) * naive_pow(122, 7, 607) % 607;
        assert_eq!(p.commit(&p.scalar(5), &p.scalar(7)).0, BigUint::from(expected));
        // 64^5 * 122^7 mod 607
        assert_eq!(expected, 340);
    }

    #[test]
    fn homomorphism_holds_on_random_scalars() {
        let p = GroupParams::standard();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (a, b, c, d) = (
                p.random_scalar(&mut rng),
                p.random_scalar(&mut rng),
                p.random_scalar(&mut rng),
                p.random_scalar(&mut rng),
            );
            assert_eq!(
                p.mul(&p.commit(&a, &b), &p.commit(&c, &d)),
                p.commit(&p.add(&a, &c), &p.add(&b, &d))
            );
        }
    }

    #[test]
    fn tiny_group_collisions_are_genuine_relations() {
        // With q = 101 collisions are unavoidable; each must satisfy
        // g^(s - s0) = h^(r0 - r).
        let p = GroupParams::tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut seen = std::collections::HashMap::new();
        for _ in 0..100_000 {
            let s = p.random_scalar(&mut rng);
            let r = p.random_scalar(&mut rng);
            let c = p.commit(&s, &r);
            if let Some((s0, r0)) = seen.insert(c, (s.clone(), r.clone())) {
                let lhs = p.pow(p.g(), &p.sub(&s, &s0));
                let rhs = p.pow(p.h(), &p.sub(&r0, &r));
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn standard_group_spot_check_finds_no_collision() {
        let p = GroupParams::standard();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..2_000 {
            let c = p.commit(&p.random_scalar(&mut rng), &p.random_scalar(&mut rng));
            assert!(seen.insert(c));
        }
    }

    #[test]
    fn scalar_arithmetic_inverts() {
        let p = GroupParams::tiny();
        for v in 1..101u64 {
            let s = p.scalar(v);
            let inv = p.inv(&s).unwrap();
            assert_eq!(p.mul_scalar(&s, &inv), p.scalar(1));
            assert_eq!(p.add(&p.sub(&p.scalar(3), &s), &s), p.scalar(3));
        }
        assert!(p.inv(&p.scalar(0)).is_none());
    }

    #[test]
    fn constructor_rejects_bad_parameters() {
        let bad = GroupParams::new(
            "bad",
            BigUint::from(607u32),
            BigUint::from(100u32),
            BigUint::from(64u32),
            BigUint::from(122u32),
        );
        assert_eq!(bad.unwrap_err(), GroupError::OrderMismatch);
        let same = GroupParams::new(
            "same",
            BigUint::from(607u32),
            BigUint::from(101u32),
            BigUint::from(64u32),
            BigUint::from(64u32),
        );
        assert_eq!(same.unwrap_err(), GroupError::EqualGenerators);
    }
}
