//! Pedersen (t, n) verifiable secret sharing.
//!
//! The dealer commits to `f(x) = s + a_1 x + ... + a_{t-1} x^{t-1}` and a
//! blinding polynomial `g(x)` through `E_j = g^{a_j} h^{b_j}`. Share `i` is
//! `(f(i), g(i))` and checks against `prod_j E_j^{i^j}`.

use std::collections::BTreeMap;

use rand::RngCore;
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};
use crate::crypto::{hash, Digest, GroupElement, GroupParams, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VssError {
    #[error("invalid threshold parameters t={t}, n={n}: need 1 <= t <= n")]
    BadParameters { t: u32, n: u32 },
    #[error("threshold not met: {got} distinct shares, {needed} required")]
    ThresholdNotMet { needed: u32, got: u32 },
    #[error("shares come from different dealings")]
    MixedDealings,
    #[error("share index 0 is reserved for the secret")]
    ZeroIndex,
    #[error("two different shares carry index {0}")]
    ConflictingShares(u32),
}

/// Public side of a dealing: what gets published and what shares verify against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Commitments {
    pub t: u32,
    pub n: u32,
    /// `E_0 = E(s, r)`.
    pub e_sr: GroupElement,
    /// `E_1 .. E_{t-1}`.
    pub coeffs: Vec<GroupElement>,
}

impl Commitments {
    pub fn id(&self) -> Digest {
        hash(&self.to_canonical_bytes())
    }

    pub fn is_well_formed(&self) -> bool {
        self.t >= 1 && self.t <= self.n && self.coeffs.len() + 1 == self.t as usize
    }
}

impl Canonical for Commitments {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.t as u64)
            .u64(self.n as u64)
            .item(&self.e_sr)
            .list(&self.coeffs);
    }
}

impl Decode for Commitments {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let t = u32::try_from(dec.u64()?).map_err(|_| CodecError::Invalid("t"))?;
        let n = u32::try_from(dec.u64()?).map_err(|_| CodecError::Invalid("n"))?;
        Ok(Commitments {
            t,
            n,
            e_sr: dec.item()?,
            coeffs: dec.list()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyShare {
    pub index: u32,
    pub s: Scalar,
    pub r: Scalar,
    pub dealing_id: Digest,
}

impl KeyShare {
    /// `h(k_i)`: hash of `(index, s_i, r_i)`, leaving out the dealing id.
    pub fn hash(&self) -> Digest {
        let mut enc = Encoder::new();
        enc.u64(self.index as u64).item(&self.s).item(&self.r);
        hash(&enc.finish())
    }
}

impl Canonical for KeyShare {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.index as u64)
            .item(&self.s)
            .item(&self.r)
            .item(&self.dealing_id);
    }
}

impl Decode for KeyShare {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let index = u32::try_from(dec.u64()?).map_err(|_| CodecError::Invalid("index"))?;
        Ok(KeyShare {
            index,
            s: dec.item()?,
            r: dec.item()?,
            dealing_id: dec.item()?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Dealing {
    pub commitments: Commitments,
    pub shares: Vec<KeyShare>,
}

impl Dealing {
    pub fn id(&self) -> Digest {
        self.commitments.id()
    }

    pub fn share_hashes(&self) -> Vec<Digest> {
        self.shares.iter().map(KeyShare::hash).collect()
    }
}

fn eval_poly(params: &GroupParams, coeffs: &[Scalar], x: u32) -> Scalar {
    let x = params.scalar(x as u64);
    coeffs
        .iter()
        .rev()
        .fold(params.scalar(0), |acc, c| params.add(&params.mul_scalar(&acc, &x), c))
}

/// Splits `s` into `n` shares with threshold `t`.
pub fn share<R: RngCore + ?Sized>(
    params: &GroupParams,
    s: &Scalar,
    t: u32,
    n: u32,
    rng: &mut R,
) -> Result<Dealing, VssError> {
    if t == 0 || t > n {
        return Err(VssError::BadParameters { t, n });
    }
    let r = params.random_scalar(rng);
    let mut f = vec![params.reduce(s.value())];
    let mut g = vec![r];
    for _ in 1..t {
        f.push(params.random_scalar(rng));
        g.push(params.random_scalar(rng));
    }
    let mut all: Vec<GroupElement> = f.iter().zip(&g).map(|(a, b)| params.commit(a, b)).collect();
    let coeffs = all.split_off(1);
    let commitments = Commitments {
        t,
        n,
        e_sr: all.pop().expect("constant term"),
        coeffs,
    };
    let dealing_id = commitments.id();
    let shares = (1..=n)
        .map(|i| KeyShare {
            index: i,
            s: eval_poly(params, &f, i),
            r: eval_poly(params, &g, i),
            dealing_id,
        })
        .collect();
    Ok(Dealing { commitments, shares })
}

/// Checks `E(s_i, r_i) = prod_{j=0}^{t-1} E_j^{i^j}` and that the share names
/// this dealing.
pub fn verify_share(params: &GroupParams, share: &KeyShare, commitments: &Commitments) -> bool {
    if share.index == 0
        || share.index > commitments.n
        || !commitments.is_well_formed()
        || share.dealing_id != commitments.id()
        || !params.is_scalar(&share.s)
        || !params.is_scalar(&share.r)
    {
        return false;
    }
    // Horner in the exponent: ((E_{t-1})^i * E_{t-2})^i ... * E_0.
    let i = share.index as u64;
    let expected = commitments
        .coeffs
        .iter()
        .rev()
        .chain(std::iter::once(&commitments.e_sr))
        .fold(params.identity(), |acc, e| params.mul(&params.pow_u64(&acc, i), e));
    params.commit(&share.s, &share.r) == expected
}

/// Lagrange interpolation at zero over every supplied share.
pub fn recover(params: &GroupParams, shares: &[KeyShare], t: u32) -> Result<Scalar, VssError> {
    let mut by_index: BTreeMap<u32, &KeyShare> = BTreeMap::new();
    let dealing = shares.first().map(|s| s.dealing_id);
    for sh in shares {
        if sh.index == 0 {
            return Err(VssError::ZeroIndex);
        }
        if Some(sh.dealing_id) != dealing {
            return Err(VssError::MixedDealings);
        }
        if let Some(prev) = by_index.insert(sh.index, sh) {
            if prev != sh {
                return Err(VssError::ConflictingShares(sh.index));
            }
        }
    }
    let got = by_index.len() as u32;
    if t == 0 || got < t {
        return Err(VssError::ThresholdNotMet { needed: t, got });
    }
    let idx: Vec<Scalar> = by_index.keys().map(|&i| params.scalar(i as u64)).collect();
    let mut acc = params.scalar(0);
    for (a, sh) in by_index.values().enumerate() {
        let mut num = params.scalar(1);
        let mut den = params.scalar(1);
        for (b, xj) in idx.iter().enumerate() {
            if a != b {
                num = params.mul_scalar(&num, xj);
                den = params.mul_scalar(&den, &params.sub(xj, &idx[a]));
            }
        }
        // Distinct indices below q keep every denominator nonzero.
        let inv = params.inv(&den).expect("distinct share indices");
        acc = params.add(&acc, &params.mul_scalar(&sh.s, &params.mul_scalar(&num, &inv)));
    }
    Ok(acc)
}
