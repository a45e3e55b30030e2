//! Sharing at large thresholds, checked against the dealt secret.

use crosschannel::crypto::{hash, GroupParams};
use crosschannel::vss::{self, KeyShare, VssError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const LARGE_THRESHOLDS: [(u32, u32); 5] = [(11, 31), (21, 61), (31, 91), (41, 121), (51, 151)];

/// Each way of corrupting a share that verification must catch.
/// Moving a share to another in-range index only breaks it when `t >= 2`
/// and the group is too large for a chance commitment match.
pub fn tampered(params: &GroupParams, share: &KeyShare, t: u32, n: u32) -> Vec<KeyShare> {
    let one = params.scalar(1);
    let mut out = Vec::new();
    let mut s = share.clone();
    s.s = params.add(&s.s, &one);
    out.push(s);
    let mut r = share.clone();
    r.r = params.add(&r.r, &one);
    out.push(r);
    let mut i = share.clone();
    i.index = n + 1 + share.index % 7;
    out.push(i);
    if t >= 2 && params.order().bits() > 64 {
        let mut j = share.clone();
        j.index = share.index % n + 1;
        out.push(j);
    }
    let mut d = share.clone();
    d.dealing_id = hash(d.dealing_id.as_bytes());
    out.push(d);
    out
}

/// Recovery from `subsets` random t-subsets, tamper rejection on every
/// share and the t-1 failure, for one `(t, n)`. Returns a digest of all
/// recovered secrets for replay comparison.
pub fn check_threshold(params: &GroupParams, t: u32, n: u32, subsets: usize, seed: u64) -> Result<Vec<u8>, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ ((t as u64) << 32 | n as u64));
    let secret = params.random_scalar(&mut rng);
    let dealing = vss::share(params, &secret, t, n, &mut rng).map_err(|e| e.to_string())?;
    let mut transcript = Vec::new();
    for share in &dealing.shares {
        if !vss::verify_share(params, share, &dealing.commitments) {
            return Err(format!("({t},{n}): honest share {} rejected", share.index));
        }
        for bad in tampered(params, share, t, n) {
            if vss::verify_share(params, &bad, &dealing.commitments) {
                return Err(format!("({t},{n}): tampered share {} accepted", share.index));
            }
        }
    }
    for _ in 0..subsets {
        let pick: Vec<KeyShare> = dealing.shares.choose_multiple(&mut rng, t as usize).cloned().collect();
        let got = vss::recover(params, &pick, t).map_err(|e| e.to_string())?;
        if got != secret {
            let idx: Vec<u32> = pick.iter().map(|s| s.index).collect();
            return Err(format!("({t},{n}): subset {idx:?} recovered the wrong secret"));
        }
        transcript.extend_from_slice(&got.to_bytes32());
        let short = &pick[..t as usize - 1];
        match vss::recover(params, short, t) {
            Err(VssError::ThresholdNotMet { needed, got }) if needed == t && got == t - 1 => {}
            other => return Err(format!("({t},{n}): t-1 shares gave {other:?}")),
        }
    }
    Ok(transcript)
}
