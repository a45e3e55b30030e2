//! Random instances of the verifiable-encryption relation and its
//! single-field mutations.

use crosschannel::crypto::{encrypt, hash, Ciphertext, Digest, GroupParams, Plaintext};
use crosschannel::proof::{eval_relation, Relation, RelationPublicInputs, RelationWitness};
use crosschannel::vss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct Instance {
    pub w: RelationWitness,
    pub x: RelationPublicInputs,
}

pub fn instance(params: &'static GroupParams, seed: u64) -> Instance {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let blocks = rng.gen_range(1..=12);
    let bits = [8, 13, 64, 100, 256][rng.gen_range(0..5)];
    let m = Plaintext::random(&mut rng, blocks, bits);
    let n = rng.gen_range(1..=12);
    let t = rng.gen_range(1..=n);
    let k = params.random_scalar(&mut rng);
    let dealing = vss::share(params, &k, t, n, &mut rng).expect("1 <= t <= n");
    let key = k.to_bytes32();
    let x = RelationPublicInputs {
        h_m: m.digest(),
        m_bar: encrypt(&key, &m),
        h_k: hash(&key),
        t,
        n,
    };
    let take = rng.gen_range(t..=n) as usize;
    let w = RelationWitness {
        m,
        k_shares: dealing.shares[..take].to_vec(),
    };
    Instance { w, x }
}

fn flip(d: &Digest, byte: usize) -> Digest {
    let mut out = *d;
    out.0[byte % 32] ^= 1;
    out
}

/// Every single mutation of one ciphertext block, `h_m`, `h_k` or one share.
pub fn mutations(params: &'static GroupParams, inst: &Instance, rng: &mut ChaCha20Rng) -> Vec<(String, RelationWitness, RelationPublicInputs)> {
    let mut out = Vec::new();
    let bits = inst.x.m_bar.block_bits();
    for b in 0..inst.x.m_bar.len() {
        let mut blocks = inst.x.m_bar.blocks().to_vec();
        let last = blocks[b].len() - 1;
        blocks[b][last] ^= 1;
        let mut x = inst.x.clone();
        x.m_bar = Ciphertext::new(bits, blocks).expect("same shape");
        out.push((format!("m_bar block {b}"), inst.w.clone(), x));
    }
    let mut x = inst.x.clone();
    x.h_m = flip(&x.h_m, rng.gen_range(0..32));
    out.push(("h_m".into(), inst.w.clone(), x));
    let mut x = inst.x.clone();
    x.h_k = flip(&x.h_k, rng.gen_range(0..32));
    out.push(("h_k".into(), inst.w.clone(), x));
    let i = rng.gen_range(0..inst.w.k_shares.len());
    let mut w = inst.w.clone();
    w.k_shares[i].s = params.add(&w.k_shares[i].s, &params.scalar(rng.gen_range(1..1000)));
    out.push((format!("share {}", w.k_shares[i].index), w, inst.x.clone()));
    out
}

/// Checks `count` instances. Returns the number of mutations rejected.
pub fn check_instances(params: &'static GroupParams, count: u64, seed: u64) -> Result<usize, String> {
    let relation = Relation::new(params);
    let mut rejected = 0;
    for i in 0..count {
        let inst = instance(params, seed.wrapping_add(i));
        if !eval_relation(&relation, &inst.w, &inst.x) {
            return Err(format!("instance {i}: honest data rejected"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ i.rotate_left(17));
        for (what, w, x) in mutations(params, &inst, &mut rng) {
            if eval_relation(&relation, &w, &x) {
                return Err(format!("instance {i}: mutated {what} accepted"));
            }
            rejected += 1;
        }
    }
    Ok(rejected)
}
