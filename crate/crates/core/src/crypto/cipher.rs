//! Blockwise symmetric encryption of exchanged data.

use rand::RngCore;

use super::{hash, hash_parts, Digest};
use crate::codec::{Canonical, CodecError, Decode, Decoder, Encoder};

/// Data split into equal-width blocks of `block_bits` bits each. Blocks are
/// stored big-endian in `ceil(block_bits / 8)` bytes with unused high bits zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plaintext {
    block_bits: u32,
    blocks: Vec<Vec<u8>>,
}

/// Same layout as [`Plaintext`]; kept distinct so the two never mix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    block_bits: u32,
    blocks: Vec<Vec<u8>>,
}

fn block_bytes(bits: u32) -> usize {
    bits.div_ceil(8) as usize
}

fn top_mask(bits: u32) -> u8 {
    match bits % 8 {
        0 => 0xff,
        r => (1u8 << r) - 1,
    }
}

fn check_blocks(bits: u32, blocks: &[Vec<u8>]) -> bool {
    bits > 0
        && blocks
            .iter()
            .all(|b| b.len() == block_bytes(bits) && b[0] & !top_mask(bits) == 0)
}

macro_rules! blocked {
    ($ty:ident) => {
        impl $ty {
            pub fn new(block_bits: u32, blocks: Vec<Vec<u8>>) -> Option<Self> {
                check_blocks(block_bits, &blocks).then_some($ty { block_bits, blocks })
            }

            pub fn block_bits(&self) -> u32 {
                self.block_bits
            }

            pub fn blocks(&self) -> &[Vec<u8>] {
                &self.blocks
            }

            pub fn len(&self) -> usize {
                self.blocks.len()
            }

            pub fn is_empty(&self) -> bool {
                self.blocks.is_empty()
            }

            pub fn digest(&self) -> Digest {
                hash(&self.to_canonical_bytes())
            }
        }

        impl Canonical for $ty {
            fn encode(&self, enc: &mut Encoder) {
                enc.u64(self.block_bits as u64).count(self.blocks.len());
                for b in &self.blocks {
                    enc.bytes(b);
                }
            }
        }

        impl Decode for $ty {
            fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
                let bits = u32::try_from(dec.u64()?).map_err(|_| CodecError::Invalid("block bits"))?;
                let n = dec.count()?;
                let mut blocks = Vec::new();
                for _ in 0..n {
                    blocks.push(dec.bytes()?.to_vec());
                }
                $ty::new(bits, blocks).ok_or(CodecError::Invalid("block layout"))
            }
        }
    };
}

blocked!(Plaintext);
blocked!(Ciphertext);

impl Plaintext {
    pub fn random<R: RngCore + ?Sized>(rng: &mut R, n_blocks: usize, block_bits: u32) -> Self {
        assert!(block_bits > 0, "block width must be positive");
        let blocks = (0..n_blocks)
            .map(|_| {
                let mut b = vec![0u8; block_bytes(block_bits)];
                rng.fill_bytes(&mut b);
                b[0] &= top_mask(block_bits);
                b
            })
            .collect();
        Plaintext { block_bits, blocks }
    }
}

pub trait SymmetricCipher {
    fn encrypt(&self, key: &[u8; 32], m: &Plaintext) -> Ciphertext;
    fn decrypt(&self, key: &[u8; 32], c: &Ciphertext) -> Plaintext;
}

/// XOR with a SHA-256 keystream indexed by block number. Deterministic, so
/// anyone holding `k` and `m` can recompute `Enc(k, m)` exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct HashStreamCipher;

impl HashStreamCipher {
    fn apply(key: &[u8; 32], bits: u32, blocks: &[Vec<u8>]) -> Vec<Vec<u8>> {
        let width = block_bytes(bits);
        blocks
            .iter()
            .enumerate()
            .map(|(i, block)| {
                let mut stream = Vec::with_capacity(width + 32);
                let mut j = 0u64;
                while stream.len() < width {
                    let d = hash_parts(&[
                        b"crosschannel/stream",
                        key,
                        &(i as u64).to_be_bytes(),
                        &j.to_be_bytes(),
                    ]);
                    stream.extend_from_slice(d.as_bytes());
                    j += 1;
                }
                stream[0] &= top_mask(bits);
                block.iter().zip(&stream).map(|(a, b)| a ^ b).collect()
            })
            .collect()
    }
}

impl SymmetricCipher for HashStreamCipher {
    fn encrypt(&self, key: &[u8; 32], m: &Plaintext) -> Ciphertext {
        Ciphertext {
            block_bits: m.block_bits,
            blocks: Self::apply(key, m.block_bits, &m.blocks),
        }
    }

    fn decrypt(&self, key: &[u8; 32], c: &Ciphertext) -> Plaintext {
        Plaintext {
            block_bits: c.block_bits,
            blocks: Self::apply(key, c.block_bits, &c.blocks),
        }
    }
}

pub fn encrypt(key: &[u8; 32], m: &Plaintext) -> Ciphertext {
    HashStreamCipher.encrypt(key, m)
}

pub fn decrypt(key: &[u8; 32], c: &Ciphertext) -> Plaintext {
    HashStreamCipher.decrypt(key, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_and_determinism() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let m = Plaintext::random(&mut rng, 10, 100);
        let k = [7u8; 32];
        let c = encrypt(&k, &m);
        assert_eq!(c, encrypt(&k, &m));
        assert_eq!(decrypt(&k, &c), m);
        assert_ne!(c.blocks(), m.blocks());
    }

    #[test]
    fn wrong_key_does_not_decrypt() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let m = Plaintext::random(&mut rng, 4, 100);
        let c = encrypt(&[1u8; 32], &m);
        assert_ne!(decrypt(&[2u8; 32], &c), m);
    }

    #[test]
    fn hundred_bit_blocks_keep_high_bits_clear() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let m = Plaintext::random(&mut rng, 50, 100);
        let c = encrypt(&[9u8; 32], &m);
        for b in c.blocks() {
            assert_eq!(b.len(), 13);
            assert_eq!(b[0] & 0xf0, 0);
        }
        assert!(Plaintext::new(100, vec![vec![0xff; 13]]).is_none());
    }

    #[test]
    fn wide_blocks_extend_the_keystream() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let m = Plaintext::random(&mut rng, 3, 600);
        let k = [3u8; 32];
        assert_eq!(decrypt(&k, &encrypt(&k, &m)), m);
    }

    #[test]
    fn canonical_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let m = Plaintext::random(&mut rng, 5, 100);
        assert_eq!(Plaintext::from_canonical_bytes(&m.to_canonical_bytes()).unwrap(), m);
    }
}
