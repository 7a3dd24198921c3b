//! Key-derived random streams.
//!
//! Every random draw in the toolkit comes from a generator seeded by hashing
//! `(master seed, purpose, key parts)`, so results do not depend on the order
//! or thread in which cells are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a stream key.
#[derive(Clone, Copy, Debug)]
pub enum KeyPart<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for KeyPart<'a> {
    fn from(s: &'a str) -> Self {
        KeyPart::Str(s)
    }
}

impl From<u64> for KeyPart<'_> {
    fn from(v: u64) -> Self {
        KeyPart::Int(v)
    }
}

impl From<usize> for KeyPart<'_> {
    fn from(v: usize) -> Self {
        KeyPart::Int(v as u64)
    }
}

impl From<u32> for KeyPart<'_> {
    fn from(v: u32) -> Self {
        KeyPart::Int(u64::from(v))
    }
}

pub fn stream_seed(seed: u64, purpose: &str, parts: &[KeyPart<'_>]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    for p in parts {
        match p {
            KeyPart::Str(s) => {
                h.update([0u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            KeyPart::Int(v) => {
                h.update([1u8]);
                h.update(v.to_le_bytes());
            }
        }
    }
    let digest = h.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

/// Generator for the stream identified by `(seed, purpose, parts)`.
pub fn keyed_rng(seed: u64, purpose: &str, parts: &[KeyPart<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(seed, purpose, parts))
}
