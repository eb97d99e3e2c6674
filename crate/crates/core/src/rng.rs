//! Seeded random streams.
//!
//! Every stochastic step draws from its own ChaCha8 stream. A stream is keyed
//! by the 64-bit master seed and a purpose label (`"synth/means"`,
//! `"scratch"`, `"finetune/3"`, ...): the label is hashed with 64-bit FNV-1a,
//! xored into the master seed and passed through one SplitMix64 round to
//! produce the ChaCha seed. Adding a new consumer therefore never shifts the
//! draws seen by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the 64-bit seed of the stream named `label`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a(label))
}

/// Opens the stream named `label` under `master`.
pub fn stream(master: u64, label: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label))
}
