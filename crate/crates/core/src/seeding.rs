//! Deterministic seed fan-out.
//!
//! Every random consumer in the crate draws from its own ChaCha8 stream.
//! A master seed is split into per-run seeds with [`derive_seed`], and each
//! run opens independent streams with [`stream`]. Adding seeds or streams
//! never perturbs the values produced by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed number `index` of `master`: `splitmix64(master ^ splitmix64(index))`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Named generator streams. The discriminant is the ChaCha stream id, so the
/// numbering is part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    AgentInit = 1,
    AdversaryInit = 2,
    CriticInit = 3,
    Environment = 4,
    AgentNoise = 5,
    AdversaryNoise = 6,
    Replay = 7,
    SgldCritic = 8,
    SgldAgent = 9,
    SgldAdversary = 10,
    Takeover = 11,
    Explore = 12,
    Attack = 13,
    Sampler = 14,
    Probe = 15,
    Spoof = 16,
}

/// Opens stream `which` for `seed`.
pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
