//! Seed derivation. Every random stream in a run is derived from the run seed
//! and a fixed stream tag so that components never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Named random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Layout = 1,
    Shadowing = 2,
    Fading = 3,
    Doppler = 4,
    Exploration = 5,
    Replay = 6,
    ParamInit = 7,
    FpInit = 8,
    RandomAlloc = 9,
    Instance = 10,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(seed) ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream))
}
