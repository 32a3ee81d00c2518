//! Seed splitting.
//!
//! A run is identified by one 64-bit seed. Replication `r` of a benchmark
//! with base seed `s` runs with seed `splitmix64(s + r * GOLDEN)`. Inside a
//! run, every purpose gets its own ChaCha8 stream keyed by that seed, with
//! the ChaCha stream id set to the purpose index, so the draws of one
//! purpose never depend on how many draws another purpose made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random source handed to samplers.
pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// What a stream is used for; the discriminant is the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    MeasureSample = 0,
    GradientSamples = 1,
    Direction = 2,
    /// Brute-force oracle shards use `OracleShard + shard index`.
    OracleShard = 16,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` under `base_seed`.
pub fn replication_seed(base_seed: u64, rep: u64) -> u64 {
    splitmix64(base_seed.wrapping_add(rep.wrapping_mul(GOLDEN)))
}

/// Stream for `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Purpose) -> SimRng {
    stream_with_id(seed, purpose as u64)
}

pub fn stream_with_id(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// The three per-run streams.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub measure: SimRng,
    pub gradient: SimRng,
    pub direction: SimRng,
}

impl RunStreams {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            measure: stream(seed, Purpose::MeasureSample),
            gradient: stream(seed, Purpose::GradientSamples),
            direction: stream(seed, Purpose::Direction),
        }
    }
}
