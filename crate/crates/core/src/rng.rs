//! Seeded random streams.
//!
//! A run owns one seed; every consumer (seed design, pilot draw, batches,
//! surrogate pool, ...) gets its own ChaCha stream keyed by a tag and an
//! index, so adding a consumer never shifts the numbers another one sees.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub type Stream = ChaCha12Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Seed = 1,
    Pilot = 2,
    Batch = 3,
    SurrogatePool = 4,
    GpStarts = 5,
    Baseline = 6,
    Truth = 7,
    Misc = 8,
}

pub fn stream(seed: u64, tag: StreamTag, index: u64) -> Stream {
    let mut r = Stream::seed_from_u64(seed);
    r.set_stream(((tag as u64) << 48) ^ index);
    r
}

/// Uniform draw on the open interval (0, 1) with 53 random bits.
#[inline]
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}
