//! Named random substreams.
//!
//! Every random draw in a run comes from a ChaCha8 generator keyed by
//! `(seed, purpose, a, b)`. Two draws with the same key always see the same
//! numbers, and draws with different keys never share state, so results do
//! not depend on the order in which particles or cells are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a substream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Initial noise (or SDEdit forward noise) for a particle slot.
    Init = 1,
    /// Per-step reverse-process noise for a particle slot.
    Reverse = 2,
    /// Multinomial resampling at a block boundary.
    Select = 3,
    /// Zero-order probe directions.
    Probe = 4,
    /// k-means++ seeding.
    Cluster = 5,
    /// Anything owned by the experiment harness.
    Harness = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a list of words into one 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Factory for keyed substreams derived from a single run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substreams {
    seed: u64,
}

impl Substreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(&[self.seed, purpose as u64, a, b]))
    }

    /// Child factory, e.g. one per batch element of a harness cell.
    pub fn child(&self, tag: u64) -> Substreams {
        Substreams::new(mix(&[self.seed, Purpose::Harness as u64, tag]))
    }
}

/// Draws a standard-normal vector of length `dim`.
pub fn normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}
