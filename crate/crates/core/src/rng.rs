//! Counter-based uniforms.
//!
//! Every random quantity in the crate is a pure function of
//! `(seed, trial, purpose, tag, position)`. The ChaCha8 block function is used
//! as the keyed generator: the master seed keys it, `(trial, purpose, tag)`
//! select one of its 2^64 streams, and the position is a word offset inside
//! the stream. Two consequences follow:
//!
//! * the same key at different `p` yields the same uniforms, which is the
//!   monotone coupling used by every estimator;
//! * trials can run on any number of threads in any order and still produce
//!   identical results.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Identifies the randomness of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey {
    pub seed: u64,
    pub trial: u64,
}

impl RngKey {
    pub fn new(seed: u64, trial: u64) -> Self {
        Self { seed, trial }
    }

    pub fn with_trial(self, trial: u64) -> Self {
        Self { trial, ..self }
    }

    /// Opens the stream for `purpose` and a purpose-specific `tag`
    /// (fractal level, box side, ...).
    pub fn stream(&self, purpose: Purpose, tag: u64) -> UniformStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id(self.trial, purpose, tag));
        UniformStream { rng }
    }
}

/// What a stream is used for; keeps unrelated draws independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Retention = 1,
    Site = 2,
    Activation = 3,
    Rectangle = 4,
}

fn stream_id(trial: u64, purpose: Purpose, tag: u64) -> u64 {
    // splitmix64 finalizer over the packed key
    let mut z = trial
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((purpose as u64) << 56)
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seekable stream of uniforms on `[0, 1)`.
pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    /// Positions the stream so the next draw is uniform number `position`.
    #[inline]
    pub fn seek(&mut self, position: u64) {
        self.rng.set_word_pos(position as u128 * 2);
    }

    /// Next uniform; 53 random bits, so every value is exactly representable.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform number `position` of this stream.
    #[inline]
    pub fn at(&mut self, position: u64) -> f64 {
        self.seek(position);
        self.next_uniform()
    }

    /// Fills `out` with uniforms `start, start + 1, ...`.
    pub fn fill_from(&mut self, start: u64, out: &mut [f64]) {
        self.seek(start);
        for v in out.iter_mut() {
            *v = self.next_uniform();
        }
    }
}
