// SPDX-License-Identifier: Apache-2.0

//! Wiener increments from a counter-based generator.
//!
//! Each trajectory owns a ChaCha8 stream selected by its index; step `k`
//! consumes exactly the 128 bits at word position `4k`. The increment for
//! `(master seed, trajectory, step)` is therefore fixed regardless of the order
//! in which trajectories or steps are generated.

use std::f64::consts::TAU;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifies the noise stream of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub master_seed: u64,
    pub trajectory: u64,
}

impl NoiseKey {
    pub fn new(master_seed: u64, trajectory: u64) -> Self {
        Self {
            master_seed,
            trajectory,
        }
    }
}

const WORDS_PER_STEP: u128 = 4;

/// Sequential reader over the increments of one trajectory.
#[derive(Debug, Clone)]
pub struct WienerStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl WienerStream {
    pub fn new(key: NoiseKey, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(key.master_seed);
        rng.set_stream(key.trajectory);
        Self {
            rng,
            sqrt_dt: dt.sqrt(),
        }
    }

    /// Positions the stream so that the next increment is the one of `step`.
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    }

    /// Next standard normal deviate.
    pub fn next_standard(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        // u1 ∈ (0, 1], u2 ∈ [0, 1)
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Next increment `dW ~ N(0, dt)`.
    pub fn next_increment(&mut self) -> f64 {
        self.sqrt_dt * self.next_standard()
    }
}

/// The first `n` increments of the stream keyed by `key`.
pub fn wiener_increments(key: NoiseKey, n: usize, dt: f64) -> Vec<f64> {
    let mut s = WienerStream::new(key, dt);
    (0..n).map(|_| s.next_increment()).collect()
}

/// The increment of a single step, without generating the preceding ones.
pub fn wiener_increment_at(key: NoiseKey, step: u64, dt: f64) -> f64 {
    let mut s = WienerStream::new(key, dt);
    s.seek(step);
    s.next_increment()
}

/// Order-sensitive digest of a sequence of increments.
#[derive(Debug, Clone, Copy, Default)]
pub struct Checksum(u64);

impl Checksum {
    pub fn push(&mut self, x: f64) {
        // FNV-1a over the bit pattern
        let mut h = self.0 ^ 0xcbf2_9ce4_8422_2325;
        for byte in x.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.0 = h;
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}
