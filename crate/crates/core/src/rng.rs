//! Self-contained, portable pseudo-randomness.
//!
//! Reproducibility down to the bit is a contract of this crate, so the
//! generator is owned rather than pulled from a dependency whose stream could
//! shift between versions: xoshiro256++ seeded through splitmix64, with
//! Box-Muller for normal deviates. Derived seeds give every consumer (scene,
//! training step, noise draw) its own independent stream.

use crate::{real, Real};

/// splitmix64 step; also used to expand seeds and derive sub-streams.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a root seed and a stream tag.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut s = root ^ 0x6c62_272e_07bb_0142u64.wrapping_mul(stream.wrapping_add(1));
    let a = splitmix64(&mut s);
    let b = splitmix64(&mut s);
    a ^ b.rotate_left(17)
}

/// xoshiro256++ generator.
#[derive(Clone, Debug)]
pub struct Rng {
    state: [u64; 4],
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = seed;
        let mut state = [0u64; 4];
        for part in &mut state {
            *part = splitmix64(&mut sm);
        }
        // all-zero state is invalid for xoshiro
        if state == [0, 0, 0, 0] {
            state[0] = 0x9e37_79b9_7f4a_7c15;
        }
        Rng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate (Box-Muller, one deviate per pair of draws so
    /// the stream position is a pure function of the call count).
    pub fn normal_f64(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64; // (0, 1]
        let u2 = self.uniform_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal<T: Real>(&mut self) -> T {
        real(self.normal_f64())
    }

    pub fn uniform<T: Real>(&mut self) -> T {
        real(self.uniform_f64())
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as u64;
        lo + (self.next_u64() % span) as usize
    }

    /// Uniform element of a nonempty slice.
    pub fn choose<'a, V>(&mut self, items: &'a [V]) -> &'a V {
        &items[self.range_inclusive(0, items.len() - 1)]
    }
}
