use std::collections::BTreeSet;

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E3779B97F4A7C15;
const F64_FROM_BITS: f64 = 1.0 / 9007199254740992.0; // 2^-53

/// Deterministic pseudo-random generator.
///
/// Algorithm (fixed, format v1): xoshiro256++ with the four state words drawn
/// from a splitmix64 sequence started at `seed + stream * 0x9E3779B97F4A7C15`
/// (wrapping). The algorithm is part of the artifact contract: identical
/// seeds produce identical streams on every platform, so it must not be
/// swapped out without bumping the version of every seeded file format.
#[derive(Debug, Clone)]
pub struct Prng {
    state: [u64; 4],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl Prng {
    pub fn seed_from(seed: u64) -> Self {
        Prng::seed_stream(seed, 0)
    }

    /// Independent substream `stream` of the same seed. Used to keep the
    /// consumers of randomness (parameter init, batch choice, vocabulary
    /// sampling, neighbor draws) from perturbing each other's sequences.
    pub fn seed_stream(seed: u64, stream: u64) -> Self {
        let mut sm = seed.wrapping_add(stream.wrapping_mul(GOLDEN_GAMMA));
        let mut state = [0u64; 4];
        for word in &mut state {
            *word = splitmix64(&mut sm);
        }
        // xoshiro state must not be all zero.
        if state == [0; 4] {
            state[0] = GOLDEN_GAMMA;
        }
        Prng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * F64_FROM_BITS
    }

    /// Uniform in {0, 1, ..., n-1}, without modulo bias.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below requires n > 0");
        let rem = (u64::MAX % n + 1) % n; // 2^64 mod n
        loop {
            let x = self.next_u64();
            if rem == 0 || x <= u64::MAX - rem {
                return x % n;
            }
        }
    }

    /// Standard normal draw via Box-Muller (two uniforms per call).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * F64_FROM_BITS; // (0, 1]
        let u2 = (self.next_u64() >> 11) as f64 * F64_FROM_BITS; // [0, 1)
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Draws `k` distinct indices from `{0, ..., population-1}`, uniform over
/// k-subsets (Floyd's algorithm). The result is sorted ascending.
pub fn sample_without_replacement(
    rng: &mut Prng,
    population: usize,
    k: usize,
) -> Result<Vec<usize>> {
    if k > population {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {k} distinct indices from a population of {population}"
        )));
    }
    let mut chosen = BTreeSet::new();
    for j in population - k..population {
        let t = rng.next_below(j as u64 + 1) as usize;
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    Ok(chosen.into_iter().collect())
}
