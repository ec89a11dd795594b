//! Counter-based standard-normal streams.
//!
//! Every draw is addressed by `(seed, domain, index, t)`: the ChaCha key is
//! derived from `(seed, domain)`, the ChaCha stream id is `index` and step `t`
//! occupies a fixed block of words inside that stream. Workers therefore
//! never share generator state and any rollout can be regenerated in
//! isolation, in any order, on any thread.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates independent uses of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Exploration noise of sampled rollouts.
    Rollout,
    /// Fresh noise applied to the true plant in closed loop.
    Actuation,
    /// Anything else, tagged by the caller.
    Custom(u64),
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Rollout => 0x524f_4c4c_4f55_5421,
            Domain::Actuation => 0x4143_5455_4154_4521,
            Domain::Custom(tag) => tag ^ 0x4355_5354_4f4d_0000,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed, e.g. the inner-batch seed of outer MPC step `k`.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    mix64(mix64(master) ^ k.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

const INV_2_53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// A standard-normal stream emitting `dim` values per step.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    dim: usize,
}

impl NoiseStream {
    /// Stream positioned at step 0.
    pub fn new(seed: u64, domain: Domain, index: u64, dim: usize) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed ^ domain.tag();
        for chunk in key.chunks_exact_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Self { rng, dim }
    }

    /// Stream positioned at step `t`.
    pub fn at_step(seed: u64, domain: Domain, index: u64, dim: usize, t: usize) -> Self {
        let mut stream = Self::new(seed, domain, index, dim);
        stream.seek(t);
        stream
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn words_per_step(&self) -> u128 {
        // Two u64 (four u32 words) per Box-Muller pair.
        4 * self.dim.div_ceil(2) as u128
    }

    pub fn seek(&mut self, t: usize) {
        self.rng.set_word_pos(t as u128 * self.words_per_step());
    }

    /// Writes the next step's `dim` standard normals into `out`.
    pub fn fill_step(&mut self, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim, "noise buffer length");
        for pair in out.chunks_mut(2) {
            let a = self.rng.next_u64();
            let b = self.rng.next_u64();
            // u1 in (0, 1], u2 in [0, 1)
            let u1 = ((a >> 11) + 1) as f64 * INV_2_53;
            let u2 = (b >> 11) as f64 * INV_2_53;
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            pair[0] = r * c;
            if pair.len() > 1 {
                pair[1] = r * s;
            }
        }
    }

    pub fn next_step(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.fill_step(&mut out);
        out
    }
}
