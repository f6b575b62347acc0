//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed, the trial index, a role tag and an index within the role (for
//! example the worker id). Changing how much one stream is consumed never
//! shifts another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Problem = 1,
    Schedule = 2,
    Data = 3,
    Attack = 4,
    /// Free for tests and tooling.
    Aux = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `(seed, trial, role, index)`. Each component passes through
/// the mixer before the next is folded in, so distinct tuples do not alias.
pub fn derive_seed(seed: u64, trial: u64, role: Role, index: u64) -> u64 {
    let mut h = splitmix64(splitmix64(seed) ^ trial);
    h = splitmix64(h ^ (role as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(h ^ index.wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn stream(seed: u64, trial: u64, role: Role, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, trial, role, index))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Uniform on the unit sphere in `R^d`.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let g = gaussian_vector(rng, d, 1.0);
        let n = crate::vector::norm(&g);
        if n > 1e-300 {
            return g.into_iter().map(|v| v / n).collect();
        }
    }
}

/// Uniform in the closed ball of radius `r` in `R^d`.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, d: usize, r: f64) -> Vec<f64> {
    let u: f64 = rng.random();
    let rad = r * u.powf(1.0 / d as f64);
    unit_vector(rng, d).into_iter().map(|v| v * rad).collect()
}
