//! Seeded randomness.
//!
//! Every random quantity in the crate comes from ChaCha8 (`rand_chacha`), a
//! counter-based stream cipher whose output is specified independently of
//! platform and word size. A `(seed, stream)` pair selects an independent
//! keystream: the seed expands to the 256-bit key through
//! `SeedableRng::seed_from_u64` (PCG32 expansion), the stream is ChaCha's
//! 64-bit nonce.
//!
//! Standard normals use the Box–Muller transform on 53-bit uniforms in
//! `(0, 1]`: each pair `(u1, u2)` yields `sqrt(-2 ln u1) * cos(2π u2)` and
//! `sqrt(-2 ln u1) * sin(2π u2)`, in that order.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Streams reserved for distinct consumers of one user seed.
pub mod streams {
    pub const PARAM_INIT: u64 = 1;
    pub const TRAINING: u64 = 2;
    pub const SAMPLING_BASE: u64 = 1 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in `(0, 1]` with 53 bits of precision.
#[inline]
pub fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Fills `out` with standard-normal draws via Box–Muller.
pub fn fill_normal(rng: &mut impl RngCore, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (a, b) = box_muller(rng);
        pair[0] = a;
        pair[1] = b;
    }
    if let [last] = chunks.into_remainder() {
        *last = box_muller(rng).0;
    }
}

#[inline]
fn box_muller(rng: &mut impl RngCore) -> (f64, f64) {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Uniform integer in `lo..=hi`.
pub fn uniform_inclusive(rng: &mut impl RngCore, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}
