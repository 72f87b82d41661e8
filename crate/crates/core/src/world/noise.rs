//! Counter-based noise: every draw is a pure function of
//! `(world seed, tick, stream)`, so sensor and head noise stay reproducible
//! even when sensors are sampled from immutable snapshots.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Independent noise streams derived from one world seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Head = 1,
    ForceTorque = 2,
    Camera0 = 3,
    Camera1 = 4,
    Acquisition = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, tick: u64, stream: Stream) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed ^ splitmix(stream as u64)) ^ tick);
    ChaCha8Rng::seed_from_u64(key)
}

/// Three independent N(0, sigma²) samples.
pub fn gaussian3(seed: u64, tick: u64, stream: Stream, sigma: f64) -> Vector3<f64> {
    if sigma == 0.0 {
        return Vector3::zeros();
    }
    let mut rng = rng_for(seed, tick, stream);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    Vector3::new(draw(), draw(), draw()) * sigma
}

/// Six samples: first three scaled by `sigma_a`, last three by `sigma_b`.
pub fn gaussian3x2(
    seed: u64,
    tick: u64,
    stream: Stream,
    sigma_a: f64,
    sigma_b: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let mut rng = rng_for(seed, tick, stream);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let a = Vector3::new(draw(), draw(), draw()) * sigma_a;
    let b = Vector3::new(draw(), draw(), draw()) * sigma_b;
    (a, b)
}
