//! Noise channels and the sample sets handed to the CVaR filters.
//!
//! Every draw consumes the generator the same way whatever the noise level,
//! so changing a sigma never shifts the rest of a run's random stream.

use rand::Rng;
use rand_distr::StandardNormal;

/// `p` i.i.d. positions uniform in the square of half-width `sigma_o`
/// around `center`.
pub fn sample_obstacle<R: Rng + ?Sized>(center: [f64; 2], sigma_o: f64, p: usize, rng: &mut R) -> Vec<[f64; 2]> {
    (0..p).map(|_| uniform_offset(center, sigma_o, rng)).collect()
}

/// `q` i.i.d. isotropic Gaussian positions around `center`.
pub fn sample_vehicle<R: Rng + ?Sized>(center: [f64; 2], sigma_v: f64, q: usize, rng: &mut R) -> Vec<[f64; 2]> {
    (0..q).map(|_| gaussian_offset(center, sigma_v, rng)).collect()
}

pub fn uniform_offset<R: Rng + ?Sized>(center: [f64; 2], half_width: f64, rng: &mut R) -> [f64; 2] {
    let ux: f64 = rng.random();
    let uy: f64 = rng.random();
    [center[0] + half_width * (2.0 * ux - 1.0), center[1] + half_width * (2.0 * uy - 1.0)]
}

pub fn gaussian_offset<R: Rng + ?Sized>(center: [f64; 2], sigma: f64, rng: &mut R) -> [f64; 2] {
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    [center[0] + sigma * zx, center[1] + sigma * zy]
}
