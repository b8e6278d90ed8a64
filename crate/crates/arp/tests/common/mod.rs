//! Shared helpers for the integration suites.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use arp::oracle::standard_normal;
use arp::tensor::{DerivativeBundle, Provenance, SymmetricTensor};

/// Deterministic point in the closed ball of the given radius.
pub fn ball_point(n: usize, radius: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    loop {
        let v = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
        let norm = v.norm();
        if norm > 1e-12 {
            let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
            return v * (r / norm);
        }
    }
}

/// Random symmetric tensor rescaled to unit induced norm.
pub fn unit_tensor(order: usize, dim: usize, rng: &mut ChaCha8Rng) -> Option<SymmetricTensor> {
    let t = SymmetricTensor::random_gaussian(order, dim, rng).ok()?;
    let norm = t.norm();
    if norm < 1e-9 {
        return None;
    }
    Some(t.scaled(1.0 / norm))
}

/// Random exact bundle with a gradient of norm in [0.5, 2].
pub fn random_exact_bundle(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DerivativeBundle {
    let mut tensors = Vec::with_capacity(p);
    for ell in 1..=p {
        let mut t = SymmetricTensor::random_gaussian(ell, n, rng).unwrap();
        if ell == 1 {
            let norm = t.norm().max(1e-9);
            t = t.scaled((0.5 + 1.5 * rng.random::<f64>()) / norm);
        }
        tensors.push(t);
    }
    DerivativeBundle::new(DVector::zeros(n), tensors, Provenance::Exact).unwrap()
}
