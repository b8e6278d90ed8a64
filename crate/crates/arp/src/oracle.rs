//! Inexact evaluations: controllable-accuracy function estimates and
//! randomly perturbed derivative bundles.
//!
//! Function-value errors are deterministic in magnitude: the estimate is
//! guaranteed inside `±abs_tol`. Derivative noise is stochastic; the
//! Gaussian model is calibrated so that the whole bundle lands inside its
//! accuracy budgets with probability `p_star_target`, independently across
//! orders and iterations.

use nalgebra::DVector;
use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{ArpError, Result};
use crate::problems::ExactProblem;
use crate::tensor::{DerivativeBundle, Provenance, SymmetricTensor};

#[inline]
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Derivative-perturbation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Exact derivatives.
    None,
    /// Symmetric Gaussian tensors scaled against the accuracy budgets so
    /// the joint in-budget probability hits `p_star_target`.
    GaussianRelative,
    /// Deterministic perturbation of norm `magnitude × budget`, directed
    /// against each derivative tensor.
    AdversarialSign,
    /// Minibatch average of a finite-sum problem's term derivatives.
    Subsample,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Target probability that one iteration's whole bundle is in budget.
    pub p_star_target: f64,
    /// Scale multiplier on the perturbation (1 = calibrated/bounded).
    pub magnitude: f64,
    /// Fraction of terms per batch (`Subsample` only).
    pub batch_fraction: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            p_star_target: 1.0,
            magnitude: 0.0,
            batch_fraction: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_star_target > 0.5 && self.p_star_target <= 1.0) {
            return Err(ArpError::Config(format!(
                "p_star_target must lie in (1/2, 1], got {}",
                self.p_star_target
            )));
        }
        if self.magnitude < 0.0 || !self.magnitude.is_finite() {
            return Err(ArpError::Config(format!(
                "noise magnitude must be nonnegative, got {}",
                self.magnitude
            )));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(ArpError::Config(format!(
                "batch_fraction must lie in (0, 1], got {}",
                self.batch_fraction
            )));
        }
        Ok(())
    }
}

/// Absolute tensor-norm error budgets per derivative order.
#[derive(Debug, Clone)]
pub struct AccuracyTargets {
    pub per_order: Vec<f64>,
}

impl AccuracyTargets {
    pub fn uniform(p: usize, budget: f64) -> Self {
        Self {
            per_order: vec![budget; p],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_order.is_empty() || self.per_order.iter().any(|&x| !(x > 0.0) || !x.is_finite())
        {
            return Err(ArpError::Config(
                "accuracy budgets must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Budgets `ξ_ℓ = max(floor, ω·dt_min/(6 τ^ℓ))` for `ℓ = 1..=p`, derived
/// from the previous iteration's step-scale `τ` and smallest decrement.
pub fn accuracy_targets_from_proxy(
    omega: f64,
    p: usize,
    tau_proxy: f64,
    dt_min_proxy: f64,
    floor: f64,
) -> Result<AccuracyTargets> {
    if !(omega > 0.0 && tau_proxy > 0.0 && dt_min_proxy > 0.0 && floor > 0.0) {
        return Err(ArpError::Invalid(
            "proxy budgets need positive omega, tau, dt_min and floor".into(),
        ));
    }
    let per_order = (1..=p)
        .map(|ell| (omega * dt_min_proxy / (6.0 * tau_proxy.powi(ell as i32))).max(floor))
        .collect();
    Ok(AccuracyTargets { per_order })
}

/// Which side a function estimate serves, for the adversarial mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    /// Uniform error in `[−abs_tol, abs_tol]`.
    Random,
    /// `f + abs_tol` (used at the current iterate).
    AdversarialHigh,
    /// `f − abs_tol` (used at the trial point).
    AdversarialLow,
}

/// Estimate of `f(x)` with `|f̄ − f| ≤ abs_tol`, guaranteed.
pub fn function_estimate<R: Rng>(
    problem: &dyn ExactProblem,
    x: &DVector<f64>,
    abs_tol: f64,
    kind: EstimateKind,
    rng: &mut R,
) -> Result<f64> {
    if abs_tol < 0.0 || !abs_tol.is_finite() {
        return Err(ArpError::NegativeTolerance(abs_tol));
    }
    let f = problem.value(x);
    Ok(match kind {
        EstimateKind::Random => f + abs_tol * (2.0 * rng.random::<f64>() - 1.0),
        EstimateKind::AdversarialHigh => f + abs_tol,
        EstimateKind::AdversarialLow => f - abs_tol,
    })
}

/// Sorted norm samples per (dim, order).
type NormTable = HashMap<(usize, usize), Vec<f64>>;

// Empirical quantile tables for the induced norm of symmetrized standard
// Gaussian tensors, keyed by (dim, order). Filled once per key from a
// fixed-seed Monte Carlo draw, so calibration is deterministic and shared
// across runs.
static NORM_SAMPLES: Lazy<Mutex<NormTable>> = Lazy::new(|| Mutex::new(HashMap::new()));

fn norm_sample_count(order: usize) -> usize {
    // Orders 1 and 2 have cheap norms; the order-3 norm needs multistart
    // ascent per draw, so fewer samples keep calibration affordable.
    if order <= 2 {
        100_000
    } else {
        10_000
    }
}

fn gaussian_norm_samples(dim: usize, order: usize) -> Vec<f64> {
    let count = norm_sample_count(order);
    let seed = 0xCA11_B000u64 ^ ((dim as u64) << 8) ^ order as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut norms: Vec<f64> = (0..count)
        .map(|_| {
            SymmetricTensor::random_gaussian(order, dim, &mut rng)
                .expect("order/dim validated by caller")
                .norm()
        })
        .collect();
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    norms
}

/// `rho`-quantile of `‖G‖` for a symmetrized standard Gaussian tensor of
/// the given shape (cached Monte Carlo estimate).
pub fn gaussian_norm_quantile(dim: usize, order: usize, rho: f64) -> f64 {
    let mut cache = NORM_SAMPLES.lock().unwrap();
    let samples = cache
        .entry((dim, order))
        .or_insert_with(|| gaussian_norm_samples(dim, order));
    let idx = ((rho * samples.len() as f64).ceil() as usize).clamp(1, samples.len()) - 1;
    samples[idx]
}

/// Draws an inexact derivative bundle of degree `targets.per_order.len()`.
pub fn sample_derivatives<R: Rng>(
    problem: &dyn ExactProblem,
    noise: &NoiseSpec,
    x: &DVector<f64>,
    targets: &AccuracyTargets,
    rng: &mut R,
) -> Result<DerivativeBundle> {
    noise.validate()?;
    targets.validate()?;
    let p = targets.per_order.len();
    if p > problem.degree_available() {
        return Err(ArpError::OrderOutOfRange {
            order: p,
            max: problem.degree_available(),
        });
    }
    let n = problem.dim();
    match noise.kind {
        NoiseKind::None => {
            let tensors = (1..=p).map(|ell| problem.derivative(x, ell)).collect();
            DerivativeBundle::new(x.clone(), tensors, Provenance::Exact)
        }
        NoiseKind::GaussianRelative => {
            // Per-order in-budget probability p_*^{1/p}; independence
            // across orders gives the joint target.
            let rho = noise.p_star_target.powf(1.0 / p as f64);
            let mut tensors = Vec::with_capacity(p);
            for ell in 1..=p {
                let exact = problem.derivative(x, ell);
                let noise_tensor = SymmetricTensor::random_gaussian(ell, n, rng)?;
                let quantile = gaussian_norm_quantile(n, ell, rho);
                let scale = noise.magnitude * targets.per_order[ell - 1] / quantile;
                tensors.push(exact.add_scaled(&noise_tensor, scale)?);
            }
            DerivativeBundle::new(x.clone(), tensors, Provenance::Inexact)
        }
        NoiseKind::AdversarialSign => {
            let mut tensors = Vec::with_capacity(p);
            for ell in 1..=p {
                let exact = problem.derivative(x, ell);
                let amount = noise.magnitude * targets.per_order[ell - 1];
                let norm = exact.norm();
                let perturbed = if norm > 0.0 {
                    // Shrink the tensor toward zero: the worst direction
                    // for decrement-based accuracy events.
                    exact.add_scaled(&exact.clone(), -amount / norm)?
                } else {
                    let mut unit = SymmetricTensor::zeros(ell, n)?;
                    unit = unit.add_scaled(&axis_tensor(ell, n)?, 1.0)?;
                    exact.add_scaled(&unit, amount)?
                };
                tensors.push(perturbed);
            }
            DerivativeBundle::new(x.clone(), tensors, Provenance::Inexact)
        }
        NoiseKind::Subsample => {
            let fs = problem
                .finite_sum()
                .ok_or_else(|| ArpError::NotFiniteSum(problem.name().to_string()))?;
            let total = fs.num_terms();
            let batch_size =
                ((noise.batch_fraction * total as f64).ceil() as usize).clamp(1, total);
            let mut indices: Vec<usize> = (0..total).collect();
            // Partial Fisher-Yates, then sort so a full batch accumulates
            // in the same order as the exact derivative.
            for i in 0..batch_size {
                let j = i + rng.random_range(0..(total - i));
                indices.swap(i, j);
            }
            let mut batch: Vec<usize> = indices[..batch_size].to_vec();
            batch.sort_unstable();
            let mut tensors = Vec::with_capacity(p);
            for ell in 1..=p {
                let mut acc = SymmetricTensor::zeros(ell, n)?;
                for &i in &batch {
                    acc = acc.add_scaled(&fs.term_derivative(i, x, ell), 1.0)?;
                }
                tensors.push(acc.scaled(1.0 / batch_size as f64));
            }
            let provenance = if batch_size == total {
                Provenance::Exact
            } else {
                Provenance::Inexact
            };
            DerivativeBundle::new(x.clone(), tensors, provenance)
        }
    }
}

/// Unit-norm symmetric tensor along the first axis, used when an
/// adversarial perturbation has no tensor to oppose.
fn axis_tensor(order: usize, dim: usize) -> Result<SymmetricTensor> {
    let mut entries = vec![0.0; dim.pow(order as u32)];
    entries[0] = 1.0;
    SymmetricTensor::from_entries(order, dim, entries)
}
