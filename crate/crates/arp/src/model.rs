//! The regularized local model and its step computation.
//!
//! Given inexact derivatives at the current iterate and a regularization
//! weight σ, the model of the objective's variation is
//!
//! ```text
//! m(s) = Σ_{ℓ=1..p} T̄_ℓ[s]^ℓ/ℓ!  +  σ/(p+1)! ‖s‖^{p+1}
//! ```
//!
//! (equivalently `−ΔT̄(s) + σ/(p+1)!‖s‖^{p+1}`, so `m(0) = 0`). The inner
//! solver drives `m` down from `s = 0` until the model's own order-`j`
//! measures fall below their thresholds, which certifies the step.

use nalgebra::DVector;

use crate::criticality::{phi_order1, phi_order2, MeasureResult};
use crate::error::{ArpError, Result};
use crate::tensor::{
    factorial, regularizer_derivative, regularizer_value, shifted_derivative, taylor_decrement,
    DerivativeBundle, SymmetricTensor,
};

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Restriction of a model to a ray, as the exact change `m(s+td) − m(s)`.
/// The Taylor part carries its own polynomial coefficients; the
/// regularizer change is computed through a stable norm difference, so the
/// delta stays meaningful even where `|m|` dwarfs the step's effect.
struct Ray {
    /// Coefficient of `t^ℓ` for `ℓ = 1..=p`.
    taylor: Vec<f64>,
    base_norm: f64,
    s_dot_d: f64,
    d_norm2: f64,
    reg_coeff: f64,
}

impl Ray {
    fn delta(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut tp = 1.0;
        for c in &self.taylor {
            tp *= t;
            acc += c * tp;
        }
        let p = self.taylor.len();
        let b = self.base_norm;
        let gain = 2.0 * t * self.s_dot_d + t * t * self.d_norm2; // a² − b²
        let a = (b * b + gain).max(0.0).sqrt();
        if a + b > 0.0 {
            let mut geom = 0.0; // Σ a^i b^{p−i}, so (a−b)·geom = a^{p+1} − b^{p+1}
            for i in 0..=p {
                geom += a.powi(i as i32) * b.powi((p - i) as i32);
            }
            acc += self.reg_coeff * (gain / (a + b)) * geom;
        }
        acc
    }
}

/// Degree-`p` Taylor bundle plus regularization weight.
#[derive(Debug, Clone)]
pub struct RegModel {
    bundle: DerivativeBundle,
    sigma: f64,
}

/// A step accepted by the inner solver.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub step: DVector<f64>,
    /// Optimality radii used for the measure tests (all fixed at one for
    /// orders one and two).
    pub radii: Vec<f64>,
    /// Decrement of the inexact Taylor polynomial along `step`, `≥ 0`.
    pub model_decrement: f64,
    /// Model measures at `step`, one per order `1..=q`.
    pub phi_bar: Vec<MeasureResult>,
    pub inner_iterations: usize,
}

impl RegModel {
    pub fn new(bundle: DerivativeBundle, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(ArpError::Invalid(format!(
                "regularization weight must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { bundle, sigma })
    }

    pub fn bundle(&self) -> &DerivativeBundle {
        &self.bundle
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn degree(&self) -> usize {
        self.bundle.degree()
    }

    pub fn dim(&self) -> usize {
        self.bundle.dim()
    }

    /// `m(s)`.
    pub fn value(&self, s: &DVector<f64>) -> Result<f64> {
        let p = self.degree();
        Ok(-taylor_decrement(&self.bundle, s)?
            + self.sigma / factorial(p + 1) * regularizer_value(s, p))
    }

    /// Decrement of the Taylor part along `s` (the regularizer excluded).
    pub fn decrement(&self, s: &DVector<f64>) -> Result<f64> {
        taylor_decrement(&self.bundle, s)
    }

    /// `m(s + t·d) − m(s)`, evaluated without the cancellation that direct
    /// subtraction suffers when `|m|` is large: the Taylor part is an exact
    /// polynomial in `t`, and the regularizer difference is computed via a
    /// stable `‖s+td‖ − ‖s‖`.
    pub fn value_delta(&self, s: &DVector<f64>, d: &DVector<f64>, t: f64) -> Result<f64> {
        Ok(self.ray(s, d)?.delta(t))
    }

    /// One-dimensional restriction of `m` along `s + t·d`, in delta form.
    fn ray(&self, s: &DVector<f64>, d: &DVector<f64>) -> Result<Ray> {
        let p = self.degree();
        let mut taylor = Vec::with_capacity(p);
        for ell in 1..=p {
            taylor.push(shifted_derivative(&self.bundle, s, ell)?.apply_all(d)? / factorial(ell));
        }
        Ok(Ray {
            taylor,
            base_norm: s.norm(),
            s_dot_d: s.dot(d),
            d_norm2: d.norm_squared(),
            reg_coeff: self.sigma / factorial(p + 1),
        })
    }

    /// Degree-`j` bundle of the model's derivatives with respect to a probe
    /// direction, evaluated at offset `s`: order ℓ holds
    /// `∇_s^ℓ T̄(s) + σ/(p+1)! ∇^ℓ‖s‖^{p+1}`, so its Taylor decrement in `d`
    /// is the model's order-`j` decrement at `s`.
    pub fn shifted_bundle(&self, s: &DVector<f64>, j: usize) -> Result<DerivativeBundle> {
        let p = self.degree();
        if j == 0 || j > p.min(2) {
            return Err(ArpError::OrderOutOfRange {
                order: j,
                max: p.min(2),
            });
        }
        let coeff = self.sigma / factorial(p + 1);
        let mut tensors: Vec<SymmetricTensor> = Vec::with_capacity(j);
        for ell in 1..=j {
            let taylor_part = shifted_derivative(&self.bundle, s, ell)?;
            let reg_part = regularizer_derivative(s, p, ell)?;
            tensors.push(taylor_part.add_scaled(&reg_part, coeff)?);
        }
        DerivativeBundle::new(s.clone(), tensors, self.bundle.provenance())
    }

    /// Model measures `φ̄_j` at `s` for `j = 1..=q`, with their maximizers.
    pub fn criticality(
        &self,
        s: &DVector<f64>,
        deltas: &[f64],
        q: usize,
    ) -> Result<Vec<MeasureResult>> {
        if q == 0 || q > 2 {
            return Err(ArpError::Invalid(format!(
                "optimality order q = {q} outside supported range 1..=2"
            )));
        }
        if deltas.len() < q {
            return Err(ArpError::Invalid(
                "one radius per optimality order required".into(),
            ));
        }
        let shifted = self.shifted_bundle(s, q.min(self.degree()))?;
        let mut out = Vec::with_capacity(q);
        for j in 1..=q {
            let res = match j {
                1 => phi_order1(&shifted.gradient(), deltas[0]),
                2 => phi_order2(&shifted.gradient(), shifted.tensor(2), deltas[1])?,
                _ => unreachable!(),
            };
            out.push(res);
        }
        Ok(out)
    }

    /// Computes a step with nonpositive model value whose model measures
    /// satisfy `φ̄_j ≤ θ ε_j δ_j^j/j!` for all `j ≤ q`, with all radii fixed
    /// at one.
    ///
    /// Starts at `s = 0` and descends on `m` (trust-region directions from
    /// the shifted gradient/Hessian when `p ≥ 2`, steepest descent with an
    /// exact quadratic line search when `p = 1`), testing the measures
    /// after every accepted iterate. Budget exhaustion is surfaced as
    /// [`ArpError::InnerSolverFailure`] carrying the best iterate.
    pub fn compute_step(
        &self,
        epsilons: &[f64],
        theta: f64,
        q: usize,
        inner_budget: usize,
    ) -> Result<StepResult> {
        if !(theta > 0.0 && theta < 0.5) {
            return Err(ArpError::Invalid(format!(
                "theta must lie in (0, 1/2), got {theta}"
            )));
        }
        if epsilons.len() < q {
            return Err(ArpError::Invalid(
                "one tolerance per optimality order required".into(),
            ));
        }
        let p = self.degree();
        let n = self.dim();
        let radii = vec![1.0; q];
        let thresholds: Vec<f64> = (1..=q)
            .map(|j| theta * epsilons[j - 1] / factorial(j))
            .collect();

        let mut s = DVector::<f64>::zeros(n);
        let mut m_val = 0.0;
        let mut inner = 0usize;
        let mut best: Option<(f64, StepResult)> = None;
        // Probe radius for direction finding only (the measure tests always
        // use the unit radius). Seeded where the regularizer balances the
        // gradient or the negative curvature — the natural step scale for
        // the current σ — and afterwards tracking accepted step lengths, so
        // both far-away minimizers (tiny σ) and microscopic ones (huge σ)
        // are reached geometrically.
        let initial_radius = self.natural_scale(
            &self.bundle.gradient(),
            (p >= 2).then(|| self.bundle.tensor(2)),
        );
        let mut probe_radius = initial_radius;

        loop {
            let measures = self.criticality(&s, &radii, q)?;
            let violation = measures
                .iter()
                .zip(&thresholds)
                .map(|(m, t)| m.value - t)
                .fold(f64::NEG_INFINITY, f64::max);
            let result = StepResult {
                step: s.clone(),
                radii: radii.clone(),
                model_decrement: self.decrement(&s)?,
                phi_bar: measures.clone(),
                inner_iterations: inner,
            };
            if violation <= 0.0 {
                debug_assert!(m_val <= 1e-12);
                return Ok(result);
            }
            if best.as_ref().is_none_or(|(v, _)| violation < *v) {
                best = Some((violation, result));
            }
            if inner >= inner_budget {
                let (best_violation, best_step) = best.unwrap();
                return Err(ArpError::InnerSolverFailure {
                    budget: inner_budget,
                    best_violation,
                    best: Box::new(best_step),
                });
            }

            // Search direction from the model's own derivatives at s.
            let probe = self.shifted_bundle(&s, p.min(2))?;
            let g_m = probe.gradient();
            let mut direction = if p >= 2 {
                phi_order2(&g_m, probe.tensor(2), probe_radius)?.direction
            } else {
                -&g_m
            };
            if direction.norm() <= 1e-300 {
                direction = -&g_m;
            }

            let accepted = match self.line_search(&s, &g_m, &direction, p)? {
                Some(hit) => Some(hit),
                // Trust-region direction stalled; retry along steepest
                // descent before giving up.
                None => {
                    let fallback = -&g_m;
                    self.line_search(&s, &g_m, &fallback, p)?
                }
            };
            match accepted {
                Some((s_new, delta)) => {
                    probe_radius = (2.0 * (&s_new - &s).norm()).clamp(1e-300, 1e12);
                    s = s_new;
                    m_val += delta;
                }
                None => {
                    let (best_violation, best_step) = best.unwrap();
                    return Err(ArpError::InnerSolverFailure {
                        budget: inner_budget,
                        best_violation,
                        best: Box::new(best_step),
                    });
                }
            }
            inner += 1;
        }
    }

    /// Step scale at which the regularizer balances the model's gradient
    /// (`σ‖s‖^p/p! ≈ ‖g‖`) or its negative curvature
    /// (`2σ‖s‖^{p−1}/(p+1)! ≈ |λ_min|`), whichever is larger.
    fn natural_scale(&self, g_m: &DVector<f64>, h_m: Option<&SymmetricTensor>) -> f64 {
        let p = self.degree();
        let grad_scale = (factorial(p) * g_m.norm() / self.sigma).powf(1.0 / p as f64);
        let curv_scale = match h_m {
            Some(h) if p >= 2 => {
                let lam_min = h
                    .as_matrix()
                    .symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                if lam_min < 0.0 {
                    (factorial(p + 1) * (-lam_min) / (2.0 * self.sigma))
                        .powf(1.0 / (p as f64 - 1.0))
                } else {
                    0.0
                }
            }
            _ => 0.0,
        };
        grad_scale.max(curv_scale).clamp(1e-300, 1e12)
    }

    /// Line search along `direction`, judged on the exact ray delta (never
    /// on differences of possibly huge model values). Returns the accepted
    /// point and its delta. For `p = 1` the ray is an exactly solvable
    /// quadratic, so the minimizing step is taken directly.
    fn line_search(
        &self,
        s: &DVector<f64>,
        g_m: &DVector<f64>,
        direction: &DVector<f64>,
        p: usize,
    ) -> Result<Option<(DVector<f64>, f64)>> {
        let dd = g_m.dot(direction);
        let ray = self.ray(s, direction)?;
        if p == 1 {
            // delta(t) = t g_m·d + (σ/2) t² ‖d‖².
            let denom = self.sigma * ray.d_norm2;
            if denom <= 0.0 || dd >= 0.0 {
                return Ok(None);
            }
            let t = -dd / denom;
            let delta = ray.delta(t);
            if delta < 0.0 {
                return Ok(Some((s + direction * t, delta)));
            }
            return Ok(None);
        }
        // Unit step first; when it already gives sufficient decrease, keep
        // doubling while the delta keeps improving. The expansion matters
        // when σ has collapsed to σ_min and the model minimizer is far
        // away: fixed-length steps could not reach it within budget.
        let unit_delta = ray.delta(1.0);
        let unit_ok = if dd < 0.0 {
            unit_delta <= ARMIJO_C1 * dd
        } else {
            unit_delta < 0.0
        };
        if unit_ok {
            let mut best_t = 1.0;
            let mut best_delta = unit_delta;
            for _ in 0..60 {
                let t2 = 2.0 * best_t;
                let d2 = ray.delta(t2);
                if d2 < best_delta {
                    best_t = t2;
                    best_delta = d2;
                } else {
                    break;
                }
            }
            return Ok(Some((s + direction * best_t, best_delta)));
        }
        let mut t = BACKTRACK;
        for _ in 0..MAX_BACKTRACKS {
            let delta = ray.delta(t);
            let sufficient = if dd < 0.0 {
                delta <= ARMIJO_C1 * t * dd
            } else {
                delta < 0.0
            };
            if sufficient {
                return Ok(Some((s + direction * t, delta)));
            }
            t *= BACKTRACK;
        }
        Ok(None)
    }
}
