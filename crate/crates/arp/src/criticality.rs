//! Optimality measures over a `δ`-ball.
//!
//! The order-`j` measure at a point is the largest decrease of the degree-`j`
//! Taylor truncation over steps of norm at most `δ`. Order one has the
//! closed form `‖g‖·δ`; order two reduces to a trust-region subproblem,
//! solved here by safeguarded root-finding on the secular equation
//! `‖d(λ)‖ = δ` with Cholesky factorizations of `H + λI` and an explicit
//! hard-case branch built from the leftmost eigenvector.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ArpError, Result};
use crate::tensor::{factorial, taylor_decrement, DerivativeBundle, SymmetricTensor};

/// Relative boundary tolerance for the secular iteration: the returned step
/// satisfies `‖d‖ ∈ [δ(1−TOL), δ(1+TOL)]` on the boundary branch.
const BOUNDARY_TOL: f64 = 1e-8;

/// A measure value together with the direction achieving it.
#[derive(Debug, Clone)]
pub struct MeasureResult {
    /// Largest decrement of the truncated Taylor polynomial over the ball.
    pub value: f64,
    /// Global maximizer of the decrement, `‖direction‖ ≤ δ`.
    pub direction: DVector<f64>,
}

/// First-order measure: `‖g‖·δ`, maximized by `−δ g/‖g‖`.
pub fn phi_order1(g: &DVector<f64>, delta: f64) -> MeasureResult {
    let norm = g.norm();
    if norm == 0.0 {
        return MeasureResult {
            value: 0.0,
            direction: DVector::zeros(g.len()),
        };
    }
    MeasureResult {
        value: norm * delta,
        direction: g * (-delta / norm),
    }
}

/// Second-order measure: `−min_{‖d‖≤δ} (g·d + ½ d·Hd)` with the argmin.
pub fn phi_order2(g: &DVector<f64>, h: &SymmetricTensor, delta: f64) -> Result<MeasureResult> {
    if h.order() != 2 {
        return Err(ArpError::OrderOutOfRange {
            order: h.order(),
            max: 2,
        });
    }
    if h.dim() != g.len() {
        return Err(ArpError::DimensionMismatch {
            expected: g.len(),
            got: h.dim(),
        });
    }
    let d = solve_trust_region(g, &h.as_matrix(), delta)?;
    let value = -(g.dot(&d) + 0.5 * quad_form(&h.as_matrix(), &d));
    Ok(MeasureResult {
        value: value.max(0.0),
        direction: d,
    })
}

fn quad_form(h: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    d.dot(&(h * d))
}

/// Of two candidate maximizers, returns the one that is lexicographically
/// larger at the first component where they differ. Keeps traces
/// deterministic when the maximizer is non-unique (e.g. `±` eigenvectors).
fn lex_prefer(a: DVector<f64>, b: DVector<f64>) -> DVector<f64> {
    for i in 0..a.len() {
        if a[i] != b[i] {
            return if a[i] > b[i] { a } else { b };
        }
    }
    a
}

/// Minimizes `g·d + ½ d·Hd` over `‖d‖ ≤ δ`.
fn solve_trust_region(g: &DVector<f64>, h: &DMatrix<f64>, delta: f64) -> Result<DVector<f64>> {
    let n = g.len();
    if n == 0 || delta == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let eig = h.clone().symmetric_eigen();
    let lambda_min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !lambda_min.is_finite() {
        return Err(ArpError::Eigensolver(format!(
            "non-finite eigenvalue for {n}x{n} Hessian"
        )));
    }
    let scale = eig
        .eigenvalues
        .iter()
        .fold(g.norm().max(1.0), |m, &l| m.max(l.abs()));

    // Interior Newton point, valid when H is positive definite.
    if lambda_min > 0.0 {
        if let Some(chol) = Cholesky::new(h.clone()) {
            let d = chol.solve(&(-g));
            if d.norm() <= delta {
                return Ok(d);
            }
        }
    }

    let lam_floor = (-lambda_min).max(0.0);

    // Decompose g against the λ_min eigenspace to detect the hard case.
    let eig_tol = 1e-12 * scale;
    let mut g_min_norm2 = 0.0;
    let mut min_index = 0;
    for i in 0..n {
        if eig.eigenvalues[i] <= lambda_min + eig_tol {
            let c = eig.eigenvectors.column(i).dot(g);
            g_min_norm2 += c * c;
            min_index = i;
        }
    }

    if g_min_norm2.sqrt() <= 1e-11 * g.norm().max(1.0) {
        // g has (numerically) no component in the λ_min eigenspace: the
        // secular equation may have no root above λ_min. Build the regular
        // part of the step at λ = −λ_min in the eigenbasis.
        let mut d_perp = DVector::zeros(n);
        for i in 0..n {
            if eig.eigenvalues[i] > lambda_min + eig_tol {
                let c = eig.eigenvectors.column(i).dot(g);
                d_perp += eig.eigenvectors.column(i) * (-c / (eig.eigenvalues[i] + lam_floor));
            }
        }
        let dp_norm = d_perp.norm();
        if dp_norm <= delta {
            if lambda_min >= 0.0 {
                // Constraint inactive at λ* = 0: d_perp is a global minimizer.
                return Ok(d_perp);
            }
            // Hard case: pad to the boundary along the leftmost eigenvector.
            let u = eig.eigenvectors.column(min_index).clone_owned();
            let t = (delta * delta - dp_norm * dp_norm).max(0.0).sqrt();
            let cand_a = &d_perp + &u * t;
            let cand_b = &d_perp - &u * t;
            return Ok(lex_prefer(cand_a, cand_b));
        }
        // ‖d(λ)‖ crosses δ strictly above λ_min; fall through.
    }

    secular_boundary(g, h, delta, lam_floor, scale)
}

/// Safeguarded Newton iteration on the secular equation `‖d(λ)‖ = δ` with
/// Cholesky solves of `H + λI`, for `λ` strictly above `max(0, −λ_min)`.
fn secular_boundary(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    delta: f64,
    lam_floor: f64,
    scale: f64,
) -> Result<DVector<f64>> {
    let n = g.len();
    let identity = DMatrix::<f64>::identity(n, n);
    // ‖d(λ)‖ ≤ ‖g‖/(λ − lam_floor), so this upper end has ‖d‖ ≤ δ.
    let mut lo = lam_floor;
    let mut hi = lam_floor + g.norm() / delta + 1e-8 * scale.max(1.0);
    let mut lam = if lam_floor > 0.0 {
        lam_floor + 0.5 * (hi - lam_floor)
    } else {
        0.5 * hi
    };
    let mut best: Option<(f64, DVector<f64>)> = None;

    for _ in 0..200 {
        let shifted = h + &identity * lam;
        let chol = match Cholesky::new(shifted) {
            Some(c) => c,
            None => {
                // λ numerically at or below −λ_min; move up.
                lo = lam;
                lam = 0.5 * (lam + hi);
                continue;
            }
        };
        let d = chol.solve(&(-g));
        let nd = d.norm();
        let gap = (nd - delta).abs() / delta;
        if best.as_ref().is_none_or(|(b, _)| gap < *b) {
            best = Some((gap, d.clone()));
        }
        if nd >= delta * (1.0 - BOUNDARY_TOL) && nd <= delta * (1.0 + BOUNDARY_TOL) {
            return Ok(d);
        }
        if nd > delta {
            lo = lam;
        } else {
            hi = lam;
        }
        // Newton step on 1/δ − 1/‖d(λ)‖ (the Moré–Sorensen update).
        let w = chol
            .l()
            .solve_lower_triangular(&d)
            .ok_or_else(|| ArpError::Eigensolver("triangular solve failed".into()))?;
        let wn2 = w.norm_squared();
        let mut next = lam + (nd * nd / wn2) * ((nd - delta) / delta);
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        lam = next;
        if (hi - lo) <= 1e-16 * scale.max(1.0) {
            break;
        }
    }
    // The bracket collapsed onto the floor: treat as a hard case and pad
    // the best regular step to the boundary along the leftmost eigenvector.
    let (_, d) = best.ok_or_else(|| ArpError::Eigensolver("secular iteration failed".into()))?;
    let nd = d.norm();
    if nd < delta && lam_floor > 0.0 {
        let eig = h.clone().symmetric_eigen();
        let mut min_index = 0;
        for i in 0..g.len() {
            if eig.eigenvalues[i] < eig.eigenvalues[min_index] {
                min_index = i;
            }
        }
        let u = eig.eigenvectors.column(min_index).clone_owned();
        let t = (delta * delta - nd * nd).max(0.0).sqrt();
        return Ok(lex_prefer(&d + &u * t, &d - &u * t));
    }
    if nd > 0.0 {
        return Ok(d * (delta / nd).min(1.0));
    }
    Ok(d)
}

/// Sampling lower bound for the measure: the best decrement of `bundle`
/// (already truncated to the order under test) over `samples` seeded
/// quasi-random points in the `δ`-ball and on its boundary sphere.
pub fn phi_bruteforce(bundle: &DerivativeBundle, delta: f64, samples: usize) -> Result<f64> {
    let n = bundle.dim();
    if delta == 0.0 || n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xB1F0_F0CE);
    let mut best = 0.0f64; // d = 0 is feasible and gives 0
    let inv_n = 1.0 / n as f64;
    for i in 0..samples {
        let mut v = DVector::from_fn(n, |_, _| crate::oracle::standard_normal(&mut rng));
        let norm = v.norm();
        if norm < 1e-14 {
            continue;
        }
        // Alternate boundary and interior points (interior radius uniform
        // in volume).
        let r = if i % 2 == 0 {
            delta
        } else {
            delta * rand::Rng::random::<f64>(&mut rng).powf(inv_n)
        };
        v *= r / norm;
        best = best.max(taylor_decrement(bundle, &v)?);
    }
    Ok(best)
}

/// Whether `x` (described by its exact derivative bundle) is an
/// `(ε,δ)`-approximate minimizer of order `q`: the order-`j` measure stays
/// below `ε_j δ_j^j / j!` for every `j ∈ 1..=q`.
pub fn termination_test(
    bundle: &DerivativeBundle,
    deltas: &[f64],
    epsilons: &[f64],
    q: usize,
) -> Result<bool> {
    if q == 0 || q > 2 {
        return Err(ArpError::Invalid(format!(
            "optimality order q = {q} outside supported range 1..=2"
        )));
    }
    if bundle.degree() < q {
        return Err(ArpError::OrderOutOfRange {
            order: q,
            max: bundle.degree(),
        });
    }
    if deltas.len() < q || epsilons.len() < q {
        return Err(ArpError::Invalid(
            "termination test needs one delta and one epsilon per order".into(),
        ));
    }
    for j in 1..=q {
        let delta = deltas[j - 1];
        let phi = match j {
            1 => phi_order1(&bundle.gradient(), delta).value,
            2 => phi_order2(&bundle.gradient(), bundle.tensor(2), delta)?.value,
            _ => unreachable!(),
        };
        if phi > epsilons[j - 1] * delta.powi(j as i32) / factorial(j) {
            return Ok(false);
        }
    }
    Ok(true)
}
