//! The outer adaptive-regularization loop.
//!
//! Each iteration samples (possibly perturbed) derivatives, builds the
//! regularized model, computes a certified step, estimates the function at
//! both ends of the step with error at most `ω·ΔT̄`, and accepts or rejects
//! on the ratio of estimated decrease to model decrement. The
//! regularization weight shrinks by `γ` on success and grows by `γ`
//! otherwise (clamped below by `σ_min`).
//!
//! Everything the complexity accounting needs — accuracy events, the step
//! scale `τ`, the smallest decrement, success flags, evaluation counters —
//! is recorded per iteration. Instrumentation uses exact derivatives and is
//! deliberately excluded from the evaluation counters.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;

use crate::criticality::{phi_order1, phi_order2, termination_test, MeasureResult};
use crate::error::{ArpError, Result};
use crate::model::RegModel;
use crate::oracle::{
    accuracy_targets_from_proxy, function_estimate, sample_derivatives, AccuracyTargets,
    EstimateKind, NoiseKind, NoiseSpec,
};
use crate::problems::ExactProblem;
use crate::tensor::{factorial, taylor_decrement, DerivativeBundle};

/// How derivative-accuracy budgets are chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Fixed per-order budgets from the configuration.
    OpenLoop,
    /// Budgets derived from the previous iteration's `τ` and smallest
    /// decrement, floored; the first iteration uses the floor alone.
    ClosedLoop,
}

/// Function-estimate error model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FEstimateMode {
    /// Uniform error within the tolerance.
    Random,
    /// Worst-case signs: high at the current point, low at the trial point,
    /// inflating the acceptance ratio to its permitted maximum.
    Adversarial,
}

/// All run constants plus experiment switches.
#[derive(Debug, Clone, Serialize)]
pub struct Config {
    /// Model degree, 1..=3.
    pub p: usize,
    /// Sought optimality order, 1..=2 and ≤ p.
    pub q: usize,
    /// Accuracy thresholds, one per order `1..=q`, each in (0, 1].
    pub epsilon: Vec<f64>,
    /// Inner-step measure slack, in (0, 1/2).
    pub theta: f64,
    /// Acceptance threshold on the decrease ratio, in (0, 1).
    pub eta: f64,
    /// Regularization update factor, > 1.
    pub gamma: f64,
    pub sigma0: f64,
    pub sigma_min: f64,
    /// Function-estimate accuracy factor, in (0, min((1−η)/3, η/2)).
    pub omega: f64,
    /// Reserved constant in (0, 1); accepted and stored but not used by the
    /// update rules.
    pub alpha: f64,
    pub max_iterations: usize,
    pub inner_budget: usize,
    pub noise: NoiseSpec,
    pub noise_mode: NoiseMode,
    pub f_estimate_mode: FEstimateMode,
    pub seed: u64,
    /// Record accuracy events per iteration (needs exact derivatives).
    pub instrument_events: bool,
    /// Stop on the sampled (inexact) measures instead of the exact ones.
    /// Off by default; the exact stopping rule is the reference behavior.
    pub stop_on_inexact: bool,
    /// Per-order budgets for open-loop mode (length ≥ p).
    pub open_loop_targets: Vec<f64>,
    /// Budget floor for closed-loop mode.
    pub closed_loop_floor: f64,
}

impl Default for Config {
    fn default() -> Self {
        let eta = 0.1f64;
        Self {
            p: 2,
            q: 1,
            epsilon: vec![1e-3],
            theta: 0.25,
            eta,
            gamma: 2.0,
            sigma0: 1.0,
            sigma_min: 1e-8,
            omega: 0.9 * ((1.0 - eta) / 3.0).min(eta / 2.0),
            alpha: 0.5,
            max_iterations: 500,
            inner_budget: 200,
            noise: NoiseSpec::none(),
            noise_mode: NoiseMode::OpenLoop,
            f_estimate_mode: FEstimateMode::Random,
            seed: 0,
            instrument_events: true,
            stop_on_inexact: false,
            open_loop_targets: vec![1e-6; 2],
            closed_loop_floor: 1e-8,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ArpError::Config(msg));
        if !(1..=3).contains(&self.p) {
            return fail(format!("p must be 1..=3, got {}", self.p));
        }
        if !(1..=2).contains(&self.q) || self.q > self.p {
            return fail(format!(
                "q must be 1..=2 and ≤ p, got q={} p={}",
                self.q, self.p
            ));
        }
        if self.epsilon.len() != self.q {
            return fail(format!(
                "need one epsilon per order 1..={}, got {}",
                self.q,
                self.epsilon.len()
            ));
        }
        if self.epsilon.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return fail(format!(
                "epsilons must lie in (0, 1], got {:?}",
                self.epsilon
            ));
        }
        if !(self.theta > 0.0 && self.theta < 0.5) {
            return fail(format!("theta must lie in (0, 1/2), got {}", self.theta));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return fail(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if !(self.gamma > 1.0) {
            return fail(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if !(self.sigma0 > 0.0) {
            return fail(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma0) {
            return fail(format!(
                "sigma_min must lie in (0, sigma0), got {} with sigma0 {}",
                self.sigma_min, self.sigma0
            ));
        }
        let omega_cap = ((1.0 - self.eta) / 3.0).min(self.eta / 2.0);
        if !(self.omega > 0.0 && self.omega < omega_cap) {
            return fail(format!(
                "omega must lie in (0, {omega_cap}), got {}",
                self.omega
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be positive".into());
        }
        if self.inner_budget == 0 {
            return fail("inner_budget must be positive".into());
        }
        self.noise.validate()?;
        if self.open_loop_targets.len() < self.p
            || self.open_loop_targets[..self.p]
                .iter()
                .any(|&x| !(x > 0.0) || !x.is_finite())
        {
            return fail("open_loop_targets needs a positive budget per order 1..=p".into());
        }
        if !(self.closed_loop_floor > 0.0) {
            return fail(format!(
                "closed_loop_floor must be positive, got {}",
                self.closed_loop_floor
            ));
        }
        Ok(())
    }
}

/// Per-iteration accuracy events.
#[derive(Debug, Clone, Serialize)]
pub struct EventFlags {
    /// Inexact full-degree decrement within relative `ω` of the exact one.
    pub m1: bool,
    /// Per order `j`: inexact model decrement accurate along the exact
    /// measure maximizer.
    pub m2: Vec<bool>,
    /// Per order `j`: inexact model decrement accurate along the inexact
    /// measure maximizer.
    pub m3: Vec<bool>,
    /// Conjunction of the above.
    pub mk: bool,
}

/// Everything recorded about one iteration.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub sigma: f64,
    pub step_norm: f64,
    /// Acceptance ratio; `-inf` when the model decrement vanished.
    pub rho: f64,
    pub success: bool,
    pub dt_bar: f64,
    pub phi_bar: Vec<f64>,
    pub f_exact_before: f64,
    pub f_exact_after: f64,
    pub f_bar_before: Option<f64>,
    pub f_bar_after: Option<f64>,
    pub events: Option<EventFlags>,
    pub tau: f64,
    pub dt_min: f64,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    BudgetExhausted,
    InnerFailure,
}

/// Iteration-category tallies over a trace, relative to a threshold `σ_s`.
///
/// `Λ_k` means `σ_k < σ_s`; its closure allows equality. Accurate means the
/// iteration's event conjunction held.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CategoryCounts {
    /// Iterations with σ_k < σ_s.
    pub n_lambda: usize,
    /// Iterations with σ_k ≥ σ_s.
    pub n_not_lambda: usize,
    /// Inaccurate iterations with σ_k ≤ σ_s.
    pub n_i: usize,
    /// Accurate iterations with σ_k ≤ σ_s.
    pub n_a: usize,
    /// Accurate successful iterations with σ_k ≤ σ_s.
    pub n_as: usize,
    /// Accurate unsuccessful iterations with σ_k < σ_s.
    pub n_au: usize,
    /// Inaccurate successful iterations with σ_k ≤ σ_s.
    pub n_is: usize,
    /// Successful iterations with σ_k ≤ σ_s.
    pub n_s: usize,
    /// Unsuccessful iterations with σ_k < σ_s.
    pub n_u: usize,
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// First iteration index at which the stopping test held, if reached.
    pub n_epsilon: Option<usize>,
    pub trace: Vec<IterationRecord>,
    pub final_point: DVector<f64>,
    pub termination: Termination,
    /// Category tallies (instrumented runs only).
    pub counts: Option<CategoryCounts>,
    /// σ_s used for the tallies.
    pub sigma_s: f64,
    /// Counted derivative-bundle evaluations (one per iteration).
    pub deriv_evals: usize,
    /// Counted function estimates (two per iteration with positive
    /// decrement).
    pub f_evals: usize,
}

/// Constants from the complexity analysis, for a given problem and
/// configuration (with the threshold multiplier β fixed at 2).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoryConstants {
    /// Regularization level above which accurate iterations must succeed.
    pub sigma_s: f64,
    /// Tolerance exponent (p+1)/(p−q+1).
    pub varpi: f64,
    /// Step-length constant ψ(σ_s).
    pub psi_sigma_s: f64,
    /// κ(p_*) = 2p_*/(2p_*−1)².
    pub kappa_p_star: f64,
    /// Upper bound on the expected stopping iteration.
    pub bound_on_expected_n: f64,
}

const BETA: f64 = 2.0;

pub fn theory_constants(
    problem: &dyn ExactProblem,
    x0: &DVector<f64>,
    config: &Config,
) -> Result<TheoryConstants> {
    config.validate()?;
    let l = problem.lipschitz_p();
    let denom = 1.0 - config.eta - 3.0 * config.omega;
    if denom <= 0.0 {
        return Err(ArpError::Config(format!(
            "1 − η − 3ω must be positive, got {denom}"
        )));
    }
    let sigma_s = (BETA * config.sigma0).max(l / denom);
    let (p, q) = (config.p as f64, config.q as f64);
    let varpi = (p + 1.0) / (p - q + 1.0);
    let psi_base = (1.0 - 2.0 * config.theta) * factorial(config.p - config.q + 1)
        / (factorial(config.q) * (l + sigma_s));
    let psi_sigma_s = psi_base.powf(varpi).min(1.0);
    let p_star = if config.noise.kind == NoiseKind::None {
        1.0
    } else {
        config.noise.p_star_target
    };
    let kappa_p_star = 2.0 * p_star / (2.0 * p_star - 1.0).powi(2);
    let f0 = problem.value(x0);
    let eps_min = config.epsilon.iter().cloned().fold(f64::INFINITY, f64::min);
    let main = 2.0 * (f0 - problem.f_low()) * factorial(config.p + 1)
        / ((config.eta - 2.0 * config.omega) * config.sigma_min * psi_sigma_s)
        * eps_min.powf(-varpi);
    let log_term = ((sigma_s / config.sigma0).ln() / config.gamma.ln()).ceil();
    Ok(TheoryConstants {
        sigma_s,
        varpi,
        psi_sigma_s,
        kappa_p_star,
        bound_on_expected_n: kappa_p_star * (main + log_term + 2.0),
    })
}

/// Instrumentation quantities around one computed step.
#[derive(Debug, Clone)]
pub struct Instrumentation {
    pub events: EventFlags,
    /// `max(‖s‖, max_j ‖d_j‖, ‖d̄_j‖)`.
    pub tau: f64,
    /// Smallest of the inexact decrements along the step and along both
    /// families of measure maximizers.
    pub dt_min: f64,
}

/// Computes the accuracy events and the (τ, smallest-decrement) pair for a
/// step, from exact derivatives. Costs no counted evaluations.
pub fn instrument_step(
    problem: &dyn ExactProblem,
    model: &RegModel,
    step: &DVector<f64>,
    radii: &[f64],
    q: usize,
    omega: f64,
) -> Result<Instrumentation> {
    let exact_bundle = problem.exact_bundle(model.bundle().point(), model.degree());
    instrument_step_against(&exact_bundle, model, step, radii, q, omega)
}

/// [`instrument_step`] against an explicitly supplied exact bundle.
pub fn instrument_step_against(
    exact_bundle: &DerivativeBundle,
    model: &RegModel,
    step: &DVector<f64>,
    radii: &[f64],
    q: usize,
    omega: f64,
) -> Result<Instrumentation> {
    let exact_model = RegModel::new(exact_bundle.clone(), model.sigma())?;

    let dt_bar = model.decrement(step)?;
    let dt_exact = exact_model.decrement(step)?;
    let m1 = (dt_bar - dt_exact).abs() <= omega * dt_bar;

    let mut m2 = Vec::with_capacity(q);
    let mut m3 = Vec::with_capacity(q);
    let mut tau = step.norm();
    let mut dt_min = dt_bar;
    for j in 1..=q {
        let exact_shifted = exact_model.shifted_bundle(step, j)?;
        let inexact_shifted = model.shifted_bundle(step, j)?;
        let exact_dir = measure_direction(&exact_shifted, radii[j - 1], j)?;
        let inexact_dir = measure_direction(&inexact_shifted, radii[j - 1], j)?;
        tau = tau.max(exact_dir.norm()).max(inexact_dir.norm());
        for (dir, flags) in [(&exact_dir, &mut m2), (&inexact_dir, &mut m3)] {
            let bar = taylor_decrement(&inexact_shifted, dir)?;
            let exact = taylor_decrement(&exact_shifted, dir)?;
            flags.push((bar - exact).abs() <= omega * bar);
            dt_min = dt_min.min(bar);
        }
    }
    let mk = m1 && m2.iter().all(|&b| b) && m3.iter().all(|&b| b);
    Ok(Instrumentation {
        events: EventFlags { m1, m2, m3, mk },
        tau,
        dt_min,
    })
}

/// Accuracy events for one step; see [`instrument_step`].
pub fn detect_events(
    problem: &dyn ExactProblem,
    model: &RegModel,
    step: &DVector<f64>,
    radii: &[f64],
    config: &Config,
) -> Result<EventFlags> {
    Ok(instrument_step(problem, model, step, radii, config.q, config.omega)?.events)
}

fn measure_direction(bundle: &DerivativeBundle, delta: f64, j: usize) -> Result<DVector<f64>> {
    let res: MeasureResult = match j {
        1 => phi_order1(&bundle.gradient(), delta),
        2 => phi_order2(&bundle.gradient(), bundle.tensor(2), delta)?,
        _ => {
            return Err(ArpError::Invalid(format!(
                "measure order {j} outside supported range 1..=2"
            )))
        }
    };
    Ok(res.direction)
}

/// Tallies the iteration categories of a fully instrumented trace.
pub fn count_categories(trace: &[IterationRecord], sigma_s: f64) -> Result<CategoryCounts> {
    let mut c = CategoryCounts::default();
    for rec in trace {
        let events = rec.events.as_ref().ok_or_else(|| {
            ArpError::Invalid(format!(
                "iteration {} lacks event flags; category counting needs an instrumented trace",
                rec.k
            ))
        })?;
        let lambda = rec.sigma < sigma_s;
        let lambda_closure = rec.sigma <= sigma_s;
        let accurate = events.mk;
        let success = rec.success;
        if lambda {
            c.n_lambda += 1;
        } else {
            c.n_not_lambda += 1;
        }
        if lambda_closure {
            if accurate {
                c.n_a += 1;
                if success {
                    c.n_as += 1;
                }
            } else {
                c.n_i += 1;
                if success {
                    c.n_is += 1;
                }
            }
            if success {
                c.n_s += 1;
            }
        }
        if lambda {
            if accurate && !success {
                c.n_au += 1;
            }
            if !success {
                c.n_u += 1;
            }
        }
    }
    Ok(c)
}

/// Executes the solver from `x0` under `config`.
pub fn run(problem: &dyn ExactProblem, x0: &DVector<f64>, config: &Config) -> Result<RunResult> {
    config.validate()?;
    if x0.len() != problem.dim() {
        return Err(ArpError::DimensionMismatch {
            expected: problem.dim(),
            got: x0.len(),
        });
    }
    if config.p > problem.degree_available() {
        return Err(ArpError::Config(format!(
            "problem '{}' provides derivatives up to order {}, config wants p = {}",
            problem.name(),
            problem.degree_available(),
            config.p
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = x0.clone();
    let mut sigma = config.sigma0;
    let mut prev_radii = vec![1.0; config.q];
    let mut prev_tau: Option<f64> = None;
    let mut prev_dt_min: Option<f64> = None;
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut deriv_evals = 0usize;
    let mut f_evals = 0usize;
    let mut termination = Termination::BudgetExhausted;
    let mut n_epsilon = None;

    for k in 0..config.max_iterations {
        // Stopping test with the previous iteration's radii (all ones at
        // k = 0). Exact derivatives; instrumentation, not a counted
        // evaluation.
        if !config.stop_on_inexact {
            let exact_q = problem.exact_bundle(&x, config.q);
            if termination_test(&exact_q, &prev_radii, &config.epsilon, config.q)? {
                n_epsilon = Some(k);
                termination = Termination::Converged;
                break;
            }
        }

        let targets = match config.noise_mode {
            NoiseMode::OpenLoop => AccuracyTargets {
                per_order: config.open_loop_targets[..config.p].to_vec(),
            },
            NoiseMode::ClosedLoop => match (prev_tau, prev_dt_min) {
                (Some(tau), Some(dt)) if tau > 0.0 && dt > 0.0 => accuracy_targets_from_proxy(
                    config.omega,
                    config.p,
                    tau,
                    dt,
                    config.closed_loop_floor,
                )?,
                _ => AccuracyTargets::uniform(config.p, config.closed_loop_floor),
            },
        };
        let bundle = sample_derivatives(problem, &config.noise, &x, &targets, &mut rng)?;
        deriv_evals += 1;
        let model = RegModel::new(bundle, sigma)?;

        if config.stop_on_inexact {
            let measures = model.criticality(&DVector::zeros(x.len()), &prev_radii, config.q)?;
            let passed = measures.iter().enumerate().all(|(idx, m)| {
                let j = idx + 1;
                m.value <= config.epsilon[idx] * prev_radii[idx].powi(j as i32) / factorial(j)
            });
            if passed {
                n_epsilon = Some(k);
                termination = Termination::Converged;
                break;
            }
        }

        let step = match model.compute_step(
            &config.epsilon,
            config.theta,
            config.q,
            config.inner_budget,
        ) {
            Ok(s) => s,
            Err(ArpError::InnerSolverFailure { .. }) => {
                termination = Termination::InnerFailure;
                break;
            }
            Err(e) => return Err(e),
        };
        let dt_bar = step.model_decrement;

        let instr = instrument_step(
            problem,
            &model,
            &step.step,
            &step.radii,
            config.q,
            config.omega,
        )?;

        let (rho, f_bar_before, f_bar_after) = if dt_bar > 0.0 {
            let tol = config.omega * dt_bar;
            let (kind_x, kind_trial) = match config.f_estimate_mode {
                FEstimateMode::Random => (EstimateKind::Random, EstimateKind::Random),
                FEstimateMode::Adversarial => {
                    (EstimateKind::AdversarialHigh, EstimateKind::AdversarialLow)
                }
            };
            let f_bar_x = function_estimate(problem, &x, tol, kind_x, &mut rng)?;
            f_evals += 1;
            let trial = &x + &step.step;
            let f_bar_t = function_estimate(problem, &trial, tol, kind_trial, &mut rng)?;
            f_evals += 1;
            ((f_bar_x - f_bar_t) / dt_bar, Some(f_bar_x), Some(f_bar_t))
        } else {
            (f64::NEG_INFINITY, None, None)
        };

        let success = rho >= config.eta;
        let f_exact_before = problem.value(&x);
        let x_next = if success { &x + &step.step } else { x.clone() };
        let f_exact_after = problem.value(&x_next);

        trace.push(IterationRecord {
            k,
            sigma,
            step_norm: step.step.norm(),
            rho,
            success,
            dt_bar,
            phi_bar: step.phi_bar.iter().map(|m| m.value).collect(),
            f_exact_before,
            f_exact_after,
            f_bar_before,
            f_bar_after,
            events: config.instrument_events.then(|| instr.events.clone()),
            tau: instr.tau,
            dt_min: instr.dt_min,
            inner_iterations: step.inner_iterations,
        });

        prev_tau = Some(instr.tau);
        prev_dt_min = Some(instr.dt_min);
        prev_radii = step.radii;
        x = x_next;
        sigma = if success {
            (sigma / config.gamma).max(config.sigma_min)
        } else {
            config.gamma * sigma
        };
    }

    let sigma_s = theory_constants(problem, x0, config)?.sigma_s;
    let counts = if config.instrument_events {
        Some(count_categories(&trace, sigma_s)?)
    } else {
        None
    };
    Ok(RunResult {
        n_epsilon,
        trace,
        final_point: x,
        termination,
        counts,
        sigma_s,
        deriv_evals,
        f_evals,
    })
}

/// Writes one JSON object per iteration with stable field names.
pub fn write_trace_jsonl<W: Write>(trace: &[IterationRecord], mut out: W) -> Result<()> {
    for rec in trace {
        let events = rec.events.as_ref().map(|e| {
            serde_json::json!({
                "m1": e.m1,
                "m2": e.m2,
                "m3": e.m3,
                "mk": e.mk,
            })
        });
        let row = serde_json::json!({
            "k": rec.k,
            "sigma": rec.sigma,
            "step_norm": rec.step_norm,
            "rho": rec.rho,
            "success": rec.success,
            "dt_bar": rec.dt_bar,
            "phi_bar": rec.phi_bar,
            "events": events,
            "f_exact_before": rec.f_exact_before,
            "f_exact_after": rec.f_exact_after,
            "tau": rec.tau,
            "dt_min": rec.dt_min,
            "inner_iterations": rec.inner_iterations,
        });
        writeln!(out, "{row}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{problem_by_name, Quadratic, Quartic};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn exact_config() -> Config {
        Config::default()
    }

    #[test]
    fn config_omega_bound_enforced() {
        let mut c = exact_config();
        c.eta = 0.1;
        c.omega = 0.05; // cap is min(0.3, 0.05) = 0.05, exclusive
        assert!(c.validate().is_err());
        c.omega = 0.049;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn quadratic_converges_to_gradient_tolerance() {
        let problem = Quadratic::new(2);
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let mut config = exact_config();
        config.epsilon = vec![1e-3];
        let result = run(&problem, &x0, &config).unwrap();
        assert_eq!(result.termination, Termination::Converged);
        assert!(
            problem
                .derivative(&result.final_point, 1)
                .as_vector()
                .norm()
                <= 1e-3
        );
        assert_eq!(result.deriv_evals, result.trace.len());
    }

    #[test]
    fn start_at_minimizer_stops_immediately() {
        let problem = Quartic::new(3);
        let x0 = DVector::from_element(3, 1.0);
        let config = exact_config();
        let result = run(&problem, &x0, &config).unwrap();
        assert_eq!(result.n_epsilon, Some(0));
        assert!(result.trace.is_empty());
        assert_eq!(result.deriv_evals, 0);
    }

    #[test]
    fn zero_decrement_iteration_is_unsuccessful_with_sigma_growth() {
        // Adversarial noise sized to cancel the gradient exactly leaves a
        // stationary convex model, so the step is zero, the decrement is
        // zero, and the iteration must be declared unsuccessful.
        let problem = Quadratic::new(2);
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let mut config = exact_config();
        config.noise = NoiseSpec {
            kind: NoiseKind::AdversarialSign,
            p_star_target: 0.9,
            magnitude: 1.0,
            batch_fraction: 1.0,
        };
        config.open_loop_targets = vec![x0.norm(), 1e-12];
        config.max_iterations = 3;
        config.instrument_events = true;
        let result = run(&problem, &x0, &config).unwrap();
        assert_eq!(result.termination, Termination::BudgetExhausted);
        let rec = &result.trace[0];
        assert_eq!(rec.rho, f64::NEG_INFINITY);
        assert!(!rec.success);
        assert_abs_diff_eq!(rec.dt_bar, 0.0);
        assert_abs_diff_eq!(result.trace[1].sigma, config.gamma * config.sigma0);
        assert_eq!(result.f_evals, 0);
    }

    #[test]
    fn sigma_dynamics_follow_the_update_rule() {
        let problem = problem_by_name("rosenbrock:2", None).unwrap();
        let x0 = DVector::from_vec(vec![-1.2, 1.0]);
        let mut config = exact_config();
        config.epsilon = vec![1e-2];
        config.max_iterations = 200;
        let result = run(problem.as_ref(), &x0, &config).unwrap();
        assert_eq!(result.termination, Termination::Converged);
        for w in result.trace.windows(2) {
            let expected = if w[0].success {
                (w[0].sigma / config.gamma).max(config.sigma_min)
            } else {
                config.gamma * w[0].sigma
            };
            assert_eq!(w[1].sigma, expected);
        }
    }

    #[test]
    fn exact_oracle_marks_every_iteration_accurate() {
        let problem = Quartic::new(3);
        let x0 = DVector::from_vec(vec![0.4, -1.7, 0.9]);
        let mut config = exact_config();
        config.epsilon = vec![1e-2];
        let result = run(&problem, &x0, &config).unwrap();
        assert!(!result.trace.is_empty());
        for rec in &result.trace {
            let ev = rec.events.as_ref().unwrap();
            assert!(ev.mk && ev.m1);
        }
        let counts = result.counts.unwrap();
        assert_eq!(counts.n_i, 0);
        assert_eq!(counts.n_is, 0);
    }

    #[test]
    fn replay_is_deterministic() {
        let problem = Quartic::new(4);
        let x0 = DVector::from_vec(vec![0.3, -0.2, 1.6, 0.7]);
        let mut config = exact_config();
        config.noise = NoiseSpec {
            kind: NoiseKind::GaussianRelative,
            p_star_target: 0.8,
            magnitude: 1.0,
            batch_fraction: 1.0,
        };
        config.noise_mode = NoiseMode::ClosedLoop;
        config.epsilon = vec![1e-2];
        config.seed = 42;
        let a = run(&problem, &x0, &config).unwrap();
        let b = run(&problem, &x0, &config).unwrap();
        assert_eq!(a.n_epsilon, b.n_epsilon);
        assert_eq!(a.trace.len(), b.trace.len());
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ra.sigma.to_bits(), rb.sigma.to_bits());
            assert_eq!(ra.step_norm.to_bits(), rb.step_norm.to_bits());
            assert_eq!(ra.rho.to_bits(), rb.rho.to_bits());
            assert_eq!(ra.dt_bar.to_bits(), rb.dt_bar.to_bits());
        }
        assert_eq!(a.final_point, b.final_point);
    }

    #[test]
    fn deployed_stopping_mode_uses_sampled_measures() {
        let problem = Quadratic::new(2);
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let mut config = exact_config();
        config.epsilon = vec![1e-3];
        config.stop_on_inexact = true;
        let result = run(&problem, &x0, &config).unwrap();
        assert_eq!(result.termination, Termination::Converged);
        // The stopping check consumes one sampled bundle per iteration,
        // including the final one.
        assert_eq!(result.deriv_evals, result.n_epsilon.unwrap() + 1);
        assert!(
            problem
                .derivative(&result.final_point, 1)
                .as_vector()
                .norm()
                <= 1e-3
        );
    }

    #[test]
    fn theory_constants_reference_values() {
        let problem = Quadratic::new(2);
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let mut config = exact_config();
        config.p = 2;
        config.q = 1;
        let t = theory_constants(&problem, &x0, &config).unwrap();
        assert_abs_diff_eq!(t.varpi, 1.5);
        assert_abs_diff_eq!(t.kappa_p_star, 2.0); // exact oracle ⇒ p_* = 1

        config.q = 2;
        config.epsilon = vec![1e-3, 1e-3];
        let t = theory_constants(&problem, &x0, &config).unwrap();
        assert_abs_diff_eq!(t.varpi, 3.0);

        // σ_s arithmetic with η = 0.1, ω = 0.02, L = 10, σ₀ = 1, β = 2.
        struct Stub;
        impl ExactProblem for Stub {
            fn name(&self) -> &str {
                "stub"
            }
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, _x: &DVector<f64>) -> f64 {
                0.0
            }
            fn derivative(&self, _x: &DVector<f64>, ell: usize) -> crate::tensor::SymmetricTensor {
                crate::tensor::SymmetricTensor::zeros(ell, 1).unwrap()
            }
            fn f_low(&self) -> f64 {
                -1.0
            }
            fn lipschitz_p(&self) -> f64 {
                10.0
            }
        }
        let mut config = exact_config();
        config.eta = 0.1;
        config.omega = 0.02;
        config.sigma0 = 1.0;
        config.q = 1;
        config.epsilon = vec![1e-2];
        let t = theory_constants(&Stub, &DVector::zeros(1), &config).unwrap();
        assert_relative_eq!(t.sigma_s, 10.0 / 0.84, max_relative = 1e-12);
    }

    #[test]
    fn category_counts_consistency() {
        // Synthetic traces: the closure identity n_i + n_a = #{σ ≤ σ_s}.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        let sigma_s = 1.0;
        for _ in 0..50 {
            let trace: Vec<IterationRecord> = (0..40)
                .map(|k| {
                    let sigma = [0.5, 1.0, 2.0][rng.random_range(0..3usize)];
                    let mk = rng.random::<f64>() < 0.7;
                    let success = rng.random::<f64>() < 0.5;
                    IterationRecord {
                        k,
                        sigma,
                        step_norm: 0.0,
                        rho: 0.0,
                        success,
                        dt_bar: 0.0,
                        phi_bar: vec![],
                        f_exact_before: 0.0,
                        f_exact_after: 0.0,
                        f_bar_before: None,
                        f_bar_after: None,
                        events: Some(EventFlags {
                            m1: mk,
                            m2: vec![mk],
                            m3: vec![mk],
                            mk,
                        }),
                        tau: 0.0,
                        dt_min: 0.0,
                        inner_iterations: 0,
                    }
                })
                .collect();
            let c = count_categories(&trace, sigma_s).unwrap();
            let closure = trace.iter().filter(|r| r.sigma <= sigma_s).count();
            assert_eq!(c.n_i + c.n_a, closure);
            assert_eq!(c.n_lambda + c.n_not_lambda, trace.len());
            assert!(c.n_as <= c.n_a && c.n_is <= c.n_i && c.n_au <= c.n_a);
        }
        assert_eq!(
            count_categories(&[], 1.0).unwrap(),
            CategoryCounts::default()
        );
    }

    #[test]
    fn uninstrumented_trace_rejected_by_counting() {
        let rec = IterationRecord {
            k: 0,
            sigma: 1.0,
            step_norm: 0.0,
            rho: 0.0,
            success: true,
            dt_bar: 0.0,
            phi_bar: vec![],
            f_exact_before: 0.0,
            f_exact_after: 0.0,
            f_bar_before: None,
            f_bar_after: None,
            events: None,
            tau: 0.0,
            dt_min: 0.0,
            inner_iterations: 0,
        };
        assert!(count_categories(&[rec], 1.0).is_err());
    }

    #[test]
    fn trace_jsonl_field_names() {
        let problem = Quadratic::new(2);
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let mut config = exact_config();
        config.epsilon = vec![1e-2];
        let result = run(&problem, &x0, &config).unwrap();
        let mut buf = Vec::new();
        write_trace_jsonl(&result.trace, &mut buf).unwrap();
        let first = String::from_utf8(buf).unwrap();
        let line = first.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "k",
            "sigma",
            "step_norm",
            "rho",
            "success",
            "dt_bar",
            "phi_bar",
            "events",
            "f_exact_before",
            "f_exact_after",
            "tau",
            "dt_min",
            "inner_iterations",
        ] {
            assert!(v.get(key).is_some(), "missing trace field {key}");
        }
        assert!(v["events"]["m1"].is_boolean());
    }
}
