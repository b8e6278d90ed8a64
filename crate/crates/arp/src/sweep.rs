//! Tolerance sweeps across seeds, aggregation, and slope fitting.
//!
//! A sweep runs the solver for every (ε, seed) pair, summarizes each ε into
//! one row, and emits rows as CSV or JSON. Runs are independent and may
//! execute in parallel; each owns a private random stream keyed by its
//! seed, so results do not depend on scheduling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::driver::{run, Config, RunResult, Termination};
use crate::error::{ArpError, Result};
use crate::problems::{problem_by_name, ExactProblem};

/// Starting-point policy for a sweep.
#[derive(Debug, Clone)]
pub enum X0Spec {
    Fixed(Vec<f64>),
    /// Uniform draw from the ball of the given radius, one per seed.
    RandomBall {
        radius: f64,
        count: usize,
    },
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub problem: String,
    pub data_path: Option<PathBuf>,
    pub x0: X0Spec,
    /// Applied to every optimality order uniformly.
    pub epsilons: Vec<f64>,
    /// One run per (ε, seed). When empty, `RandomBall.count` seeds
    /// (0, 1, ...) are used, or a single seed 0 for a fixed start.
    pub seeds: Vec<u64>,
    pub base: Config,
}

impl SweepSpec {
    pub fn effective_seeds(&self) -> Vec<u64> {
        if !self.seeds.is_empty() {
            return self.seeds.clone();
        }
        match self.x0 {
            X0Spec::Fixed(_) => vec![0],
            X0Spec::RandomBall { count, .. } => (0..count as u64).collect(),
        }
    }

    /// Hard errors plus advisory warnings (returned, not printed).
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.epsilons.is_empty() {
            return Err(ArpError::Config("sweep needs at least one epsilon".into()));
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(ArpError::Config(format!(
                "sweep epsilons must lie in (0, 1], got {:?}",
                self.epsilons
            )));
        }
        let mut warnings = Vec::new();
        if !self.epsilons.windows(2).all(|w| w[0] > w[1]) {
            warnings.push("sweep epsilons are not strictly decreasing".to_string());
        }
        if let X0Spec::RandomBall { radius, .. } = self.x0 {
            if !(radius > 0.0) {
                return Err(ArpError::Config(format!(
                    "x0 ball radius must be positive, got {radius}"
                )));
            }
        }
        Ok(warnings)
    }
}

/// Aggregates of one ε across its seeds. Means cover converged runs only;
/// `frac_converged` reports how many runs that is.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub n_runs: usize,
    #[serde(rename = "mean_N")]
    pub mean_n: f64,
    #[serde(rename = "median_N")]
    pub median_n: f64,
    #[serde(rename = "stddev_N")]
    pub stddev_n: f64,
    pub mean_deriv_evals: f64,
    pub mean_f_evals: f64,
    pub frac_converged: f64,
    /// Fraction of instrumented iterations (pooled over the row's runs)
    /// whose accuracy event held; 1 when nothing was instrumented.
    pub empirical_p_star: f64,
}

const X0_SALT: u64 = 0x0D15_EA5E;

/// Starting point for one seeded run.
pub fn x0_for_seed(
    spec: &SweepSpec,
    problem: &dyn ExactProblem,
    seed: u64,
) -> Result<DVector<f64>> {
    match &spec.x0 {
        X0Spec::Fixed(v) => {
            if v.len() != problem.dim() {
                return Err(ArpError::DimensionMismatch {
                    expected: problem.dim(),
                    got: v.len(),
                });
            }
            Ok(DVector::from_column_slice(v))
        }
        X0Spec::RandomBall { radius, .. } => {
            let n = problem.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ X0_SALT);
            loop {
                let v = DVector::from_fn(n, |_, _| crate::oracle::standard_normal(&mut rng));
                let norm = v.norm();
                if norm > 1e-12 {
                    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                    return Ok(v * (r / norm));
                }
            }
        }
    }
}

/// Runs `|epsilons| × |seeds|` solves and aggregates one row per ε.
/// Deterministic for a given spec, regardless of parallel scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let warnings = spec.validate()?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    spec.base.validate()?;
    let problem = problem_by_name(&spec.problem, spec.data_path.as_deref())?;
    let seeds = spec.effective_seeds();
    if seeds.is_empty() {
        return Err(ArpError::Config("sweep needs at least one seed".into()));
    }

    let jobs: Vec<(usize, u64)> = spec
        .epsilons
        .iter()
        .enumerate()
        .flat_map(|(i, _)| seeds.iter().map(move |&s| (i, s)))
        .collect();

    let results: Vec<((usize, u64), Result<RunResult>)> = jobs
        .par_iter()
        .map(|&(eps_idx, seed)| {
            let mut config = spec.base.clone();
            config.epsilon = vec![spec.epsilons[eps_idx]; config.q];
            config.seed = seed;
            let out = x0_for_seed(spec, problem.as_ref(), seed)
                .and_then(|x0| run(problem.as_ref(), &x0, &config));
            ((eps_idx, seed), out)
        })
        .collect();

    let mut rows = Vec::with_capacity(spec.epsilons.len());
    for (eps_idx, &epsilon) in spec.epsilons.iter().enumerate() {
        let mut ns: Vec<f64> = Vec::new();
        let mut deriv = Vec::new();
        let mut fevals = Vec::new();
        let mut accurate_iters = 0usize;
        let mut instrumented_iters = 0usize;
        let mut n_runs = 0usize;
        for ((idx, _seed), outcome) in &results {
            if *idx != eps_idx {
                continue;
            }
            n_runs += 1;
            let result = match outcome {
                Ok(r) => r,
                Err(e) => return Err(ArpError::Invalid(format!("run failed: {e}"))),
            };
            for rec in &result.trace {
                if let Some(ev) = &rec.events {
                    instrumented_iters += 1;
                    if ev.mk {
                        accurate_iters += 1;
                    }
                }
            }
            if result.termination == Termination::Converged {
                if let Some(n) = result.n_epsilon {
                    ns.push(n as f64);
                    deriv.push(result.deriv_evals as f64);
                    fevals.push(result.f_evals as f64);
                }
            }
        }
        let frac_converged = ns.len() as f64 / n_runs as f64;
        let empirical_p_star = if instrumented_iters == 0 {
            1.0
        } else {
            accurate_iters as f64 / instrumented_iters as f64
        };
        rows.push(SweepRow {
            epsilon,
            n_runs,
            mean_n: mean(&ns),
            median_n: median(&ns),
            stddev_n: stddev(&ns),
            mean_deriv_evals: mean(&deriv),
            mean_f_evals: mean(&fevals),
            frac_converged,
            empirical_p_star,
        });
    }
    Ok(rows)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

/// Sample standard deviation (zero for fewer than two points).
fn stddev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log(mean_N)` against `log(1/ε)`.
///
/// Refuses censored data: every row must have fully converged, and at
/// least three rows are required.
pub fn fit_slope(rows: &[SweepRow]) -> Result<SlopeFit> {
    if rows.len() < 3 {
        return Err(ArpError::Invalid(format!(
            "slope fit needs at least 3 rows, got {}",
            rows.len()
        )));
    }
    if rows.iter().any(|r| r.frac_converged < 1.0) {
        return Err(ArpError::Invalid(
            "slope fit requires every row fully converged (censored counts would bias it)".into(),
        ));
    }
    if rows.iter().any(|r| !(r.mean_n > 0.0)) {
        return Err(ArpError::Invalid(
            "slope fit needs positive mean iteration counts".into(),
        ));
    }
    let xs: Vec<f64> = rows.iter().map(|r| (1.0 / r.epsilon).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_n.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(ArpError::Invalid(
            "slope fit needs at least two distinct epsilons".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}

pub const CSV_HEADER: &str = "epsilon,n_runs,mean_N,median_N,stddev_N,mean_deriv_evals,mean_f_evals,frac_converged,empirical_p_star";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
}

/// 17 significant digits: enough to round-trip any f64.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn emit<W: Write>(rows: &[SweepRow], mut out: W, format: EmitFormat) -> Result<()> {
    match format {
        EmitFormat::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    fmt_f64(r.epsilon),
                    r.n_runs,
                    fmt_f64(r.mean_n),
                    fmt_f64(r.median_n),
                    fmt_f64(r.stddev_n),
                    fmt_f64(r.mean_deriv_evals),
                    fmt_f64(r.mean_f_evals),
                    fmt_f64(r.frac_converged),
                    fmt_f64(r.empirical_p_star),
                )?;
            }
        }
        EmitFormat::Json => {
            serde_json::to_writer_pretty(&mut out, rows)
                .map_err(|e| ArpError::Invalid(format!("json emit failed: {e}")))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn emit_to_path(rows: &[SweepRow], path: &Path, format: EmitFormat) -> Result<()> {
    let file = std::fs::File::create(path)?;
    emit(rows, std::io::BufWriter::new(file), format)
}

/// Parses rows back from the CSV emitted by [`emit`].
pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ArpError::Invalid("empty CSV".into()))?;
    if header.trim() != CSV_HEADER {
        return Err(ArpError::Invalid(format!(
            "unexpected CSV header '{header}'"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(ArpError::Invalid(format!(
                "line {}: expected 9 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|_| {
                ArpError::Invalid(format!("line {}: bad number '{}'", lineno + 2, fields[i]))
            })
        };
        rows.push(SweepRow {
            epsilon: f(0)?,
            n_runs: fields[1].parse::<usize>().map_err(|_| {
                ArpError::Invalid(format!("line {}: bad count '{}'", lineno + 2, fields[1]))
            })?,
            mean_n: f(2)?,
            median_n: f(3)?,
            stddev_n: f(4)?,
            mean_deriv_evals: f(5)?,
            mean_f_evals: f(6)?,
            frac_converged: f(7)?,
            empirical_p_star: f(8)?,
        });
    }
    Ok(rows)
}

/// Reads rows from a file, accepting either emitted format (JSON when the
/// content starts with `[`).
pub fn parse_rows_from_path(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| ArpError::Invalid(format!("bad JSON rows: {e}")))
    } else {
        parse_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::NoiseSpec;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn row(epsilon: f64, mean_n: f64) -> SweepRow {
        SweepRow {
            epsilon,
            n_runs: 4,
            mean_n,
            median_n: mean_n,
            stddev_n: 0.5,
            mean_deriv_evals: mean_n + 1.0,
            mean_f_evals: 2.0 * mean_n,
            frac_converged: 1.0,
            empirical_p_star: 1.0,
        }
    }

    #[test]
    fn slope_recovers_exact_power_law() {
        let rows: Vec<SweepRow> = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
            .iter()
            .map(|&e| row(e, 7.0 * e.powf(-1.5)))
            .collect();
        let fit = fit_slope(&rows).unwrap();
        assert_abs_diff_eq!(fit.slope, 1.5, epsilon = 1e-9);
        assert_relative_eq!(fit.intercept, 7.0f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn slope_of_constant_counts_is_zero() {
        let rows: Vec<SweepRow> = [1e-1, 1e-2, 1e-3].iter().map(|&e| row(e, 12.0)).collect();
        let fit = fit_slope(&rows).unwrap();
        assert_abs_diff_eq!(fit.slope, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn slope_tolerates_multiplicative_jitter() {
        // ±10% jitter over six points keeps the estimate within ±0.15.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let true_slope = 1.5;
            let rows: Vec<SweepRow> = [1e-1, 4e-2, 1.6e-2, 6.4e-3, 2.6e-3, 1e-3]
                .iter()
                .map(|&e| {
                    let jitter = 1.0 + 0.2 * (rng.random::<f64>() - 0.5);
                    row(e, 5.0 * e.powf(-true_slope) * jitter)
                })
                .collect();
            let fit = fit_slope(&rows).unwrap();
            assert!(
                (fit.slope - true_slope).abs() <= 0.15,
                "slope {} strayed from {}",
                fit.slope,
                true_slope
            );
        }
    }

    #[test]
    fn slope_refuses_censored_or_short_input() {
        let mut rows: Vec<SweepRow> = [1e-1, 1e-2, 1e-3].iter().map(|&e| row(e, 10.0)).collect();
        rows[1].frac_converged = 0.9;
        assert!(fit_slope(&rows).is_err());
        assert!(fit_slope(&rows[..2]).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let rows = vec![
            row(1e-2, 17.0),
            row(3.333333333333333e-3, 123.45678901234567),
        ];
        let mut buf = Vec::new();
        emit(&rows, &mut buf, EmitFormat::Csv).unwrap();
        let parsed = parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn empty_rows_emit_header_only() {
        let mut buf = Vec::new();
        emit(&[], &mut buf, EmitFormat::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.trim(), CSV_HEADER);
        assert!(parse_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn sweep_single_epsilon_exact_oracle_converges() {
        let spec = SweepSpec {
            problem: "quadratic:3".into(),
            data_path: None,
            x0: X0Spec::RandomBall {
                radius: 2.0,
                count: 2,
            },
            epsilons: vec![1e-2],
            seeds: vec![1],
            base: Config::default(),
        };
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        assert_abs_diff_eq!(rows[0].frac_converged, 1.0);
        assert_abs_diff_eq!(rows[0].empirical_p_star, 1.0);
        assert_eq!(rows[0].n_runs, 1);
    }

    #[test]
    fn sweep_identical_seeds_replay_identically() {
        let mut base = Config::default();
        base.noise = NoiseSpec {
            kind: crate::oracle::NoiseKind::GaussianRelative,
            p_star_target: 0.8,
            magnitude: 1.0,
            batch_fraction: 1.0,
        };
        let spec = SweepSpec {
            problem: "quartic:3".into(),
            data_path: None,
            x0: X0Spec::RandomBall {
                radius: 1.5,
                count: 2,
            },
            epsilons: vec![1e-2],
            seeds: vec![7, 7],
            base,
        };
        let rows = run_sweep(&spec).unwrap();
        // Two identical seeds: zero spread in the per-run counts.
        assert_abs_diff_eq!(rows[0].stddev_n, 0.0);
        assert_eq!(rows[0].n_runs, 2);
    }

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
}
