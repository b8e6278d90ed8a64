//! Sectioned `key = value` configuration files.
//!
//! Three sections are recognized: `[algorithm]` (run constants and
//! switches), `[noise]` (the derivative-perturbation model), and `[sweep]`
//! (problem selection, starting points, tolerance and seed lists). Every
//! field has a default; `#` starts a comment. Unknown sections or keys are
//! configuration errors rather than silent noise.

use std::path::{Path, PathBuf};

use crate::driver::{Config, FEstimateMode, NoiseMode};
use crate::error::{ArpError, Result};
use crate::oracle::NoiseKind;
use crate::sweep::X0Spec;

/// Parsed file: run constants plus optional sweep-level settings.
#[derive(Debug, Clone)]
pub struct FileConfig {
    pub config: Config,
    pub sweep: SweepOptions,
}

/// `[sweep]` section contents; all optional.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub problem: Option<String>,
    pub data_path: Option<PathBuf>,
    pub x0: Option<X0Spec>,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
}

pub fn load_config_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<FileConfig> {
    let mut config = Config::default();
    let mut omega_explicit = false;
    let mut open_loop_targets: Option<Vec<f64>> = None;
    let mut epsilon_raw: Option<Vec<f64>> = None;
    let mut sweep = SweepOptions::default();
    let mut x0_fixed: Option<Vec<f64>> = None;
    let mut x0_radius: Option<f64> = None;
    let mut x0_count: Option<usize> = None;

    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ArpError::Config(format!("line {}: {msg}", lineno + 1));
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(err(format!("malformed section '{line}'")));
            }
            section = line[1..line.len() - 1].trim().to_lowercase();
            if !["algorithm", "noise", "sweep"].contains(&section.as_str()) {
                return Err(err(format!("unknown section '[{section}]'")));
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
        let key = key.trim().to_lowercase();
        let value = value.trim();
        if section.is_empty() {
            return Err(err(format!("key '{key}' outside any section")));
        }

        match (section.as_str(), key.as_str()) {
            ("algorithm", "p") => config.p = parse_num(value, &err)?,
            ("algorithm", "q") => config.q = parse_num(value, &err)?,
            ("algorithm", "epsilon") => epsilon_raw = Some(parse_f64_list(value, &err)?),
            ("algorithm", "theta") => config.theta = parse_num(value, &err)?,
            ("algorithm", "eta") => config.eta = parse_num(value, &err)?,
            ("algorithm", "gamma") => config.gamma = parse_num(value, &err)?,
            ("algorithm", "sigma0") => config.sigma0 = parse_num(value, &err)?,
            ("algorithm", "sigma_min") => config.sigma_min = parse_num(value, &err)?,
            ("algorithm", "omega") => {
                config.omega = parse_num(value, &err)?;
                omega_explicit = true;
            }
            ("algorithm", "alpha") => config.alpha = parse_num(value, &err)?,
            ("algorithm", "max_iterations") => config.max_iterations = parse_num(value, &err)?,
            ("algorithm", "inner_budget") => config.inner_budget = parse_num(value, &err)?,
            ("algorithm", "seed") => config.seed = parse_num(value, &err)?,
            ("algorithm", "instrument_events") => {
                config.instrument_events = parse_bool(value, &err)?
            }
            ("algorithm", "stop_on_inexact") => config.stop_on_inexact = parse_bool(value, &err)?,
            ("algorithm", "noise_mode") => {
                config.noise_mode = match value {
                    "open_loop" => NoiseMode::OpenLoop,
                    "closed_loop" => NoiseMode::ClosedLoop,
                    _ => return Err(err(format!("unknown noise_mode '{value}'"))),
                }
            }
            ("algorithm", "f_estimate_mode") => {
                config.f_estimate_mode = match value {
                    "random" => FEstimateMode::Random,
                    "adversarial" => FEstimateMode::Adversarial,
                    _ => return Err(err(format!("unknown f_estimate_mode '{value}'"))),
                }
            }
            ("algorithm", "closed_loop_floor") => {
                config.closed_loop_floor = parse_num(value, &err)?
            }
            ("noise", "kind") => {
                config.noise.kind = match value {
                    "none" => NoiseKind::None,
                    "gaussian_relative" => NoiseKind::GaussianRelative,
                    "adversarial_sign" => NoiseKind::AdversarialSign,
                    "subsample" => NoiseKind::Subsample,
                    _ => return Err(err(format!("unknown noise kind '{value}'"))),
                }
            }
            ("noise", "p_star_target") => config.noise.p_star_target = parse_num(value, &err)?,
            ("noise", "magnitude") => config.noise.magnitude = parse_num(value, &err)?,
            ("noise", "batch_fraction") => config.noise.batch_fraction = parse_num(value, &err)?,
            ("noise", "open_loop_targets") => {
                open_loop_targets = Some(parse_f64_list(value, &err)?)
            }
            ("sweep", "problem") => sweep.problem = Some(value.to_string()),
            ("sweep", "data_path") => sweep.data_path = Some(PathBuf::from(value)),
            ("sweep", "x0") => x0_fixed = Some(parse_f64_list(value, &err)?),
            ("sweep", "x0_ball_radius") => x0_radius = Some(parse_num(value, &err)?),
            ("sweep", "x0_count") => x0_count = Some(parse_num(value, &err)?),
            ("sweep", "epsilons") => sweep.epsilons = parse_f64_list(value, &err)?,
            ("sweep", "seeds") => sweep.seeds = parse_seed_list(value, &err)?,
            (sec, k) => return Err(err(format!("unknown key '{k}' in section [{sec}]"))),
        }
    }

    // Derived defaults that depend on other fields.
    if !omega_explicit {
        config.omega = 0.9 * ((1.0 - config.eta) / 3.0).min(config.eta / 2.0);
    }
    match epsilon_raw {
        Some(eps) if eps.len() == 1 => config.epsilon = vec![eps[0]; config.q],
        Some(eps) => config.epsilon = eps,
        None => {
            if config.epsilon.len() != config.q {
                let e = config.epsilon[0];
                config.epsilon = vec![e; config.q];
            }
        }
    }
    match open_loop_targets {
        Some(t) if t.len() == 1 => config.open_loop_targets = vec![t[0]; config.p],
        Some(t) => config.open_loop_targets = t,
        None => {
            if config.open_loop_targets.len() < config.p {
                let t = config.open_loop_targets[0];
                config.open_loop_targets = vec![t; config.p];
            }
        }
    }

    sweep.x0 = match (x0_fixed, x0_radius) {
        (Some(_), Some(_)) => {
            return Err(ArpError::Config(
                "give either a fixed x0 or x0_ball_radius, not both".into(),
            ))
        }
        (Some(v), None) => Some(X0Spec::Fixed(v)),
        (None, Some(radius)) => Some(X0Spec::RandomBall {
            radius,
            count: x0_count.unwrap_or(1),
        }),
        (None, None) => x0_count.map(|count| X0Spec::RandomBall { radius: 2.0, count }),
    };

    config.validate()?;
    Ok(FileConfig { config, sweep })
}

fn parse_num<T: std::str::FromStr>(value: &str, err: &dyn Fn(String) -> ArpError) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| err(format!("cannot parse '{value}'")))
}

fn parse_bool(value: &str, err: &dyn Fn(String) -> ArpError) -> Result<bool> {
    match value.to_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(format!("cannot parse boolean '{value}'"))),
    }
}

fn parse_f64_list(value: &str, err: &dyn Fn(String) -> ArpError) -> Result<Vec<f64>> {
    let items: Vec<f64> = value
        .split(',')
        .map(|tok| tok.trim())
        .filter(|tok| !tok.is_empty())
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| err(format!("cannot parse number '{tok}'")))
        })
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(err("empty list".into()));
    }
    Ok(items)
}

/// Either a comma list (`1, 2, 5`) or an exclusive range (`0:20`).
fn parse_seed_list(value: &str, err: &dyn Fn(String) -> ArpError) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = value.split_once(':') {
        let lo: u64 = parse_num(lo.trim(), err)?;
        let hi: u64 = parse_num(hi.trim(), err)?;
        if hi <= lo {
            return Err(err(format!("empty seed range {lo}:{hi}")));
        }
        return Ok((lo..hi).collect());
    }
    value
        .split(',')
        .map(|tok| tok.trim())
        .filter(|tok| !tok.is_empty())
        .map(|tok| {
            tok.parse::<u64>()
                .map_err(|_| err(format!("cannot parse seed '{tok}'")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn defaults_are_valid_and_omega_tracks_eta() {
        let fc = parse_config_text("").unwrap();
        assert!(fc.config.validate().is_ok());
        assert_abs_diff_eq!(fc.config.omega, 0.9 * 0.05);

        let fc = parse_config_text("[algorithm]\neta = 0.4\n").unwrap();
        // min((1-0.4)/3, 0.4/2) = 0.2
        assert_abs_diff_eq!(fc.config.omega, 0.18);
    }

    #[test]
    fn full_file_parses() {
        let text = r#"
# experiment configuration
[algorithm]
p = 2
q = 2
epsilon = 1e-3            # applied to both orders
theta = 0.3
eta = 0.2
gamma = 4.0
sigma0 = 2.0
sigma_min = 1e-6
max_iterations = 200
noise_mode = closed_loop
f_estimate_mode = adversarial
seed = 9

[noise]
kind = gaussian_relative
p_star_target = 0.9
magnitude = 1.5

[sweep]
problem = quartic:10
epsilons = 1e-2, 1e-3
seeds = 0:4
x0_ball_radius = 2.5
x0_count = 4
"#;
        let fc = parse_config_text(text).unwrap();
        assert_eq!(fc.config.p, 2);
        assert_eq!(fc.config.q, 2);
        assert_eq!(fc.config.epsilon, vec![1e-3, 1e-3]);
        assert_eq!(fc.config.gamma, 4.0);
        assert_eq!(fc.config.noise.kind, NoiseKind::GaussianRelative);
        assert!(matches!(fc.config.noise_mode, NoiseMode::ClosedLoop));
        assert!(matches!(
            fc.config.f_estimate_mode,
            FEstimateMode::Adversarial
        ));
        assert_eq!(fc.sweep.problem.as_deref(), Some("quartic:10"));
        assert_eq!(fc.sweep.seeds, vec![0, 1, 2, 3]);
        assert_eq!(fc.sweep.epsilons, vec![1e-2, 1e-3]);
        assert!(matches!(
            fc.sweep.x0,
            Some(X0Spec::RandomBall { count: 4, .. })
        ));
    }

    #[test]
    fn unknown_keys_and_violations_are_errors() {
        assert!(parse_config_text("[algorithm]\nzeta = 2\n").is_err());
        assert!(parse_config_text("[mystery]\n").is_err());
        assert!(parse_config_text("p = 2\n").is_err());
        // Step-0 violation: ω above its cap.
        assert!(parse_config_text("[algorithm]\neta = 0.1\nomega = 0.25\n").is_err());
        // q > p.
        assert!(parse_config_text("[algorithm]\np = 1\nq = 2\nepsilon = 1e-2, 1e-2\n").is_err());
    }
}
