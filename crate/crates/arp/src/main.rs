//! Command-line harness: single runs, tolerance sweeps, slope fits.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use arp::config_text::{load_config_file, FileConfig};
use arp::driver::{run, Config, Termination};
use arp::error::ArpError;
use arp::problems::problem_by_name;
use arp::sweep::{
    emit_to_path, fit_slope, parse_rows_from_path, run_sweep, x0_for_seed, EmitFormat, SweepSpec,
    X0Spec,
};

#[derive(Parser)]
#[command(
    name = "arp",
    about = "Adaptive regularization solver and benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem instance and report the outcome.
    Run {
        /// Problem name, e.g. quadratic, quartic:10, rosenbrock:8, cubic1d, lsq.
        #[arg(long)]
        problem: Option<String>,
        /// Configuration file ([algorithm]/[noise]/[sweep] sections).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-iteration trace as JSON lines.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run an epsilon sweep across seeds and write aggregated rows.
    Sweep {
        /// Sweep specification file.
        #[arg(long)]
        spec: PathBuf,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Fit log(mean_N) against log(1/epsilon) from emitted rows.
    Slope {
        /// Rows from a previous sweep (CSV or JSON).
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}

fn classify(e: &ArpError) -> u8 {
    match e {
        ArpError::InnerSolverFailure { .. } => 3,
        ArpError::Config(_)
        | ArpError::UnknownProblem(_)
        | ArpError::Invalid(_)
        | ArpError::NotFiniteSum(_)
        | ArpError::Io(_) => 2,
        _ => 1,
    }
}

fn dispatch() -> Result<ExitCode, ArpError> {
    match Cli::parse().command {
        Command::Run {
            problem,
            config,
            seed,
            trace_out,
        } => cmd_run(problem, config, seed, trace_out),
        Command::Sweep { spec, out, format } => cmd_sweep(spec, out, format),
        Command::Slope { input } => cmd_slope(input),
    }
}

fn cmd_run(
    problem_flag: Option<String>,
    config_path: Option<PathBuf>,
    seed: Option<u64>,
    trace_out: Option<PathBuf>,
) -> Result<ExitCode, ArpError> {
    let file = match config_path {
        Some(p) => load_config_file(&p)?,
        None => FileConfig {
            config: Config::default(),
            sweep: Default::default(),
        },
    };
    let mut config = file.config;
    if let Some(s) = seed {
        config.seed = s;
    }
    let name = problem_flag
        .or(file.sweep.problem.clone())
        .ok_or_else(|| ArpError::Config("no problem given (use --problem or [sweep])".into()))?;
    let problem = problem_by_name(&name, file.sweep.data_path.as_deref())?;

    // Starting point: the [sweep] section when present, otherwise a
    // seed-keyed draw from the radius-2 ball.
    let x0_spec = file.sweep.x0.clone().unwrap_or(X0Spec::RandomBall {
        radius: 2.0,
        count: 1,
    });
    let pseudo_spec = SweepSpec {
        problem: name.clone(),
        data_path: file.sweep.data_path.clone(),
        x0: x0_spec,
        epsilons: config.epsilon.clone(),
        seeds: vec![config.seed],
        base: config.clone(),
    };
    let x0 = x0_for_seed(&pseudo_spec, problem.as_ref(), config.seed)?;

    let result = run(problem.as_ref(), &x0, &config)?;
    if let Some(path) = trace_out {
        let fh = std::fs::File::create(&path)?;
        arp::driver::write_trace_jsonl(&result.trace, std::io::BufWriter::new(fh))?;
    }
    let f_final = problem.value(&result.final_point);
    println!("problem            {name}");
    println!("termination        {:?}", result.termination);
    println!(
        "n_epsilon          {}",
        result
            .n_epsilon
            .map_or("not reached".to_string(), |n| n.to_string())
    );
    println!("iterations         {}", result.trace.len());
    println!("final f            {f_final:.9e}");
    println!("derivative evals   {}", result.deriv_evals);
    println!("function estimates {}", result.f_evals);
    if let Some(c) = &result.counts {
        println!(
            "categories         n_A={} n_AS={} n_I={} n_IS={} n_U={} (sigma_s={:.3e})",
            c.n_a, c.n_as, c.n_i, c.n_is, c.n_u, result.sigma_s
        );
    }
    if result.termination == Termination::InnerFailure {
        eprintln!("inner solver failed to certify a step within its budget");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(spec_path: PathBuf, out: PathBuf, format: Format) -> Result<ExitCode, ArpError> {
    let file = load_config_file(&spec_path)?;
    let problem = file
        .sweep
        .problem
        .clone()
        .ok_or_else(|| ArpError::Config("sweep spec needs problem = ... in [sweep]".into()))?;
    if file.sweep.epsilons.is_empty() {
        return Err(ArpError::Config(
            "sweep spec needs epsilons = ... in [sweep]".into(),
        ));
    }
    let spec = SweepSpec {
        problem,
        data_path: file.sweep.data_path.clone(),
        x0: file.sweep.x0.clone().unwrap_or(X0Spec::RandomBall {
            radius: 2.0,
            count: 1,
        }),
        epsilons: file.sweep.epsilons.clone(),
        seeds: file.sweep.seeds.clone(),
        base: file.config,
    };
    let rows = run_sweep(&spec)?;
    let fmt = match format {
        Format::Csv => EmitFormat::Csv,
        Format::Json => EmitFormat::Json,
    };
    emit_to_path(&rows, &out, fmt)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_slope(input: PathBuf) -> Result<ExitCode, ArpError> {
    let rows = parse_rows_from_path(&input)?;
    let fit = fit_slope(&rows)?;
    println!("slope     {:.6}", fit.slope);
    println!("intercept {:.6}", fit.intercept);
    println!("r_squared {:.6}", fit.r_squared);
    Ok(ExitCode::SUCCESS)
}
