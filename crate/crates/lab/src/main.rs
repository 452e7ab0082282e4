use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use etkf_core::identities::verify_identities;
use etkf_core::twin::{observation_sequence, run_filter};
use etkf_lab::checks::{check_uniform_bound, check_wellposedness, FloorCheck, DEFAULT_Z};
use etkf_lab::export::{self, BoundColumns};
use etkf_lab::scaling::{parse_gammas, scaling_report};
use etkf_lab::{run_monte_carlo, LabError, ResolvedConstants, RunConfig};

#[derive(Parser)]
#[command(name = "etkf-lab", version, about = "ETKF twin experiments and error-bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one replicate and write its per-step trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        /// Also write the observations seen by the replicate.
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Run replicates in parallel and write the per-step summary.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the bound tables without simulating.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the randomized identity battery; exits non-zero on any failure.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Fit the log-log slope of the long-run bound in the noise scale.
    Scaling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gammas: String,
    },
}

fn load(path: &PathBuf) -> Result<(RunConfig, ResolvedConstants)> {
    let cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    let constants = ResolvedConstants::resolve(&cfg)?;
    for line in constants.provenance() {
        eprintln!("{line}");
    }
    Ok((cfg, constants))
}

fn run(config: &PathBuf, out: &PathBuf, replicate: u64, observations: Option<&PathBuf>) -> Result<ExitCode> {
    let (cfg, constants) = load(config)?;
    let twin = cfg.twin_with_alpha(constants.alpha.value)?;
    let trace = run_filter(&twin, replicate)?;
    let bounds = BoundColumns::compute(&constants, cfg.cycles, trace.initial.ensemble_err_sq, trace.initial.e_sq);
    export::write_trace(&trace, &bounds, out)?;
    if let Some(path) = observations {
        export::write_observations(&observation_sequence(&twin, replicate)?, path)?;
    }
    if let Some(f) = &trace.failure {
        eprintln!("run stopped at step {}: {}", f.step, f.error);
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn montecarlo(config: &PathBuf, replicates: Option<usize>, out: &PathBuf) -> Result<ExitCode> {
    let (cfg, constants) = load(config)?;
    let twin = cfg.twin_with_alpha(constants.alpha.value)?;
    let r = replicates.unwrap_or(cfg.replicates);
    let summary = run_monte_carlo(&twin, r)?;
    let s0 = summary.step(0);
    let bounds = BoundColumns::compute(&constants, cfg.cycles, s0.mean_ensemble_err_sq, s0.mean_e_sq);
    export::write_summary(&summary, &bounds, out)?;

    match check_wellposedness(&constants, &summary, DEFAULT_Z) {
        Ok(report) => {
            let n = report.violations().count();
            println!("wellposedness: {} ({n} violation(s) beyond {DEFAULT_Z} standard errors)", verdict(report.passed()));
        }
        Err(LabError::ConfigMismatch(why)) => println!("wellposedness: skipped ({why})"),
        Err(e) => return Err(e.into()),
    }
    match check_uniform_bound(&constants, &summary, DEFAULT_Z) {
        Ok(report) => {
            if report.below_threshold {
                println!("uniform bound: alpha = {} is below alpha0 = {}", report.params.alpha, report.constants.alpha0);
            }
            match &report.floor {
                FloorCheck::NoFloor => println!("eigenvalue floor: skipped (no floor for this alpha)"),
                FloorCheck::Checked { floor, violations } => {
                    println!("eigenvalue floor {floor}: {} ({} violation(s))", verdict(violations.is_empty()), violations.len());
                }
            }
            println!("finite-time bound: {}", verdict(report.finite_time_passed()));
            match &report.asymptotic {
                Some(a) => println!(
                    "long-run bound: {} (tail mean {} +/- {}, bound {}, run-alpha variant {})",
                    verdict(a.passed),
                    a.tail_mean,
                    a.half_width,
                    a.bound,
                    a.bound_run_alpha
                ),
                None => println!("long-run bound: not contracting (theta = {})", report.constants.theta),
            }
            println!("ball exits: {}", report.ball_exits);
        }
        Err(LabError::ConfigMismatch(why)) => println!("uniform bound: skipped ({why})"),
        Err(e) => return Err(e.into()),
    }
    Ok(ExitCode::SUCCESS)
}

fn bounds(config: &PathBuf, out: &PathBuf) -> Result<ExitCode> {
    let (cfg, constants) = load(config)?;
    let twin = cfg.twin_with_alpha(constants.alpha.value)?;
    let (e0, e0_ens) = export::expected_initial_errors(&twin)?;
    export::write_bounds(&BoundColumns::compute(&constants, cfg.cycles, e0_ens, e0), out)?;
    Ok(ExitCode::SUCCESS)
}

fn verify(trials: usize, seed: u64) -> Result<ExitCode> {
    anyhow::ensure!(trials >= 1, "trials must be at least 1");
    let report = verify_identities(seed, trials);
    for r in &report.results {
        println!("{:<34} max residual {:.3e} (tolerance {:.0e}) {}", r.name, r.max_residual, r.tolerance, verdict(r.passed()));
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn scaling(config: &PathBuf, gammas: &str) -> Result<ExitCode> {
    let (_, constants) = load(config)?;
    let template = constants.inflation_params()?;
    let report = scaling_report(&template, &parse_gammas(gammas)?)?;
    println!("gamma,asymptotic_bound");
    for (g, b) in &report.rows {
        println!("{},{}", export::format_f64(*g), export::format_f64(*b));
    }
    println!("slope {}", report.slope);
    Ok(ExitCode::SUCCESS)
}

fn verdict(ok: bool) -> &'static str {
    if ok { "PASS" } else { "FAIL" }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, replicate, observations } => run(config, out, *replicate, observations.as_ref()),
        Command::Montecarlo { config, replicates, out } => montecarlo(config, *replicates, out),
        Command::Bounds { config, out } => bounds(config, out),
        Command::Verify { trials, seed } => verify(*trials, *seed),
        Command::Scaling { config, gammas } => scaling(config, gammas),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
