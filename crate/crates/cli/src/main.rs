//! `cplap`: runs the experiment suite and writes JSON reports and CSV tables.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cplap::harness::{self, ExperimentConfig, ExperimentId, HarnessError};

const FORMATS: &str = "\
Outputs (under --out):
  <experiment>.json          report: config, constants, checks, conventions, pass, runtime
  <experiment>_<table>.csv   one file per table, header row first
  all.json                   suite summary (the `all` subcommand only)

Floats in CSV are written as {:.16e} (17 significant digits); inf and nan
are spelled out. Exit status: 0 when every check passes, 1 when a check
fails (reports are still written), 2 for a missing or malformed config.";

#[derive(Parser, Debug)]
#[command(name = "cplap", version, about = "Experiment driver for complex-coefficient p-Laplacian systems", after_long_help = FORMATS)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base resolution (cells per unit length).
    #[arg(long, global = true)]
    resolution: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One solve with telemetry (solve_telemetry.jsonl) and snapshots (solve_*.snap).
    #[command(after_long_help = "\
solve_residuals.csv: iteration, relative_residual

The telemetry log holds one JSON record per iteration: iter, residual, step.")]
    Solve,
    /// Flux inequalities on fresh samples.
    #[command(after_long_help = "\
verify_algebra_constants.csv: p, mu, c1, c2, c0, analytic, estimation_samples,
  fresh_samples, band_fail, accretivity_fail, sector_fail, re_margin,
  im_margin, im_relative")]
    VerifyAlgebra {
        /// Restrict to these exponents.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        p: Vec<f64>,
    },
    /// BMO seminorms of the coefficient knobs.
    #[command(after_long_help = "\
bmo_seminorms.csv: kind, knob, resolution, r0, seminorm, ball_count, structure_ok")]
    Bmo,
    /// Maximal-operator bounds, layer cake and Vitali.
    #[command(after_long_help = "\
maximal_weak11.csv: input, beta, lambda, level_measure, rhs_unit, ratio, reference_c
maximal_truncation.csv: input, beta, r, max_abs_diff, exact
maximal_layer_cake.csv: field, q, layer_cake, lq_power, rel_diff
maximal_vitali.csv: eps, trial, variant, v1_cells, v2_cells, small_measure,
  density_implication, hypotheses_hold, measured_c, bound, conclusion_holds")]
    Maximal,
    /// Convergence and multi-start uniqueness.
    #[command(after_long_help = "\
existence_uniqueness_uniqueness.csv: dimension, p, mu, coefficient, resolution,
  converged, iterations, final_relative_residual, du_norm, distance, tol,
  slack, ratio, pass
existence_uniqueness_expected_failures.csv: coefficient, rejected, message")]
    ExistenceUniqueness,
    /// Global energy constant across exponents, sources and resolutions.
    #[command(after_long_help = "\
apriori_solves.csv: p, mu, family, resolution, converged, iterations, final_relative_residual
apriori_constants.csv: p, mu, family, resolution, lhs, rhs, ratio
apriori_stability.csv: series, coarse_resolution, fine_resolution, c_coarse,
  c_fine, spread, stable
apriori_manufactured.csv: p, mu, resolution, ratio_solved, ratio_exact, rel_diff")]
    Apriori,
    /// Local comparison maps and their error against the BMO seminorm.
    #[command(after_long_help = "\
comparison_measurements.csv: p, mu, source, contrast, bmo_seminorm, center,
  converged, interior_ratio, error, energy, data, relative_error
comparison_fits.csv: p, mu, contrast, bmo_seminorm, interior_constant,
  mean_relative_error, delta, c_delta")]
    Comparison,
    /// Good-lambda level sets over a (sigma, kappa) sweep.
    #[command(after_long_help = "\
good_lambda_pairs.csv: sigma, kappa, lambda, v_cells, level_cells, w_cells,
  ratio, inclusion, vitali_hypotheses, vitali_conclusion, vitali_measured_c
good_lambda_witnesses.csv: sigma, kappa, levels, max_ratio, nonempty_v_levels, witness")]
    GoodLambda,
    /// Calderon-Zygmund constants for maximal functions and gradients.
    #[command(after_long_help = "\
cz_sweep_solves.csv: as apriori_solves.csv
cz_sweep_constants.csv: case, p, mu, q, beta, family, resolution, lhs, rhs,
  ratio, grad_lhs, grad_rhs, grad_ratio, q_gt_p
cz_sweep_stability.csv, cz_sweep_gradient_stability.csv: as apriori_stability.csv
cz_sweep_bmo_trend.csv: contrast, bmo_seminorm, p, mu, q, beta, ratio, grad_ratio")]
    CzSweep,
    /// Morrey constants and the indicator-weight annuli.
    #[command(after_long_help = "\
morrey_sweep_solves.csv: as apriori_solves.csv
morrey_sweep_constants.csv: q, s, p, mu, family, resolution, lhs, rhs, ratio, lebesgue_ratio
morrey_sweep_stability.csv: as apriori_stability.csv
morrey_sweep_annulus.csv: q, s, tau, j, cells, max_weight, bound, pass")]
    MorreySweep,
    /// Every experiment except `solve`, plus all.json.
    All,
}

impl Command {
    fn id(&self) -> ExperimentId {
        match self {
            Command::Solve => ExperimentId::Solve,
            Command::VerifyAlgebra { .. } => ExperimentId::VerifyAlgebra,
            Command::Bmo => ExperimentId::Bmo,
            Command::Maximal => ExperimentId::Maximal,
            Command::ExistenceUniqueness => ExperimentId::ExistenceUniqueness,
            Command::Apriori => ExperimentId::Apriori,
            Command::Comparison => ExperimentId::Comparison,
            Command::GoodLambda => ExperimentId::GoodLambda,
            Command::CzSweep => ExperimentId::CzSweep,
            Command::MorreySweep => ExperimentId::MorreySweep,
            Command::All => ExperimentId::All,
        }
    }
}

fn configure(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = cli.command.id();
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.global.out {
        cfg.output = out.clone();
    }
    if let Some(m) = cli.global.resolution {
        cfg.resolution = m;
    }
    if let Command::VerifyAlgebra { p } = &cli.command {
        if !p.is_empty() {
            cfg.algebra.p_values = p.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match configure(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cplap: {e}");
            return ExitCode::from(2);
        }
    };
    match harness::execute(&cfg) {
        Ok(outcome) => {
            for r in &outcome.reports {
                let failed: Vec<&str> = r
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| c.name.as_str())
                    .collect();
                println!(
                    "{:<22} {}  {:>8.1}s{}",
                    r.experiment.name(),
                    if r.pass { "PASS" } else { "FAIL" },
                    r.runtime_seconds,
                    if failed.is_empty() {
                        String::new()
                    } else {
                        format!("  failed: {}", failed.join(", "))
                    }
                );
            }
            println!("reports written to {}", cfg.output.display());
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ HarnessError::Config(_)) => {
            eprintln!("cplap: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("cplap: {e}");
            ExitCode::from(1)
        }
    }
}
