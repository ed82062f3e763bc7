//! Convergence and multi-start uniqueness over exponents and coefficient kinds.

use super::{solver_options, COEFFICIENT_STREAM, SOURCE_STREAM};
use crate::fields::{make_coefficient, CoefficientSpec};
use crate::harness::config::{ExperimentConfig, ExperimentId};
use crate::harness::inputs::{unit_grid, CoefficientChoice, Family};
use crate::harness::report::{ExperimentReport, Table};
use crate::harness::Result;
use crate::solver::{cell_lq_norm, solve, uniqueness_probe, Init, ProblemSpec, SolveOptions};
use crate::Complex64;

struct Case {
    p: f64,
    mu: f64,
    coefficient: CoefficientChoice,
    m: usize,
    n: usize,
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(ExperimentId::ExistenceUniqueness, cfg);
    report.convention(
        "uniqueness_slack",
        "max pairwise ||D(u_i - u_j)||_p <= uniqueness_factor * tol * max(||Du||_p, 1)",
    );
    let ex = &cfg.existence;
    let mut cases = vec![Case {
        p: 2.0,
        mu: 0.0,
        coefficient: CoefficientChoice::Constant {
            value: Complex64::new(1.0, 0.0),
        },
        m: cfg.resolution,
        n: cfg.dimension,
    }];
    for e in &ex.exponents {
        for coefficient in &ex.coefficients {
            cases.push(Case {
                p: e.p,
                mu: e.mu,
                coefficient: coefficient.clone(),
                m: cfg.resolution,
                n: cfg.dimension,
            });
        }
    }
    if ex.smoke_3d_resolution > 0 && cfg.dimension == 2 {
        cases.push(Case {
            p: 3.0,
            mu: 0.0,
            coefficient: CoefficientChoice::default_oscillatory(),
            m: ex.smoke_3d_resolution,
            n: 3,
        });
    }
    let mut table = Table::new(
        "uniqueness",
        &[
            "dimension",
            "p",
            "mu",
            "coefficient",
            "resolution",
            "converged",
            "iterations",
            "final_relative_residual",
            "du_norm",
            "distance",
            "tol",
            "slack",
            "ratio",
            "pass",
        ],
    );
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for case in &cases {
        let grid = unit_grid(case.n, case.m, cfg.domain)?;
        let a = case
            .coefficient
            .build(&grid, cfg.bounds, cfg.seed ^ COEFFICIENT_STREAM)?;
        let f = Family::Smooth.build(&grid, cfg.components, cfg.seed ^ SOURCE_STREAM)?;
        let spec = ProblemSpec::new(grid.clone(), a, f, case.p, case.mu)?;
        let opts = solver_options(cfg);
        let base = solve(&spec, &opts);
        let probe_opts = SolveOptions {
            init: Init::Random {
                amplitude: ex.init_amplitude,
            },
            ..opts.clone()
        };
        // The three-dimensional case is a convergence smoke test only.
        let probe = if case.n == cfg.dimension {
            Some(uniqueness_probe(&spec, &probe_opts, ex.trials))
        } else {
            None
        };
        let tol = opts.tolerance(case.p);
        let (converged, iterations, rel, du) = match &base {
            Ok(r) => (
                true,
                r.iterations,
                r.final_relative_residual,
                cell_lq_norm(&grid, &r.state.du, case.p),
            ),
            Err(_) => (false, 0, f64::NAN, f64::NAN),
        };
        let slack = cfg.slack.uniqueness_factor * tol * du.max(1.0);
        let (distance, probe_ok) = match &probe {
            Some(Ok(u)) => (u.max_distance, u.max_distance <= slack),
            Some(Err(_)) => (f64::NAN, false),
            None => (0.0, true),
        };
        let ratio = distance / (tol * du.max(1.0));
        let pass = converged && probe_ok;
        if probe.is_some() && ratio.is_finite() {
            worst = worst.max(ratio);
        }
        if !pass {
            let why = match (&base, &probe) {
                (Err(e), _) => e.to_string(),
                (_, Some(Err(e))) => e.to_string(),
                _ => format!("distance {distance:.3e} above slack {slack:.3e}"),
            };
            failures.push(format!(
                "n={} p={} mu={} {}: {why}",
                case.n,
                case.p,
                case.mu,
                case.coefficient.label()
            ));
        }
        table.push(vec![
            case.n.into(),
            case.p.into(),
            case.mu.into(),
            case.coefficient.label().into(),
            case.m.into(),
            converged.into(),
            iterations.into(),
            rel.into(),
            du.into(),
            distance.into(),
            tol.into(),
            slack.into(),
            ratio.into(),
            pass.into(),
        ]);
    }
    report.check(
        "converged_and_unique",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} configurations", cases.len())
        } else {
            failures.join("; ")
        },
    );
    report
        .constants
        .insert("max_distance_over_tol".into(), worst);

    // A coefficient outside the sector never reaches the solver.
    let grid = unit_grid(cfg.dimension, cfg.resolution, cfg.domain)?;
    let bad = make_coefficient(
        &CoefficientSpec::Constant {
            value: Complex64::new(-1.0, 0.0),
        },
        &grid,
        cfg.bounds,
        0,
    );
    let mut rejected = Table::new("expected_failures", &["coefficient", "rejected", "message"]);
    rejected.push(vec![
        "constant(-1)".into(),
        bad.is_err().into(),
        bad.err().map(|e| e.to_string()).unwrap_or_default().into(),
    ]);
    let ok = rejected.rows[0][1] == true.into();
    report.check("sector_violation_rejected", ok, "negative real constant");
    report.tables = vec![table, rejected];
    Ok(report)
}
