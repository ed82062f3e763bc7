//! A single solve with telemetry and field snapshots.

use super::{solver_options, COEFFICIENT_STREAM, SOURCE_STREAM};
use crate::grid::snapshot::{Location, Role, Snapshot};
use crate::harness::config::{ExperimentConfig, ExperimentId};
use crate::harness::inputs::unit_grid;
use crate::harness::report::{ExperimentReport, Table};
use crate::harness::Result;
use crate::solver::{cell_lq_norm, solve, ProblemSpec, SolveOptions};

pub const TELEMETRY_FILE: &str = "solve_telemetry.jsonl";

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(ExperimentId::Solve, cfg);
    let sp = &cfg.solve;
    let grid = unit_grid(cfg.dimension, cfg.resolution, cfg.domain)?;
    let a = cfg
        .coefficient
        .build(&grid, cfg.bounds, cfg.seed ^ COEFFICIENT_STREAM)?;
    let f = sp
        .family
        .build(&grid, cfg.components, cfg.seed ^ SOURCE_STREAM)?;
    std::fs::create_dir_all(&cfg.output)?;
    let log = cfg.output.join(TELEMETRY_FILE);
    if log.exists() {
        std::fs::remove_file(&log)?;
    }
    let opts = SolveOptions {
        telemetry: Some(log),
        ..solver_options(cfg)
    };
    let spec = ProblemSpec::new(grid.clone(), a, f, sp.p, sp.mu)?;
    let outcome = solve(&spec, &opts);

    let mut history = Table::new("residuals", &["iteration", "relative_residual"]);
    match &outcome {
        Ok(r) => {
            for (k, res) in r.residual_history.iter().enumerate() {
                history.push(vec![k.into(), (res / r.scale).into()]);
            }
            report.constants.insert("iterations".into(), r.iterations as f64);
            report
                .constants
                .insert("final_relative_residual".into(), r.final_relative_residual);
            report
                .constants
                .insert("du_norm".into(), cell_lq_norm(&grid, &r.state.du, sp.p));
            report.check(
                "converged",
                true,
                format!(
                    "{} iterations, relative residual {:.3e} <= {:.1e}",
                    r.iterations, r.final_relative_residual, r.tol
                ),
            );
        }
        Err(e) => report.check("converged", false, e.to_string()),
    }
    if sp.snapshots {
        let params = serde_json::json!({ "p": sp.p, "mu": sp.mu, "family": sp.family.label() });
        let mut snaps = vec![(
            "coefficient",
            spec.a.to_snapshot(&grid)?,
        )];
        snaps.push((
            "source",
            Snapshot::for_grid(
                &grid,
                Role::Source,
                Location::Cell,
                spec.f.rows * spec.f.cols,
                &sp.family.label(),
                params.clone(),
                spec.f.values.clone(),
            )?,
        ));
        if let Ok(r) = &outcome {
            snaps.push((
                "state",
                Snapshot::for_grid(
                    &grid,
                    Role::State,
                    Location::Node,
                    r.state.u.ncomp,
                    "solution",
                    params,
                    r.state.u.values.clone(),
                )?,
            ));
        }
        for (name, s) in snaps {
            s.write(&cfg.output.join(format!("solve_{name}.snap")))?;
        }
    }
    report.tables = vec![history];
    Ok(report)
}
