//! One module per experiment, plus the solve cache shared by the sweeps.

pub mod algebra;
pub mod bmo;
pub mod comparison;
pub mod existence;
pub mod good_lambda;
pub mod maximal;
pub mod solve;
pub mod sweeps;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::inputs::{unit_grid, CoefficientChoice, Family};
use super::{HarnessError, Result};
use crate::fields::CoefficientField;
use crate::grid::{CellField, GridDomain};
use crate::solver::{solve, ProblemSpec, SolveOptions, SolveResult};

/// Seed offsets, so the coefficient, source and solver streams differ.
pub(crate) const SOURCE_STREAM: u64 = 0x5eed_0001;
pub(crate) const COEFFICIENT_STREAM: u64 = 0x5eed_0002;

/// A sweep problem: one coefficient, source family, exponent pair and grid.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Request {
    pub m: usize,
    pub p: f64,
    pub mu: f64,
    pub family: Family,
    pub coefficient: CoefficientChoice,
}

pub(crate) struct Solved {
    pub request: Request,
    pub grid: GridDomain,
    pub a: CoefficientField,
    pub f: CellField,
    /// Solver failures are kept as their message.
    pub outcome: std::result::Result<SolveResult, String>,
}

impl Solved {
    pub fn result(&self) -> Option<&SolveResult> {
        self.outcome.as_ref().ok()
    }
}

pub(crate) fn solver_options(cfg: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        seed: cfg.seed,
        ..cfg.solver.clone()
    }
}

fn compute(cfg: &ExperimentConfig, r: &Request) -> Result<Solved> {
    let grid = unit_grid(cfg.dimension, r.m, cfg.domain)?;
    let a = r
        .coefficient
        .build(&grid, cfg.bounds, cfg.seed ^ COEFFICIENT_STREAM)?;
    let f = r
        .family
        .build(&grid, cfg.components, cfg.seed ^ SOURCE_STREAM)?;
    let spec = ProblemSpec::new(grid.clone(), a.clone(), f.clone(), r.p, r.mu)?;
    let outcome = solve(&spec, &solver_options(cfg)).map_err(|e| e.to_string());
    Ok(Solved {
        request: r.clone(),
        grid,
        a,
        f,
        outcome,
    })
}

type Cell = Arc<OnceLock<std::result::Result<Arc<Solved>, String>>>;

/// Solves shared between experiments of one run. Results depend only on the
/// config and the request, never on scheduling.
#[derive(Default)]
pub struct Session {
    cells: Mutex<HashMap<String, Cell>>,
}

impl Session {
    fn key(cfg: &ExperimentConfig, r: &Request) -> String {
        format!(
            "{:?}|{}|{}|{:?}|{:?}|{}|{:?}|{:?}|{}",
            r,
            cfg.dimension,
            cfg.components,
            cfg.domain,
            cfg.bounds,
            cfg.seed,
            cfg.solver,
            cfg.refinement_levels,
            cfg.resolution
        )
    }

    /// Solves every request, reusing earlier results. The calling thread
    /// must not be a rayon worker.
    pub(crate) fn solve_all(
        &self,
        cfg: &ExperimentConfig,
        requests: &[Request],
    ) -> Result<Vec<Arc<Solved>>> {
        let mut mine = Vec::new();
        let cells: Vec<Cell> = {
            let mut map = self.cells.lock().unwrap();
            requests
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    map.entry(Self::key(cfg, r))
                        .or_insert_with(|| {
                            mine.push(i);
                            Arc::new(OnceLock::new())
                        })
                        .clone()
                })
                .collect()
        };
        mine.par_iter().for_each(|&i| {
            let v = compute(cfg, &requests[i])
                .map(Arc::new)
                .map_err(|e| e.to_string());
            let _ = cells[i].set(v);
        });
        cells
            .iter()
            .map(|c| c.wait().clone().map_err(HarnessError::Report))
            .collect()
    }
}

/// `max(a/b, b/a)`.
pub(crate) fn spread(a: f64, b: f64) -> f64 {
    (a / b).max(b / a)
}

pub(crate) fn fmt_pair(p: f64, mu: f64) -> String {
    format!("p={p},mu={mu}")
}
