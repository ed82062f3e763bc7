//! Experiment driver: configs in, JSON reports and CSV tables out.
//!
//! Every experiment fits and tracks constants; pass criteria are
//! boundedness, refinement stability and exact identities.

pub mod config;
mod experiments;
pub mod inputs;
pub mod report;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentId, SCHEMA_VERSION};
pub use experiments::Session;
pub use report::{Check, ExperimentReport, Table, Value};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Field(#[from] crate::fields::FieldError),
    #[error(transparent)]
    Solver(#[from] crate::solver::SolverError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error(transparent)]
    Algebra(#[from] crate::algebra::AlgebraError),
    #[error(transparent)]
    Snapshot(#[from] crate::grid::snapshot::SnapshotError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Runs one experiment (not `all`) and stamps its runtime.
pub fn run_experiment(
    id: ExperimentId,
    cfg: &ExperimentConfig,
    session: &Session,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = match id {
        ExperimentId::Solve => experiments::solve::run(cfg)?,
        ExperimentId::VerifyAlgebra => experiments::algebra::run(cfg)?,
        ExperimentId::Bmo => experiments::bmo::run(cfg)?,
        ExperimentId::Maximal => experiments::maximal::run(cfg)?,
        ExperimentId::ExistenceUniqueness => experiments::existence::run(cfg)?,
        ExperimentId::Apriori => experiments::sweeps::apriori(cfg, session)?,
        ExperimentId::Comparison => experiments::comparison::run(cfg)?,
        ExperimentId::GoodLambda => experiments::good_lambda::run(cfg)?,
        ExperimentId::CzSweep => experiments::sweeps::cz(cfg, session)?,
        ExperimentId::MorreySweep => experiments::sweeps::morrey(cfg, session)?,
        ExperimentId::All => {
            return Err(HarnessError::Config(
                "`all` is a suite, not a single experiment".into(),
            ))
        }
    };
    report.finish();
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Runs the suite experiments as independent jobs on a pool of OS threads;
/// each job parallelizes internally. Reports come back in suite order.
pub fn run_suite(cfg: &ExperimentConfig, session: &Session) -> Result<Vec<ExperimentReport>> {
    let jobs = ExperimentId::SUITE;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ExperimentReport>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= jobs.len() {
                    break;
                }
                let r = run_experiment(jobs[k], cfg, session);
                *slots[k].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every job ran"))
        .collect()
}

#[derive(Debug)]
pub struct Outcome {
    pub reports: Vec<ExperimentReport>,
    pub written: Vec<PathBuf>,
    pub pass: bool,
}

/// Runs `cfg.experiment` and writes every report under `cfg.output`.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let session = Session::default();
    let reports = match cfg.experiment {
        ExperimentId::All => run_suite(cfg, &session)?,
        id => vec![run_experiment(id, cfg, &session)?],
    };
    let mut written = Vec::new();
    for r in &reports {
        written.extend(r.write(&cfg.output)?);
    }
    let pass = reports.iter().all(|r| r.pass);
    if cfg.experiment == ExperimentId::All {
        let summary: Vec<serde_json::Value> = reports
            .iter()
            .map(|r| {
                serde_json::json!({
                    "experiment": r.experiment,
                    "pass": r.pass,
                    "runtime_seconds": r.runtime_seconds,
                    "failed_checks": r.checks.iter().filter(|c| !c.pass).map(|c| &c.name).collect::<Vec<_>>(),
                })
            })
            .collect();
        let path = cfg.output.join("all.json");
        std::fs::write(
            &path,
            serde_json::to_string_pretty(&serde_json::json!({
                "pass": pass,
                "experiments": summary,
            }))?,
        )?;
        written.push(path);
    }
    Ok(Outcome {
        reports,
        written,
        pass,
    })
}
