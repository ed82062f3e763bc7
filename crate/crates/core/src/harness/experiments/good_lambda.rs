//! Level-set sweep over `(σ, κ)` for the good-λ inequality, with the Vitali
//! lemma applied to every generated pair.

use rayon::prelude::*;

use super::{solver_options, COEFFICIENT_STREAM, SOURCE_STREAM};
use crate::analysis::{dyadic_radii, maximal, vitali_density_check, ScalarField};
use crate::harness::config::{ExperimentConfig, ExperimentId};
use crate::harness::inputs::unit_grid;
use crate::harness::report::{ExperimentReport, Table, Value};
use crate::harness::Result;
use crate::solver::{solve, ProblemSpec};

fn count(set: &[bool]) -> usize {
    set.iter().filter(|&&b| b).count()
}

/// `count` geometric points from `lo` to `hi`, both included.
fn lambdas(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    (0..count)
        .map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64))
        .collect()
}

struct PairRow {
    sigma: f64,
    kappa: f64,
    lambda: f64,
    v: usize,
    level: usize,
    w: usize,
    ratio: f64,
    included: bool,
    hypotheses: bool,
    conclusion: bool,
    measured_c: f64,
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(ExperimentId::GoodLambda, cfg);
    let gp = &cfg.good_lambda;
    report.convention(
        "sets",
        "V = {M(|Du|^p) > lambda, M(|F|^p) <= kappa*lambda} and W = {M(|Du|^p) > sigma*lambda}, taken over active cells",
    );
    report.convention(
        "lambda",
        "lambda_count geometric levels from lambda_floor*max M(|Du|^p) to the maximum, restricted to lambda >= mu^p diam^beta / kappa",
    );
    let grid = unit_grid(cfg.dimension, cfg.resolution * gp.resolution_factor, cfg.domain)?;
    let a = gp
        .coefficient
        .build(&grid, cfg.bounds, cfg.seed ^ COEFFICIENT_STREAM)?;
    let f = gp
        .family
        .build(&grid, cfg.components, cfg.seed ^ SOURCE_STREAM)?;
    let spec = ProblemSpec::new(grid.clone(), a, f, gp.p, gp.mu)?;
    let result = match solve(&spec, &solver_options(cfg)) {
        Ok(r) => r,
        Err(e) => {
            report.check("solve_converged", false, e.to_string());
            return Ok(report);
        }
    };
    report.check(
        "solve_converged",
        true,
        format!("relative residual {:.3e}", result.final_relative_residual),
    );
    let radii = dyadic_radii(&grid);
    let mu_field = maximal(
        &grid,
        &ScalarField::norm_power(&grid, &result.state.du, gp.p),
        gp.beta,
        &radii,
    )?;
    let mf_field = maximal(
        &grid,
        &ScalarField::norm_power(&grid, &spec.f, gp.p),
        gp.beta,
        &radii,
    )?;
    let (mu_v, mf_v) = (mu_field.values(), mf_field.values());
    let top = grid
        .active_cells()
        .iter()
        .map(|&c| mu_v[c])
        .fold(0.0, f64::max);
    let levels = lambdas(gp.lambda_floor * top, top, gp.lambda_count);
    let threshold = |kappa: f64| gp.mu.powf(gp.p) * grid.diam().powf(gp.beta) / kappa;

    let mut jobs = Vec::new();
    for &i in &gp.sigma_exponents {
        for &j in &gp.kappa_exponents {
            for &lambda in &levels {
                let (sigma, kappa) = (2f64.powi(-i), 2f64.powi(-j));
                if lambda >= threshold(kappa) {
                    jobs.push((sigma, kappa, lambda));
                }
            }
        }
    }
    let cells = grid.cell_count();
    let rows: Vec<Result<PairRow>> = jobs
        .par_iter()
        .map(|&(sigma, kappa, lambda)| {
            let set = |pred: &dyn Fn(usize) -> bool| -> Vec<bool> {
                (0..cells).map(|c| grid.is_active(c) && pred(c)).collect()
            };
            let level = set(&|c| mu_v[c] > lambda);
            let v = set(&|c| mu_v[c] > lambda && mf_v[c] <= kappa * lambda);
            let w = set(&|c| mu_v[c] > sigma * lambda);
            let included =
                sigma > 1.0 || (0..cells).all(|c| (!v[c] || level[c]) && (!level[c] || w[c]));
            let (nv, nw) = (count(&v), count(&w));
            let ratio = if nv == 0 { 0.0 } else { nv as f64 / nw as f64 };
            let vit = vitali_density_check(&grid, &v, &w, gp.vitali_r0, gp.eps)?;
            Ok(PairRow {
                sigma,
                kappa,
                lambda,
                v: nv,
                level: count(&level),
                w: nw,
                ratio,
                included,
                hypotheses: vit.hypotheses_hold,
                conclusion: vit.conclusion_holds,
                measured_c: vit.measured_c,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let mut table = Table::new(
        "pairs",
        &[
            "sigma",
            "kappa",
            "lambda",
            "v_cells",
            "level_cells",
            "w_cells",
            "ratio",
            "inclusion",
            "vitali_hypotheses",
            "vitali_conclusion",
            "vitali_measured_c",
        ],
    );
    for r in &rows {
        table.push(vec![
            r.sigma.into(),
            r.kappa.into(),
            r.lambda.into(),
            r.v.into(),
            r.level.into(),
            r.w.into(),
            r.ratio.into(),
            r.included.into(),
            r.hypotheses.into(),
            r.conclusion.into(),
            r.measured_c.into(),
        ]);
    }

    let bound = gp.c * gp.eps;
    let mut witnesses = Table::new(
        "witnesses",
        &["sigma", "kappa", "levels", "max_ratio", "nonempty_v_levels", "witness"],
    );
    let mut found = Vec::new();
    let mut nontrivial = 0usize;
    for &i in &gp.sigma_exponents {
        for &j in &gp.kappa_exponents {
            let (sigma, kappa) = (2f64.powi(-i), 2f64.powi(-j));
            let sel: Vec<&PairRow> = rows
                .iter()
                .filter(|r| r.sigma == sigma && r.kappa == kappa)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let worst = sel.iter().map(|r| r.ratio).fold(0.0, f64::max);
            let nonempty = sel.iter().filter(|r| r.v > 0).count();
            let ok = worst <= bound;
            if ok {
                found.push(format!("(2^-{i}, 2^-{j})"));
                nontrivial += usize::from(nonempty > 0);
            }
            let row: Vec<Value> = vec![
                sigma.into(),
                kappa.into(),
                sel.len().into(),
                worst.into(),
                nonempty.into(),
                ok.into(),
            ];
            witnesses.push(row);
        }
    }
    report
        .constants
        .insert("witness_pairs".into(), found.len() as f64);
    report
        .constants
        .insert("witness_pairs_nonempty_v".into(), nontrivial as f64);
    report.check(
        "witness_found",
        !found.is_empty(),
        format!(
            "|V| <= {bound} |W| at every level for {} pairs ({nontrivial} with nonempty V), first {}",
            found.len(),
            found.first().map(String::as_str).unwrap_or("none")
        ),
    );
    report.check(
        "set_inclusion",
        rows.iter().all(|r| r.included),
        "V within {M > lambda} within W for sigma <= 1, cell by cell",
    );
    let qualifying = rows.iter().filter(|r| r.hypotheses).count();
    report.check(
        "vitali_on_level_sets",
        rows.iter().all(|r| !r.hypotheses || r.conclusion),
        format!("{qualifying} of {} pairs satisfy the hypotheses", rows.len()),
    );
    report.tables = vec![table, witnesses];
    Ok(report)
}
