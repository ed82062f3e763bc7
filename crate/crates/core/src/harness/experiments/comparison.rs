//! Local comparison maps: `w` on `B_4ξ` with the true coefficient and `v` on
//! `B_2ξ` with the coefficient frozen at the center.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{solver_options, SOURCE_STREAM};
use crate::algebra::norm_sqr;
use crate::fields::bmo_seminorm;
use crate::grid::{CellField, GridDomain};
use crate::harness::config::{ExperimentConfig, ExperimentId};
use crate::harness::inputs::{unit_grid, CoefficientChoice, Family};
use crate::harness::report::{ExperimentReport, Table};
use crate::harness::Result;
use crate::solver::{solve, solve_comparison_v, solve_comparison_w, ProblemSpec};
use crate::sum::pairwise_sum_by;
use crate::Complex64;

const CENTER_STREAM: u64 = 0xc3e7_0000;

fn mean_over(cells: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    pairwise_sum_by(cells.len(), |i| f(cells[i])) / cells.len() as f64
}

/// Bump supported in a ball of radius `3·width`.
fn far_source(grid: &GridDomain, ncomp: usize, center: &[f64], width: f64) -> CellField {
    CellField::from_fn(grid, ncomp, |x| {
        let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        let e = if d2 < 9.0 * width * width {
            (-d2 / (width * width)).exp()
        } else {
            0.0
        };
        vec![Complex64::new(e, 0.5 * e); ncomp * x.len()]
    })
}

struct Measurement {
    /// `sup_{Ω_ξ}|Dv| / (⨍_{Ω_2ξ}(|Dv|^p + μ^p))^{1/p}`.
    interior_ratio: f64,
    /// `⨍_{Ω_2ξ}|Du − Dv|^p`.
    error: f64,
    /// `⨍_{Ω_4ξ}|Du|^p`.
    energy: f64,
    /// `⨍_{Ω_4ξ}(|F|^p + μ^p)`.
    data: f64,
}

#[allow(clippy::too_many_arguments)]
fn measure(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    u: &crate::grid::DiscreteState,
    center: &[f64],
    xi: f64,
) -> std::result::Result<Measurement, String> {
    let grid = &spec.grid;
    let (p, mu) = (spec.p, spec.mu);
    let opts = solver_options(cfg);
    let w = solve_comparison_w(spec, center, 4.0 * xi, u, &opts).map_err(|e| e.to_string())?;
    let h = grid.h();
    let mut idx = [0usize; 3];
    for (a, x) in center.iter().enumerate() {
        idx[a] = ((x / h).floor() as usize).min(grid.shape()[a] - 1);
    }
    let a0 = spec.a.values[grid.cell_index(idx)];
    let v = solve_comparison_v(a0, grid, center, 2.0 * xi, &w.result.state, p, mu, &opts)
        .map_err(|e| e.to_string())?;
    let ball = |r: f64| -> std::result::Result<Vec<usize>, String> {
        Ok(grid
            .restrict_to_ball(center, r)
            .map_err(|e| e.to_string())?
            .active_cells()
            .to_vec())
    };
    let (b1, b2, b4) = (ball(xi)?, ball(2.0 * xi)?, ball(4.0 * xi)?);
    let dv = &v.result.state.du;
    let mp = mu.powf(p);
    let sup = b1
        .iter()
        .map(|&c| norm_sqr(dv.at(c)).sqrt())
        .fold(0.0, f64::max);
    let avg = mean_over(&b2, |c| norm_sqr(dv.at(c)).powf(0.5 * p) + mp);
    let error = mean_over(&b2, |c| {
        let d: Vec<Complex64> = u.du.at(c).iter().zip(dv.at(c)).map(|(a, b)| a - b).collect();
        norm_sqr(&d).powf(0.5 * p)
    });
    let energy = mean_over(&b4, |c| norm_sqr(u.du.at(c)).powf(0.5 * p));
    let data = mean_over(&b4, |c| norm_sqr(spec.f.at(c)).powf(0.5 * p) + mp);
    Ok(Measurement {
        interior_ratio: sup / avg.powf(1.0 / p),
        error,
        energy,
        data,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(ExperimentId::Comparison, cfg);
    report.convention(
        "balls",
        "Omega_r = active cells with centers strictly inside B_r(x0); means are cell averages",
    );
    report.convention(
        "frozen_coefficient",
        "a0 = a on the cell containing x0",
    );
    report.convention(
        "c_delta",
        "C_delta = max over centers of max(0, error - delta*energy)/data",
    );
    let cp = &cfg.comparison;
    let m = cfg.resolution * cp.resolution_factor;
    let grid = unit_grid(cfg.dimension, m, cfg.domain)?;
    let n = cfg.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ CENTER_STREAM);
    let lo = 4.0 * cp.xi + 0.1;
    let centers: Vec<Vec<f64>> = (0..cp.centers)
        .map(|_| (0..n).map(|_| rng.random_range(lo..1.0 - 4.0 * cp.xi)).collect())
        .collect();
    let smooth = Family::Smooth.build(&grid, cfg.components, cfg.seed ^ SOURCE_STREAM)?;
    let far = far_source(&grid, cfg.components, &cp.source_center, cp.source_width);

    let mut table = Table::new(
        "measurements",
        &[
            "p",
            "mu",
            "source",
            "contrast",
            "bmo_seminorm",
            "center",
            "converged",
            "interior_ratio",
            "error",
            "energy",
            "data",
            "relative_error",
        ],
    );
    let mut fits = Table::new(
        "fits",
        &[
            "p",
            "mu",
            "contrast",
            "bmo_seminorm",
            "interior_constant",
            "mean_relative_error",
            "delta",
            "c_delta",
        ],
    );
    let mut failures = Vec::new();
    let mut trivial_worst = 0.0f64;
    let mut interior_worst = 0.0f64;
    let mut monotone = true;
    let mut c_delta_finite = true;
    for e in &cp.exponents {
        let mut trend: Vec<(f64, f64)> = Vec::new();
        let sources: Vec<(&str, &CellField, Vec<f64>)> = vec![
            ("far_bump", &far, vec![0.0]),
            ("smooth", &smooth, cp.contrasts.clone()),
        ];
        for (source, f, contrasts) in sources {
            for k in contrasts {
                let a = CoefficientChoice::contrast_checkerboard(k, cp.blocks_per_axis)
                    .build(&grid, cfg.bounds, 0)?;
                let bmo = bmo_seminorm(&a, cp.bmo_r0, &grid)?.seminorm;
                let spec = ProblemSpec::new(grid.clone(), a, f.clone(), e.p, e.mu)?;
                let u = match solve(&spec, &solver_options(cfg)) {
                    Ok(r) => r.state,
                    Err(err) => {
                        failures.push(format!("p={} mu={} {source} contrast {k}: {err}", e.p, e.mu));
                        continue;
                    }
                };
                let mut rows = Vec::new();
                for (ci, center) in centers.iter().enumerate() {
                    match measure(cfg, &spec, &u, center, cp.xi) {
                        Ok(ms) => {
                            let rel = ms.error / ms.energy;
                            table.push(vec![
                                e.p.into(),
                                e.mu.into(),
                                source.into(),
                                k.into(),
                                bmo.into(),
                                ci.into(),
                                true.into(),
                                ms.interior_ratio.into(),
                                ms.error.into(),
                                ms.energy.into(),
                                ms.data.into(),
                                rel.into(),
                            ]);
                            rows.push(ms);
                        }
                        Err(err) => {
                            failures.push(format!("p={} mu={} center {ci}: {err}", e.p, e.mu));
                            table.push(vec![
                                e.p.into(),
                                e.mu.into(),
                                source.into(),
                                k.into(),
                                bmo.into(),
                                ci.into(),
                                false.into(),
                                f64::NAN.into(),
                                f64::NAN.into(),
                                f64::NAN.into(),
                                f64::NAN.into(),
                                f64::NAN.into(),
                            ]);
                        }
                    }
                }
                if rows.is_empty() {
                    continue;
                }
                let interior = rows.iter().map(|r| r.interior_ratio).fold(0.0, f64::max);
                let mean_rel = rows.iter().map(|r| r.error / r.energy).sum::<f64>() / rows.len() as f64;
                if source == "far_bump" {
                    trivial_worst = trivial_worst.max(
                        rows.iter().map(|r| r.error / r.energy).fold(0.0, f64::max),
                    );
                    continue;
                }
                interior_worst = interior_worst.max(interior);
                trend.push((bmo, mean_rel));
                for &delta in &cp.deltas {
                    let c = rows
                        .iter()
                        .map(|r| (r.error - delta * r.energy).max(0.0) / r.data)
                        .fold(0.0, f64::max);
                    c_delta_finite &= c.is_finite();
                    report.constants.insert(
                        format!("C_delta[p={},mu={},contrast={k},delta={delta}]", e.p, e.mu),
                        c,
                    );
                    fits.push(vec![
                        e.p.into(),
                        e.mu.into(),
                        k.into(),
                        bmo.into(),
                        interior.into(),
                        mean_rel.into(),
                        delta.into(),
                        c.into(),
                    ]);
                }
            }
        }
        trend.sort_by(|a, b| a.0.total_cmp(&b.0));
        monotone &= trend.windows(2).all(|w| w[1].1 >= w[0].1);
    }
    report.check(
        "all_solves_converged",
        failures.is_empty(),
        if failures.is_empty() {
            "u, w and v for every center".to_string()
        } else {
            failures.join("; ")
        },
    );
    report.check(
        "constant_coefficient_local_identity",
        trivial_worst <= cp.constant_tol,
        format!("worst relative comparison error {trivial_worst:.3e} with F = 0 near x0"),
    );
    report.check(
        "interior_gradient_bounded",
        interior_worst.is_finite() && interior_worst <= cfg.slack.boundedness_cap,
        format!("worst interior ratio {interior_worst:.4}"),
    );
    report.check("c_delta_finite", c_delta_finite, "every delta and BMO level");
    report.check(
        "error_grows_with_bmo",
        monotone,
        "mean relative comparison error nondecreasing in the measured seminorm",
    );
    report
        .constants
        .insert("interior_constant".into(), interior_worst);
    report.tables = vec![table, fits];
    Ok(report)
}
