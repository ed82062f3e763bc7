//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cplap::fields::StructureBounds;
use cplap::grid::{make_grid, CellField, GridDomain, Mask, NodeField};
use cplap::harness::inputs::CoefficientChoice;
use cplap::harness::{self, ExperimentConfig, ExperimentId, ExperimentReport, Table, Value};
use cplap::solver::{cell_lq_norm, manufactured_source_from_gradient, solve, ProblemSpec, SolveOptions};
use cplap::Complex64;

const ALGEBRA_BUDGET_S: f64 = 60.0;
const SOLVER_BUDGET_S: f64 = 300.0;
const SUITE_BUDGET_S: f64 = 600.0;
const MIN_RATE: f64 = 0.9;
const MANUFACTURED_RESIDUAL: f64 = 1e-6;
const EXACTNESS: f64 = 1e-12;
const LAYER_CAKE_TOL: f64 = 1e-12;
const CROSS_TOL: f64 = 1e-10;
const UNIQUENESS_FACTOR: f64 = 100.0;
const REFINEMENT_FACTOR: f64 = 2.0;
const VITALI_BOUND_2D: f64 = 225.0;
const SEED: u64 = 7;
const RESOLUTION: usize = 32;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn checks_pass(r: &ExperimentReport, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in names {
        match r.find_check(n) {
            Some(c) => {
                ok &= c.pass;
                parts.push(format!("{n}={} ({})", c.pass, c.detail));
            }
            None => {
                ok = false;
                parts.push(format!("{n} missing"));
            }
        }
    }
    (ok, parts.join("; "))
}

fn col<'a>(t: &'a Table, row: &'a [Value], name: &str) -> &'a Value {
    &row[t.column(name).unwrap_or_else(|| panic!("{} has no column {name}", t.name))]
}

fn num(t: &Table, row: &[Value], name: &str) -> f64 {
    col(t, row, name).as_f64().expect("numeric column")
}

fn text(t: &Table, row: &[Value], name: &str) -> String {
    match col(t, row, name) {
        Value::S(s) => s.clone(),
        v => v.csv_text(),
    }
}

fn flag(t: &Table, row: &[Value], name: &str) -> bool {
    matches!(col(t, row, name), Value::B(true))
}

fn report(reports: &[ExperimentReport], id: ExperimentId) -> &ExperimentReport {
    reports.iter().find(|r| r.experiment == id).expect("suite report")
}

fn unit_square(m: usize) -> GridDomain {
    make_grid(2, &[m, m], 1.0 / m as f64, Mask::Rectangle).unwrap()
}

/// `g = c·sin(πx)sin(πy)` on nodes and its exact gradient at cell centers.
fn manufactured(grid: &GridDomain, c: Complex64) -> (NodeField, CellField) {
    use std::f64::consts::PI;
    let mut g = NodeField::from_fn(grid, 1, |x| vec![c * (PI * x[0]).sin() * (PI * x[1]).sin()]);
    g.clear_non_free(grid);
    let dg = CellField::from_fn(grid, 1, |x| {
        vec![
            c * PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
            c * PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
        ]
    });
    (g, dg)
}

fn gradient_error(
    m: usize,
    p: f64,
    coefficient: &CoefficientChoice,
    c: Complex64,
) -> Result<(f64, f64), String> {
    let grid = unit_square(m);
    let bounds = StructureBounds {
        c0: 2.0,
        gamma0: 0.1,
        gamma1: 0.5,
        gamma2: 2.0,
    };
    let a = coefficient.build(&grid, bounds, 0).map_err(|e| e.to_string())?;
    let (g, dg) = manufactured(&grid, c);
    let f = if p == 2.0 {
        dg
    } else {
        manufactured_source_from_gradient(&dg, &a, p, 0.0).map_err(|e| e.to_string())?
    };
    let spec = ProblemSpec::new(grid.clone(), a, f, p, 0.0).map_err(|e| e.to_string())?;
    let r = solve(&spec, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let dgi = grid.discrete_gradient(&g).map_err(|e| e.to_string())?;
    let err = cell_lq_norm(&grid, &r.state.du.sub(&dgi), p);
    Ok((err, r.final_relative_residual))
}

fn criterion_solver() -> Verdict {
    let start = Instant::now();
    let one = CoefficientChoice::Constant {
        value: Complex64::new(1.0, 0.0),
    };
    let mut detail = Vec::new();
    let mut ok = true;
    let errs: Result<Vec<f64>, String> = [32, 64, 128]
        .iter()
        .map(|&m| gradient_error(m, 2.0, &one, Complex64::new(1.0, 0.5)).map(|e| e.0))
        .collect();
    match errs {
        Ok(e) => {
            let rates: Vec<f64> = e.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
            let good = rates.iter().all(|&r| r >= MIN_RATE);
            ok &= good;
            let fmt = |v: &[f64], f: fn(&f64) -> String| v.iter().map(f).collect::<Vec<_>>().join(", ");
            detail.push(format!(
                "p=2 errors [{}], rates [{}]",
                fmt(&e, |x| format!("{x:.3e}")),
                fmt(&rates, |x| format!("{x:.3}"))
            ));
        }
        Err(e) => {
            ok = false;
            detail.push(format!("p=2 failed: {e}"));
        }
    }
    let osc = CoefficientChoice::default_oscillatory();
    for p in [1.5, 3.0] {
        let runs: Result<Vec<(f64, f64)>, String> = [32, 64]
            .iter()
            .map(|&m| gradient_error(m, p, &osc, Complex64::new(0.8, 0.6)))
            .collect();
        match runs {
            Ok(v) => {
                let res_ok = v.iter().all(|x| x.1 <= MANUFACTURED_RESIDUAL);
                let dec = v[1].0 < v[0].0;
                ok &= res_ok && dec;
                detail.push(format!(
                    "p={p}: errors {:.3e} -> {:.3e}, residuals {:.1e}, {:.1e}",
                    v[0].0, v[1].0, v[0].1, v[1].1
                ));
            }
            Err(e) => {
                ok = false;
                detail.push(format!("p={p} failed: {e}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= SOLVER_BUDGET_S;
    detail.push(format!("{secs:.1}s"));
    verdict(ok, detail.join("; "))
}

fn criterion_algebra(r: &ExperimentReport, cfg: &ExperimentConfig) -> Verdict {
    let (ok, d) = checks_pass(r, &["band_bounds", "p2_exactness"]);
    let t = r.table("constants").unwrap();
    let mut grid_ok = t.rows.len() == 12 && cfg.algebra.fresh_samples >= 100_000;
    grid_ok &= t.rows.iter().all(|row| num(t, row, "estimation_samples") >= 1e6);
    let mut exact = true;
    for row in &t.rows {
        if num(t, row, "p") == 2.0 {
            exact &= (num(t, row, "c1") - 1.0).abs() <= EXACTNESS
                && (num(t, row, "c2") - 1.0).abs() <= EXACTNESS
                && num(t, row, "im_relative") <= EXACTNESS;
        }
    }
    let fast = r.runtime_seconds <= ALGEBRA_BUDGET_S;
    verdict(
        ok && grid_ok && exact && fast,
        format!("{d}; {} (p, mu) rows; {:.1}s", t.rows.len(), r.runtime_seconds),
    )
}

fn criterion_accretivity(r: &ExperimentReport) -> Verdict {
    let (ok, d) = checks_pass(r, &["accretivity", "value_sector"]);
    verdict(ok, d)
}

fn criterion_uniqueness(r: &ExperimentReport) -> Verdict {
    let (ok, d) = checks_pass(r, &["converged_and_unique"]);
    let t = r.table("uniqueness").unwrap();
    let probed: Vec<&Vec<Value>> = t
        .rows
        .iter()
        .filter(|row| num(t, row, "dimension") == 2.0)
        .collect();
    let within = probed.iter().all(|row| {
        let scale = num(t, row, "tol") * num(t, row, "du_norm").max(1.0);
        num(t, row, "distance") <= UNIQUENESS_FACTOR * scale
    });
    verdict(
        ok && within && probed.len() >= 6,
        format!("{} probed configurations; {d}", probed.len()),
    )
}

fn criterion_apriori(r: &ExperimentReport, cfg: &ExperimentConfig) -> Verdict {
    let (ok, d) = checks_pass(
        r,
        &["all_solves_converged", "apriori_bounded", "apriori_refinement_stable"],
    );
    let t = r.table("stability").unwrap();
    let spread_ok = t
        .rows
        .iter()
        .all(|row| num(t, row, "spread") <= REFINEMENT_FACTOR);
    verdict(
        ok && spread_ok && cfg.families.len() >= 3,
        format!("{} families; {d}", cfg.families.len()),
    )
}

fn criterion_maximal(r: &ExperimentReport) -> Verdict {
    let (ok, d) = checks_pass(
        r,
        &["weak11_bound", "truncation_split_exact", "layer_cake_identity"],
    );
    let w = r.table("weak11").unwrap();
    let mut counts: HashMap<(String, String), usize> = HashMap::new();
    for row in &w.rows {
        *counts
            .entry((text(w, row, "input"), text(w, row, "beta")))
            .or_default() += 1;
    }
    let sweep_ok = counts.len() == 4 && counts.values().all(|&c| c == 20);
    let lc = r.table("layer_cake").unwrap();
    let fields: std::collections::BTreeSet<String> =
        lc.rows.iter().map(|row| text(lc, row, "field")).collect();
    let cake_ok = fields.len() == 100
        && lc
            .rows
            .iter()
            .all(|row| num(lc, row, "rel_diff") <= LAYER_CAKE_TOL);
    verdict(
        ok && sweep_ok && cake_ok,
        format!("{} lambda series, {} layer-cake fields; {d}", counts.len(), fields.len()),
    )
}

fn criterion_vitali(r: &ExperimentReport) -> Verdict {
    let (ok, d) = checks_pass(r, &["vitali_conclusion"]);
    let t = r.table("vitali").unwrap();
    let mut worst = 0.0f64;
    let mut all = true;
    let mut count = 0;
    for row in &t.rows {
        if flag(t, row, "hypotheses_hold") {
            count += 1;
            let c = num(t, row, "measured_c");
            worst = worst.max(c);
            all &= c <= VITALI_BOUND_2D;
        }
    }
    verdict(
        ok && all && count > 0,
        format!("{count} qualifying pairs, worst C {worst:.4}; {d}"),
    )
}

fn criterion_good_lambda(r: &ExperimentReport, cfg: &ExperimentConfig) -> Verdict {
    let (ok, d) = checks_pass(r, &["witness_found", "set_inclusion", "vitali_on_level_sets"]);
    let gp = &cfg.good_lambda;
    let setup = gp.p == 2.0
        && gp.beta == 0.0
        && gp.eps == 0.1
        && cfg.resolution * gp.resolution_factor == 64;
    let t = r.table("pairs").unwrap();
    let inclusion = t.rows.iter().all(|row| flag(t, row, "inclusion"));
    verdict(ok && setup && inclusion, d)
}

fn criterion_cz(cz: &ExperimentReport, apriori: &ExperimentReport) -> Verdict {
    let (ok, d) = checks_pass(
        cz,
        &[
            "maximal_constant_bounded",
            "maximal_constant_refinement_stable",
            "gradient_constant_bounded",
            "gradient_constant_refinement_stable",
            "q_equals_p_matches_apriori",
        ],
    );
    let a = apriori.table("constants").unwrap();
    let mut want: HashMap<String, f64> = HashMap::new();
    for row in &a.rows {
        let key = ["p", "mu", "family", "resolution"].map(|c| text(a, row, c)).join("|");
        want.insert(key, num(a, row, "ratio"));
    }
    let x = cz.table("cross_check").unwrap();
    let mut worst = 0.0f64;
    let mut matched = 0;
    for row in &x.rows {
        let key = ["p", "mu", "family", "resolution"].map(|c| text(x, row, c)).join("|");
        if let Some(&v) = want.get(&key) {
            matched += 1;
            worst = worst.max((num(x, row, "grad_ratio_q_eq_p") - v).abs());
        }
    }
    let cross = matched == a.rows.len() && worst <= CROSS_TOL;
    verdict(
        ok && cross,
        format!("q=p against apriori: {matched} solves, max diff {worst:.3e}; {d}"),
    )
}

fn criterion_morrey(morrey: &ExperimentReport, cz: &ExperimentReport) -> Verdict {
    let (ok, d) = checks_pass(
        morrey,
        &[
            "morrey_constant_bounded",
            "q_equals_s_reproduces_lebesgue",
            "annulus_decay",
        ],
    );
    let c = cz.table("constants").unwrap();
    let mut cz_ratio: HashMap<String, u64> = HashMap::new();
    for row in &c.rows {
        if num(c, row, "q") == 4.0 && num(c, row, "beta") == 0.0 && text(c, row, "case") == "q=4,beta=0" {
            let key = ["p", "mu", "family", "resolution"].map(|k| text(c, row, k)).join("|");
            cz_ratio.insert(key, num(c, row, "ratio").to_bits());
        }
    }
    let m = morrey.table("constants").unwrap();
    let mut same = 0;
    let mut total = 0;
    for row in &m.rows {
        if num(m, row, "q") == 4.0 && num(m, row, "s") == 4.0 {
            total += 1;
            let key = ["p", "mu", "family", "resolution"].map(|k| text(m, row, k)).join("|");
            same += usize::from(cz_ratio.get(&key) == Some(&num(m, row, "ratio").to_bits()));
        }
    }
    let an = morrey.table("annulus").unwrap();
    let js: std::collections::BTreeSet<i64> = an
        .rows
        .iter()
        .map(|row| num(an, row, "j") as i64)
        .collect();
    let annuli = (1..=4).all(|j| js.contains(&j)) && an.rows.iter().all(|row| flag(an, row, "pass"));
    verdict(
        ok && total > 0 && same == total && annuli,
        format!("q=s=4 bitwise equal to CZ q=4 for {same}/{total}; {d}"),
    )
}

fn run_binary(out: &Path) -> Result<f64, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_cplap"))
        .args(["all", "--resolution", &RESOLUTION.to_string(), "--seed", &SEED.to_string()])
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!(
            "exit {:?}: {}",
            status.status.code(),
            String::from_utf8_lossy(&status.stdout)
        ));
    }
    Ok(start.elapsed().as_secs_f64())
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            name.ends_with(".csv").then_some(name)
        })
        .collect();
    v.sort();
    v
}

fn criterion_determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let (ta, tb) = match (run_binary(&a), run_binary(&b)) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return verdict(false, e),
    };
    let files = csv_files(&a);
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .collect();
    let ok = !files.is_empty()
        && files == csv_files(&b)
        && differing.is_empty()
        && ta.max(tb) <= SUITE_BUDGET_S;
    verdict(
        ok,
        format!(
            "{} CSV files, {} differ; runs {ta:.1}s and {tb:.1}s",
            files.len(),
            differing.len()
        ),
    )
}

fn main() {
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        seed: SEED,
        resolution: RESOLUTION,
        output: out.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let suite = harness::execute(&cfg).expect("suite runs");
    let reports = &suite.reports;
    let get = |id| report(reports, id);

    let results: Vec<(&str, Verdict)> = vec![
        ("1 algebra oracle", criterion_algebra(get(ExperimentId::VerifyAlgebra), &cfg)),
        ("2 accretivity and sector", criterion_accretivity(get(ExperimentId::VerifyAlgebra))),
        ("3 solver correctness", criterion_solver()),
        ("4 uniqueness", criterion_uniqueness(get(ExperimentId::ExistenceUniqueness))),
        ("5 a priori bound", criterion_apriori(get(ExperimentId::Apriori), &cfg)),
        ("6 maximal operator", criterion_maximal(get(ExperimentId::Maximal))),
        ("7 vitali density", criterion_vitali(get(ExperimentId::Maximal))),
        ("8 good lambda", criterion_good_lambda(get(ExperimentId::GoodLambda), &cfg)),
        ("9 cz sweep", criterion_cz(get(ExperimentId::CzSweep), get(ExperimentId::Apriori))),
        ("10 morrey sweep", criterion_morrey(get(ExperimentId::MorreySweep), get(ExperimentId::CzSweep))),
        ("11 determinism", criterion_determinism()),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!("{} criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
