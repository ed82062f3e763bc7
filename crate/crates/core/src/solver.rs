//! Nonlinear Dirichlet solver for `−div(a V(Du)) = −div(|F|^{p−2}F)`.
//!
//! The discrete weak form is the cell sum
//! `Σ_c hⁿ [a·⟨V(Du), Dφ⟩ − ⟨G, Dφ⟩]` with `G = |F|^{p−2}F`, and the residual
//! is its nodal dual vector on the interior nodes.
//!
//! Each iteration solves a frozen-weight Laplacian
//! `Dᵀ(|a|·(μ_k² + |Du|²)^{(p−2)/2} D) d = −r` and then picks a complex step
//! `s` for `u + s·d` from secant probes of the residual along `d` and `i·d`,
//! minimizing the linearized residual in the `H⁻¹` norm. Steps that increase
//! the residual are halved. `μ_k = max(μ, μ₀·2^{−k})` enters only the frozen
//! weights; the residual always uses the target `μ`.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{check_exponents, cinner_slices, flux_factor, norm_sqr, AlgebraError};
use crate::fields::{verify_structure, CoefficientField, FieldError};
use crate::grid::{CellField, DiscreteState, GridDomain, GridError, NodeClass, NodeField};
use crate::linalg::{BandCholesky, LinalgError, SymBand};
use crate::sum::pairwise_sum_by;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidInput(String),
    #[error("no convergence after {iterations} iterations: {reason}")]
    Convergence {
        iterations: usize,
        residual_history: Vec<f64>,
        reason: String,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("telemetry: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub grid: GridDomain,
    pub a: CoefficientField,
    pub f: CellField,
    pub p: f64,
    pub mu: f64,
}

impl ProblemSpec {
    pub fn new(
        grid: GridDomain,
        a: CoefficientField,
        f: CellField,
        p: f64,
        mu: f64,
    ) -> Result<Self> {
        check_exponents(p, mu)?;
        if a.values.len() != grid.cell_count() {
            return Err(SolverError::InvalidInput(
                "coefficient size does not match the grid".into(),
            ));
        }
        if f.cols != grid.n()
            || f.values.len() != grid.cell_count() * f.rows * f.cols
            || f.rows == 0
        {
            return Err(SolverError::InvalidInput(
                "source size does not match the grid".into(),
            ));
        }
        if f.values
            .iter()
            .any(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(SolverError::InvalidInput(
                "source has non-finite entries".into(),
            ));
        }
        let s = verify_structure(&a);
        if !s.ok() {
            return Err(SolverError::InvalidInput(format!(
                "coefficient fails its structure bounds at cell {}",
                s.worst_cell
            )));
        }
        Ok(ProblemSpec { grid, a, f, p, mu })
    }

    pub fn ncomp(&self) -> usize {
        self.f.rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Zero,
    /// Interior values drawn uniformly from `[−amplitude, amplitude]` in both parts.
    Random {
        amplitude: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative dual-norm tolerance; `None` selects [`default_tolerance`].
    pub tol_residual: Option<f64>,
    /// Step halvings tried before an iteration is declared failed.
    pub max_halvings: usize,
    pub seed: u64,
    pub init: Init,
    /// Start of the `μ_k` continuation in the frozen weights.
    pub mu0: f64,
    /// JSON-lines log, one record per iteration.
    pub telemetry: Option<PathBuf>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 500,
            tol_residual: None,
            max_halvings: 40,
            seed: 0,
            init: Init::Zero,
            mu0: 1.0,
            telemetry: None,
        }
    }
}

pub fn default_tolerance(p: f64) -> f64 {
    if p == 2.0 {
        1e-8
    } else {
        1e-6
    }
}

impl SolveOptions {
    pub fn tolerance(&self, p: f64) -> f64 {
        self.tol_residual.unwrap_or_else(|| default_tolerance(p))
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub state: DiscreteState,
    pub iterations: usize,
    /// Dual norm of the residual, one entry per accepted iterate.
    pub residual_history: Vec<f64>,
    /// Normalization of the stopping rule.
    pub scale: f64,
    pub tol: f64,
    pub final_relative_residual: f64,
    /// `‖Du‖_p / (‖F‖_p + μ|Ω|^{1/p})`.
    pub energy_testing_bound: f64,
}

/// `(∫_Ω |X|^q)^{1/q}` for a cell field of matrices.
pub fn cell_lq_norm(grid: &GridDomain, x: &CellField, q: f64) -> f64 {
    let ac = grid.active_cells();
    let s = pairwise_sum_by(ac.len(), |i| norm_sqr(x.at(ac[i])).powf(0.5 * q));
    (grid.cell_volume() * s).powf(1.0 / q)
}

/// `G = |F|^{p−2}F` cell by cell.
pub fn source_flux(f: &CellField, p: f64) -> CellField {
    let mut g = f.clone();
    let block = g.block();
    g.values.par_chunks_mut(block).for_each(|b| {
        let s = flux_factor(norm_sqr(b), p, 0.0);
        b.iter_mut().for_each(|z| *z *= s);
    });
    g
}

struct Engine<'a> {
    grid: &'a GridDomain,
    coeff: &'a [Complex64],
    g: &'a [Complex64],
    ncomp: usize,
    p: f64,
    mu: f64,
    free_index: Vec<usize>,
    nfree: usize,
    bw: usize,
    k0: BandCholesky,
}

const NOT_FREE: usize = usize::MAX;
const WEIGHT_FLOOR: f64 = 1e-12;
const MAX_EXPANSIONS: usize = 60;

impl<'a> Engine<'a> {
    fn new(
        grid: &'a GridDomain,
        coeff: &'a [Complex64],
        g: &'a [Complex64],
        ncomp: usize,
        p: f64,
        mu: f64,
    ) -> Result<Self> {
        let mut free_index = vec![NOT_FREE; grid.node_count()];
        for (i, &j) in grid.free_nodes().iter().enumerate() {
            free_index[j] = i;
        }
        let mut bw = 0;
        let stride = grid.node_stride();
        for &c in grid.active_cells() {
            let b = grid.cell_base_node(c);
            for &s in stride.iter().take(grid.n()) {
                let (fi, fj) = (free_index[b], free_index[b + s]);
                if fi != NOT_FREE && fj != NOT_FREE {
                    bw = bw.max(fi.abs_diff(fj));
                }
            }
        }
        let nfree = grid.free_nodes().len();
        let k0 = assemble(grid, &free_index, nfree, bw, &vec![1.0; grid.cell_count()])?;
        Ok(Engine {
            grid,
            coeff,
            g,
            ncomp,
            p,
            mu,
            free_index,
            nfree,
            bw,
            k0,
        })
    }

    fn assemble(&self, weights: &[f64]) -> Result<BandCholesky> {
        assemble(self.grid, &self.free_index, self.nfree, self.bw, weights)
    }

    fn gradient(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut du =
            vec![Complex64::new(0.0, 0.0); self.grid.cell_count() * self.ncomp * self.grid.n()];
        self.grid.gradient_into(u, self.ncomp, &mut du);
        du
    }

    /// Residual on the free nodes, with the gradient it was computed from.
    fn residual(&self, u: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let du = self.gradient(u);
        let block = self.ncomp * self.grid.n();
        let mut flux = vec![Complex64::new(0.0, 0.0); du.len()];
        flux.par_chunks_mut(block).enumerate().for_each(|(c, fl)| {
            if !self.grid.is_active(c) {
                return;
            }
            let d = &du[c * block..(c + 1) * block];
            let s = self.coeff[c] * flux_factor(norm_sqr(d), self.p, self.mu);
            for k in 0..block {
                fl[k] = s * d[k] - self.g[c * block + k];
            }
        });
        let mut t = vec![Complex64::new(0.0, 0.0); self.grid.node_count() * self.ncomp];
        self.grid.gradient_transpose_into(&flux, self.ncomp, &mut t);
        let vol = self.grid.cell_volume();
        let m = self.ncomp;
        let mut r = vec![Complex64::new(0.0, 0.0); self.nfree * m];
        r.par_chunks_mut(m).enumerate().for_each(|(i, ri)| {
            let j = self.grid.free_nodes()[i];
            for k in 0..m {
                ri[k] = t[j * m + k] * vol;
            }
        });
        (r, du)
    }

    fn pack(&self, x: &[Complex64]) -> Vec<f64> {
        x.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    fn unpack(&self, x: &[f64]) -> Vec<Complex64> {
        x.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect()
    }

    fn k0_inverse(&self, x: &[Complex64]) -> Vec<f64> {
        let mut b = self.pack(x);
        self.k0.solve_in_place(&mut b, 2 * self.ncomp);
        b
    }

    fn dual_inner(&self, x: &[Complex64], k0inv_y: &[f64]) -> f64 {
        let px = self.pack(x);
        pairwise_sum_by(px.len(), |i| px[i] * k0inv_y[i])
    }

    fn dual_norm(&self, r: &[Complex64]) -> f64 {
        self.dual_inner(r, &self.k0_inverse(r)).max(0.0).sqrt()
    }

    fn frozen_weights(&self, du: &[Complex64], mu_k: f64) -> Vec<f64> {
        let block = self.ncomp * self.grid.n();
        let mut w: Vec<f64> = (0..self.grid.cell_count())
            .into_par_iter()
            .map(|c| {
                if !self.grid.is_active(c) {
                    return 0.0;
                }
                self.coeff[c].norm()
                    * flux_factor(norm_sqr(&du[c * block..(c + 1) * block]), self.p, mu_k)
            })
            .collect();
        let wmax = w.iter().cloned().fold(0.0, f64::max);
        let floor = if wmax > 0.0 { WEIGHT_FLOOR * wmax } else { 1.0 };
        for (c, v) in w.iter_mut().enumerate() {
            if self.grid.is_active(c) {
                *v = v.max(floor);
            }
        }
        w
    }

    fn axpy_free(&self, u: &[Complex64], s: Complex64, d: &[Complex64]) -> Vec<Complex64> {
        let mut out = u.to_vec();
        let m = self.ncomp;
        for (i, &j) in self.grid.free_nodes().iter().enumerate() {
            for k in 0..m {
                out[j * m + k] += s * d[i * m + k];
            }
        }
        out
    }

    fn run(
        &self,
        mut u: Vec<Complex64>,
        opts: &SolveOptions,
        scale: f64,
        tol: f64,
    ) -> Result<(Vec<Complex64>, usize, Vec<f64>)> {
        let mut log = match &opts.telemetry {
            Some(path) => Some(OpenOptions::new().create(true).append(true).open(path)?),
            None => None,
        };
        let (mut r, mut du) = self.residual(&u);
        let mut rn = self.dual_norm(&r);
        let mut history = vec![rn];
        let target = tol * scale;
        if rn == 0.0 || rn <= target {
            return Ok((u, 0, history));
        }
        for k in 0..opts.max_iters {
            let mu_k = self.mu.max(opts.mu0 * 0.5f64.powi(k as i32));
            let chol = self.assemble(&self.frozen_weights(&du, mu_k))?;
            let mut d = self.pack(&r);
            chol.solve_in_place(&mut d, 2 * self.ncomp);
            let d: Vec<Complex64> = self.unpack(&d).into_iter().map(|z| -z).collect();

            let (r1, _) = self.residual(&self.axpy_free(&u, Complex64::new(1.0, 0.0), &d));
            let (r2, _) = self.residual(&self.axpy_free(&u, Complex64::new(0.0, 1.0), &d));
            let a: Vec<Complex64> = r1.iter().zip(&r).map(|(x, y)| x - y).collect();
            let b: Vec<Complex64> = r2.iter().zip(&r).map(|(x, y)| x - y).collect();
            let (ka, kb) = (self.k0_inverse(&a), self.k0_inverse(&b));
            let (aa, ab, bb) = (
                self.dual_inner(&a, &ka),
                self.dual_inner(&b, &ka),
                self.dual_inner(&b, &kb),
            );
            let (ar, br) = (self.dual_inner(&r, &ka), self.dual_inner(&r, &kb));
            let det = aa * bb - ab * ab;
            let mut step = if det > 1e-14 * aa * bb && det.is_finite() {
                Complex64::new((-ar * bb + br * ab) / det, (-br * aa + ar * ab) / det)
            } else if aa > 0.0 {
                Complex64::new(-ar / aa, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            };
            if !(step.re.is_finite() && step.im.is_finite()) {
                step = Complex64::new(1.0, 0.0);
            }

            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let trial = self.axpy_free(&u, step, &d);
                let (tr, tdu) = self.residual(&trial);
                let tn = self.dual_norm(&tr);
                if tn <= rn {
                    accepted = Some((trial, tr, tdu, tn));
                    break;
                }
                step *= 0.5;
            }
            // Short secant steps underestimate strongly nonlinear responses.
            if let Some(best) = accepted.as_mut() {
                if step.norm() < 0.5 {
                    for _ in 0..MAX_EXPANSIONS {
                        let trial = self.axpy_free(&u, 2.0 * step, &d);
                        let (tr, tdu) = self.residual(&trial);
                        let tn = self.dual_norm(&tr);
                        if !(tn < best.3) {
                            break;
                        }
                        step *= 2.0;
                        *best = (trial, tr, tdu, tn);
                    }
                }
            }
            let Some((nu, nr, ndu, nn)) = accepted else {
                return Err(SolverError::Convergence {
                    iterations: k,
                    residual_history: history,
                    reason: "residual increased for every step length tried".into(),
                });
            };
            u = nu;
            r = nr;
            du = ndu;
            rn = nn;
            history.push(rn);
            if let Some(f) = log.as_mut() {
                writeln!(
                    f,
                    "{}",
                    serde_json::json!({ "iter": k + 1, "residual": rn / scale, "step": step.norm() })
                )?;
            }
            if rn <= target {
                return Ok((u, k + 1, history));
            }
        }
        Err(SolverError::Convergence {
            iterations: opts.max_iters,
            residual_history: history,
            reason: format!("relative residual still above {tol}"),
        })
    }
}

fn assemble(
    grid: &GridDomain,
    free_index: &[usize],
    nfree: usize,
    bw: usize,
    weights: &[f64],
) -> Result<BandCholesky> {
    let scale = grid.cell_volume() / (grid.h() * grid.h());
    let stride = grid.node_stride();
    let mut k = SymBand::zeros(nfree, bw);
    for &c in grid.active_cells() {
        let v = weights[c] * scale;
        let b = grid.cell_base_node(c);
        for &s in stride.iter().take(grid.n()) {
            let (fi, fj) = (free_index[b], free_index[b + s]);
            if fi != NOT_FREE {
                k.add(fi, fi, v)?;
            }
            if fj != NOT_FREE {
                k.add(fj, fj, v)?;
            }
            if fi != NOT_FREE && fj != NOT_FREE {
                k.add(fi, fj, -v)?;
            }
        }
    }
    Ok(k.factor()?)
}

fn initial_field(grid: &GridDomain, lift: &NodeField, init: &Init, seed: u64) -> Vec<Complex64> {
    let mut u = lift.values.clone();
    if let Init::Random { amplitude } = *init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = lift.ncomp;
        for &j in grid.free_nodes() {
            for k in 0..m {
                u[j * m + k] = Complex64::new(
                    rng.random_range(-amplitude..=amplitude),
                    rng.random_range(-amplitude..=amplitude),
                );
            }
        }
    }
    u
}

/// Keeps only the values on the boundary layer.
fn boundary_part(grid: &GridDomain, u: &NodeField) -> NodeField {
    let mut out = u.clone();
    let m = u.ncomp;
    for j in 0..grid.node_count() {
        if grid.node_class(j) != NodeClass::Boundary {
            out.values[j * m..(j + 1) * m].fill(Complex64::new(0.0, 0.0));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn solve_general(
    grid: &GridDomain,
    coeff: &[Complex64],
    f: &CellField,
    p: f64,
    mu: f64,
    lift: &NodeField,
    start: Option<&NodeField>,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let g = source_flux(f, p);
    let ncomp = f.rows;
    let engine = Engine::new(grid, coeff, &g.values, ncomp, p, mu)?;
    let tol = opts.tolerance(p);
    if !(tol > 0.0) {
        return Err(SolverError::InvalidInput(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let pp = p / (p - 1.0);
    let lift_flux = {
        let du = grid.discrete_gradient(lift)?;
        let mut fl = du.clone();
        let block = fl.block();
        fl.values
            .par_chunks_mut(block)
            .enumerate()
            .for_each(|(c, b)| {
                let s = coeff[c] * flux_factor(norm_sqr(b), p, mu);
                b.iter_mut().for_each(|z| *z *= s);
            });
        fl
    };
    let scale = cell_lq_norm(grid, &g, pp)
        + mu.powf(p - 1.0) * grid.measure().powf(1.0 / pp)
        + cell_lq_norm(grid, &lift_flux, pp);
    let u0 = match start {
        Some(s) => {
            let mut v = s.values.clone();
            for j in 0..grid.node_count() {
                if grid.node_class(j) != NodeClass::Interior {
                    v[j * ncomp..(j + 1) * ncomp]
                        .copy_from_slice(&lift.values[j * ncomp..(j + 1) * ncomp]);
                }
            }
            v
        }
        None => initial_field(grid, lift, &opts.init, opts.seed),
    };
    let (u, iterations, residual_history) =
        engine.run(u0, opts, scale.max(f64::MIN_POSITIVE), tol)?;
    let state = DiscreteState::with_boundary_data(grid, NodeField { ncomp, values: u })?;
    let last = *residual_history.last().expect("history is never empty");
    let denom = cell_lq_norm(grid, f, p) + mu * grid.measure().powf(1.0 / p);
    let num = cell_lq_norm(grid, &state.du, p);
    let energy_testing_bound = if denom > 0.0 {
        num / denom
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(SolveResult {
        state,
        iterations,
        residual_history,
        scale,
        tol,
        final_relative_residual: if scale > 0.0 { last / scale } else { last },
        energy_testing_bound,
    })
}

/// Nodal dual vector of the weak form at `u`; zero off the interior nodes.
pub fn residual(u: &DiscreteState, spec: &ProblemSpec) -> Result<NodeField> {
    let g = source_flux(&spec.f, spec.p);
    let engine = Engine::new(
        &spec.grid,
        &spec.a.values,
        &g.values,
        spec.ncomp(),
        spec.p,
        spec.mu,
    )?;
    let (r, _) = engine.residual(&u.u.values);
    let mut out = NodeField::zeros(&spec.grid, spec.ncomp());
    let m = spec.ncomp();
    for (i, &j) in spec.grid.free_nodes().iter().enumerate() {
        out.values[j * m..(j + 1) * m].copy_from_slice(&r[i * m..(i + 1) * m]);
    }
    Ok(out)
}

pub fn solve(spec: &ProblemSpec, opts: &SolveOptions) -> Result<SolveResult> {
    let lift = NodeField::zeros(&spec.grid, spec.ncomp());
    solve_general(
        &spec.grid,
        &spec.a.values,
        &spec.f,
        spec.p,
        spec.mu,
        &lift,
        None,
        opts,
    )
}

/// Source `F` with `|F|^{p−2}F = a·V(G)` for a prescribed cell gradient.
pub fn manufactured_source_from_gradient(
    du: &CellField,
    a: &CoefficientField,
    p: f64,
    mu: f64,
) -> Result<CellField> {
    check_exponents(p, mu)?;
    let mut f = du.clone();
    let block = f.block();
    let e = (2.0 - p) / (p - 1.0);
    f.values
        .par_chunks_mut(block)
        .enumerate()
        .for_each(|(c, b)| {
            let s = a.values[c] * flux_factor(norm_sqr(b), p, mu);
            b.iter_mut().for_each(|z| *z *= s);
            let gn = norm_sqr(b).sqrt();
            let t = if gn > 0.0 { gn.powf(e) } else { 0.0 };
            b.iter_mut().for_each(|z| *z *= t);
        });
    Ok(f)
}

/// Source for which `u_star` solves the discrete system exactly: `G = a·V(Du*)`
/// and `F = |G|^{−(p−2)/(p−1)} G`.
pub fn manufactured_source(
    u_star: &DiscreteState,
    a: &CoefficientField,
    p: f64,
    mu: f64,
) -> Result<CellField> {
    manufactured_source_from_gradient(&u_star.du, a, p, mu)
}

#[derive(Clone, Debug, Serialize)]
pub struct UniquenessReport {
    pub max_distance: f64,
    pub tol: f64,
    pub iterations: Vec<usize>,
    pub final_relative_residuals: Vec<f64>,
}

/// Solves from `trials` random starts and returns the largest pairwise
/// `‖D(u_i − u_j)‖_p`.
pub fn uniqueness_probe(
    spec: &ProblemSpec,
    opts: &SolveOptions,
    trials: usize,
) -> Result<UniquenessReport> {
    if trials < 2 {
        return Err(SolverError::InvalidInput(
            "uniqueness probe needs at least two trials".into(),
        ));
    }
    let amplitude = match opts.init {
        Init::Random { amplitude } => amplitude,
        Init::Zero => 1.0,
    };
    let results: Vec<SolveResult> = (0..trials)
        .map(|t| {
            let o = SolveOptions {
                seed: opts.seed.wrapping_add(t as u64),
                init: Init::Random { amplitude },
                ..opts.clone()
            };
            solve(spec, &o)
        })
        .collect::<Result<_>>()?;
    let mut max_distance = 0.0f64;
    for i in 0..trials {
        for j in i + 1..trials {
            let d = results[i].state.du.sub(&results[j].state.du);
            max_distance = max_distance.max(cell_lq_norm(&spec.grid, &d, spec.p));
        }
    }
    Ok(UniquenessReport {
        max_distance,
        tol: opts.tolerance(spec.p),
        iterations: results.iter().map(|r| r.iterations).collect(),
        final_relative_residuals: results.iter().map(|r| r.final_relative_residual).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct ComparisonSolution {
    /// `Ω ∩ B` on the outer lattice.
    pub grid: GridDomain,
    pub result: SolveResult,
}

/// Homogeneous problem `div(a V(Dw)) = 0` in `Ω ∩ B`, `w = u_outer` on the
/// discrete ball boundary.
pub fn solve_comparison_w(
    spec: &ProblemSpec,
    center: &[f64],
    radius: f64,
    u_outer: &DiscreteState,
    opts: &SolveOptions,
) -> Result<ComparisonSolution> {
    let sub = spec.grid.restrict_to_ball(center, radius)?;
    homogeneous(&sub, &spec.a.values, u_outer, spec.p, spec.mu, opts)
}

/// Frozen-coefficient problem `div(a₀ V(Dv)) = 0` in `Ω ∩ B`, `v = w_outer`
/// on the discrete ball boundary. `grid` is the outer domain.
#[allow(clippy::too_many_arguments)]
pub fn solve_comparison_v(
    a0: Complex64,
    grid: &GridDomain,
    center: &[f64],
    radius: f64,
    w_outer: &DiscreteState,
    p: f64,
    mu: f64,
    opts: &SolveOptions,
) -> Result<ComparisonSolution> {
    check_exponents(p, mu)?;
    if !(a0.re > 0.0) {
        return Err(SolverError::InvalidInput(format!(
            "frozen coefficient {a0} has no positive real part"
        )));
    }
    let sub = grid.restrict_to_ball(center, radius)?;
    let coeff = vec![a0; grid.cell_count()];
    homogeneous(&sub, &coeff, w_outer, p, mu, opts)
}

fn homogeneous(
    sub: &GridDomain,
    coeff: &[Complex64],
    outer: &DiscreteState,
    p: f64,
    mu: f64,
    opts: &SolveOptions,
) -> Result<ComparisonSolution> {
    let ncomp = outer.u.ncomp;
    if outer.u.values.len() != sub.node_count() * ncomp {
        return Err(SolverError::InvalidInput(
            "outer state lives on a different lattice".into(),
        ));
    }
    let lift = boundary_part(sub, &outer.u);
    let f = CellField::zeros(sub, ncomp);
    let mut start = outer.u.clone();
    for j in 0..sub.node_count() {
        if sub.node_class(j) == NodeClass::Exterior {
            start.values[j * ncomp..(j + 1) * ncomp].fill(Complex64::new(0.0, 0.0));
        }
    }
    let result = solve_general(sub, coeff, &f, p, mu, &lift, Some(&start), opts)?;
    Ok(ComparisonSolution {
        grid: sub.clone(),
        result,
    })
}

/// `Σ_c hⁿ a·⟨V(Du₁) − V(Du₂), Du₁ − Du₂⟩`; its real part is nonnegative.
pub fn monotonicity_gap(
    grid: &GridDomain,
    a: &[Complex64],
    du1: &CellField,
    du2: &CellField,
    p: f64,
    mu: f64,
) -> Complex64 {
    let term = |c: usize| {
        let (x, y) = (du1.at(c), du2.at(c));
        let (fx, fy) = (
            flux_factor(norm_sqr(x), p, mu),
            flux_factor(norm_sqr(y), p, mu),
        );
        let v: Vec<Complex64> = x.iter().zip(y).map(|(s, t)| s * fx - t * fy).collect();
        let d: Vec<Complex64> = x.iter().zip(y).map(|(s, t)| s - t).collect();
        a[c] * cinner_slices(&v, &d)
    };
    let ac = grid.active_cells();
    let re = pairwise_sum_by(ac.len(), |i| term(ac[i]).re);
    let im = pairwise_sum_by(ac.len(), |i| term(ac[i]).im);
    Complex64::new(re, im) * grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_coefficient, CoefficientSpec, StructureBounds};
    use crate::grid::{make_grid, Mask};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn bounds() -> StructureBounds {
        StructureBounds {
            c0: 1.0,
            gamma0: 0.1,
            gamma1: 0.5,
            gamma2: 2.0,
        }
    }

    fn square(m: usize) -> GridDomain {
        make_grid(2, &[m, m], 1.0 / m as f64, Mask::Rectangle).unwrap()
    }

    fn unit_coeff(g: &GridDomain) -> CoefficientField {
        make_coefficient(
            &CoefficientSpec::Constant { value: c(1.0, 0.0) },
            g,
            bounds(),
            0,
        )
        .unwrap()
    }

    fn smooth_g(x: &[f64]) -> Complex64 {
        c(1.0, 0.5) * (PI * x[0]).sin() * (PI * x[1]).sin()
    }

    fn grad_g(x: &[f64]) -> Vec<Complex64> {
        let z = c(1.0, 0.5) * PI;
        vec![
            z * (PI * x[0]).cos() * (PI * x[1]).sin(),
            z * (PI * x[0]).sin() * (PI * x[1]).cos(),
        ]
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let g = square(16);
        let spec =
            ProblemSpec::new(g.clone(), unit_coeff(&g), CellField::zeros(&g, 1), 3.0, 0.0).unwrap();
        let r = solve(&spec, &SolveOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.state.u.values.iter().all(|z| *z == c(0.0, 0.0)));
        let zero = residual(&DiscreteState::zeros(&g, 1), &spec).unwrap();
        assert!(zero.values.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn residual_at_zero_is_divergence_of_source_flux() {
        let g = square(12);
        let f = CellField::from_fn(&g, 1, |x| vec![c(x[0], -x[1]), c(0.5 * x[1], x[0] * x[0])]);
        let spec = ProblemSpec::new(g.clone(), unit_coeff(&g), f.clone(), 3.0, 0.5).unwrap();
        let r = residual(&DiscreteState::zeros(&g, 1), &spec).unwrap();
        let div = g.discrete_divergence(&source_flux(&f, 3.0)).unwrap();
        for &j in g.free_nodes() {
            assert!((r.at(j)[0] - div.at(j)[0] * g.cell_volume()).norm() < 1e-14);
        }
    }

    #[test]
    fn linear_problem_recovers_smooth_solution() {
        let mut errs = Vec::new();
        for m in [16, 32] {
            let g = square(m);
            let f = CellField::from_fn(&g, 1, grad_g);
            let spec = ProblemSpec::new(g.clone(), unit_coeff(&g), f, 2.0, 0.0).unwrap();
            let r = solve(&spec, &SolveOptions::default()).unwrap();
            assert!(r.final_relative_residual <= 1e-8);
            let exact = g
                .discrete_gradient(&NodeField::from_fn(&g, 1, |x| vec![smooth_g(x)]))
                .unwrap();
            errs.push(cell_lq_norm(&g, &r.state.du.sub(&exact), 2.0));
        }
        assert!(errs[1] < errs[0]);
    }

    #[test]
    fn manufactured_scalar_inversion() {
        let g = square(8);
        let mut du = CellField::zeros(&g, 1);
        du.values[0] = c(2.0, 0.0);
        // p = 3, μ = 0: G = |η|η has modulus 4, so |F| = 2.
        let f = manufactured_source_from_gradient(&du, &unit_coeff(&g), 3.0, 0.0).unwrap();
        assert!((f.values[0].norm() - 2.0).abs() < 1e-14);
        assert!((source_flux(&f, 3.0).values[0].norm() - 4.0).abs() < 1e-14);
        let lin = manufactured_source_from_gradient(&du, &unit_coeff(&g), 2.0, 0.3).unwrap();
        assert_eq!(lin.values[0], c(2.0, 0.0));
        let zero =
            manufactured_source(&DiscreteState::zeros(&g, 1), &unit_coeff(&g), 1.5, 0.0).unwrap();
        assert!(zero.values.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn nonlinear_manufactured_recovery() {
        let g = square(16);
        let a = make_coefficient(
            &CoefficientSpec::SmoothOscillatory {
                base: c(1.0, 0.2),
                modulus_amplitude: 0.2,
                phase_amplitude: 0.1,
                frequency: 1.0,
            },
            &g,
            bounds(),
            0,
        )
        .unwrap();
        let mut u = NodeField::from_fn(&g, 1, |x| vec![smooth_g(x)]);
        u.clear_non_free(&g);
        let star = DiscreteState::new(&g, u).unwrap();
        for &(p, mu) in &[(3.0, 0.0), (1.5, 0.0), (4.0, 0.0), (4.0, 0.5)] {
            let f = manufactured_source(&star, &a, p, mu).unwrap();
            let spec = ProblemSpec::new(g.clone(), a.clone(), f, p, mu).unwrap();
            let r0 = residual(&star, &spec).unwrap();
            assert!(r0.values.iter().all(|z| z.norm() < 1e-12));
            let r = solve(&spec, &SolveOptions::default()).unwrap();
            assert!(r.final_relative_residual <= 1e-6);
            let err =
                cell_lq_norm(&g, &r.state.du.sub(&star.du), p) / cell_lq_norm(&g, &star.du, p);
            assert!(err < 1e-3, "p = {p}: {err}");
            let hist = &r.residual_history;
            assert!(hist.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn comparison_with_affine_data() {
        let g = square(16);
        let spec =
            ProblemSpec::new(g.clone(), unit_coeff(&g), CellField::zeros(&g, 1), 3.0, 0.0).unwrap();
        let outer = DiscreteState::with_boundary_data(
            &g,
            NodeField::from_fn(&g, 1, |x| vec![c(2.0 * x[0] - x[1], 0.5 * x[1])]),
        )
        .unwrap();
        let w =
            solve_comparison_w(&spec, &[0.5, 0.5], 0.3, &outer, &SolveOptions::default()).unwrap();
        assert_eq!(w.result.iterations, 0);
        for &cell in w.grid.active_cells() {
            assert!((w.result.state.du.at(cell)[0] - c(2.0, 0.0)).norm() < 1e-10);
        }
        let zero = DiscreteState::zeros(&g, 1);
        let v = solve_comparison_v(
            c(1.0, 0.5),
            &g,
            &[0.5, 0.5],
            0.3,
            &zero,
            3.0,
            0.0,
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(v.result.state.u.values.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn monotonicity_gap_is_accretive() {
        let g = square(8);
        let a = make_coefficient(&CoefficientSpec::RandomSector, &g, bounds(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rand_field = || {
            let mut f = CellField::zeros(&g, 2);
            f.values
                .iter_mut()
                .for_each(|z| *z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            f
        };
        for _ in 0..20 {
            let (x, y) = (rand_field(), rand_field());
            assert!(monotonicity_gap(&g, &a.values, &x, &y, 1.5, 0.0).re > 0.0);
        }
    }

    #[test]
    fn telemetry_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let g = square(16);
        let f = CellField::from_fn(&g, 1, grad_g);
        let spec = ProblemSpec::new(g.clone(), unit_coeff(&g), f, 3.0, 0.0).unwrap();
        let r = solve(
            &spec,
            &SolveOptions {
                telemetry: Some(path.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), r.iterations);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["iter"], 1);
    }
}
