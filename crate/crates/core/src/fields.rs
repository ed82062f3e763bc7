//! Complex coefficient fields and their BMO seminorm.
//!
//! A field is admissible for bounds `(c0, γ₀, γ₁, γ₂)` when every cell value
//! satisfies `γ₁ ≤ |a| ≤ γ₂` and `Re a − c0·|Im a| > γ₀`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::sector_margin;
use crate::grid::snapshot::{Location, Role, Snapshot, SnapshotError};
use crate::grid::{BallStencil, Centering, GridDomain};

/// Balls with fewer cells are skipped by the BMO sweep.
pub const MIN_BALL_CELLS: usize = 8;

const MAX_REJECTION_DRAWS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("infeasible coefficient bounds: {0}")]
    Infeasible(String),
    #[error("coefficient violates its bounds at cell {cell}: value {value}")]
    Violation { cell: usize, value: Complex64 },
    #[error("invalid field input: {0}")]
    InvalidInput(String),
    #[error("BMO radius {r0} is below four grid spacings ({h})")]
    Resolution { r0: f64, h: f64 },
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

pub type Result<T> = std::result::Result<T, FieldError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureBounds {
    pub c0: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl StructureBounds {
    /// Rejects bound sets whose admissible region is empty.
    pub fn check_feasible(&self) -> Result<()> {
        let StructureBounds {
            c0,
            gamma0,
            gamma1,
            gamma2,
        } = *self;
        if ![c0, gamma0, gamma1, gamma2].iter().all(|v| v.is_finite()) || c0 < 0.0 {
            return Err(FieldError::Infeasible(format!("{self:?}")));
        }
        if !(gamma0 > 0.0 && gamma1 > 0.0) {
            return Err(FieldError::Infeasible(
                "gamma0 and gamma1 must be positive".into(),
            ));
        }
        if gamma1 > gamma2 {
            return Err(FieldError::Infeasible(format!(
                "gamma1 = {gamma1} exceeds gamma2 = {gamma2}"
            )));
        }
        if gamma0 >= gamma2 {
            return Err(FieldError::Infeasible(format!(
                "gamma0 = {gamma0} is not below gamma2 = {gamma2}"
            )));
        }
        Ok(())
    }

    pub fn ellipticity_margin(&self, a: Complex64) -> f64 {
        let m = a.norm();
        (m - self.gamma1).min(self.gamma2 - m)
    }

    pub fn sector_margin(&self, a: Complex64) -> f64 {
        sector_margin(a, self.c0, self.gamma0)
    }

    pub fn admits(&self, a: Complex64) -> bool {
        self.ellipticity_margin(a) >= 0.0 && self.sector_margin(a) > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientSpec {
    Constant {
        value: Complex64,
    },
    /// `base·(1 + m·sin(2πf x₁)·sin(2πf x₂)) · exp(i·φ·cos(2πf x₁)·cos(2πf x₂))`,
    /// with the products running over all axes.
    SmoothOscillatory {
        base: Complex64,
        modulus_amplitude: f64,
        phase_amplitude: f64,
        frequency: f64,
    },
    /// Two values alternating over blocks of `period` cells per axis.
    Checkerboard {
        values: [Complex64; 2],
        period: usize,
    },
    /// Independent uniform draws from the admissible region.
    RandomSector,
}

impl CoefficientSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CoefficientSpec::Constant { .. } => "constant",
            CoefficientSpec::SmoothOscillatory { .. } => "smooth_oscillatory",
            CoefficientSpec::Checkerboard { .. } => "checkerboard",
            CoefficientSpec::RandomSector => "random_sector",
        }
    }

    /// Closed-form value at a point, for every kind except `RandomSector`.
    pub fn value_at(&self, x: &[f64], cell_multi: [usize; 3]) -> Option<Complex64> {
        match *self {
            CoefficientSpec::Constant { value } => Some(value),
            CoefficientSpec::SmoothOscillatory {
                base,
                modulus_amplitude,
                phase_amplitude,
                frequency,
            } => {
                let w = 2.0 * PI * frequency;
                let s: f64 = x.iter().map(|xi| (w * xi).sin()).product();
                let c: f64 = x.iter().map(|xi| (w * xi).cos()).product();
                Some(
                    base * (1.0 + modulus_amplitude * s)
                        * Complex64::from_polar(1.0, phase_amplitude * c),
                )
            }
            CoefficientSpec::Checkerboard { values, period } => {
                let parity: usize = cell_multi.iter().map(|m| m / period.max(1)).sum();
                Some(values[parity % 2])
            }
            CoefficientSpec::RandomSector => None,
        }
    }
}

/// Uniform sample from `{γ₁ ≤ |a| ≤ γ₂, Re a − c0|Im a| > γ₀}` by rejection.
pub fn sample_admissible<R: Rng + ?Sized>(rng: &mut R, b: &StructureBounds) -> Result<Complex64> {
    for _ in 0..MAX_REJECTION_DRAWS {
        let a = Complex64::new(
            rng.random_range(0.0..b.gamma2),
            rng.random_range(-b.gamma2..b.gamma2),
        );
        if b.admits(a) {
            return Ok(a);
        }
    }
    Err(FieldError::Infeasible(format!(
        "no admissible value found in {MAX_REJECTION_DRAWS} draws for {b:?}"
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmoReport {
    pub seminorm: f64,
    pub r0: f64,
    pub ball_count: usize,
    pub max_ball_center: Vec<f64>,
    pub max_ball_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub values: Vec<Complex64>,
    pub bounds: StructureBounds,
    pub spec: CoefficientSpec,
    pub seed: u64,
    pub bmo: Option<BmoReport>,
}

pub fn make_coefficient(
    spec: &CoefficientSpec,
    grid: &GridDomain,
    bounds: StructureBounds,
    seed: u64,
) -> Result<CoefficientField> {
    bounds.check_feasible()?;
    let values: Vec<Complex64> = match spec {
        CoefficientSpec::RandomSector => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..grid.cell_count())
                .map(|_| sample_admissible(&mut rng, &bounds))
                .collect::<Result<_>>()?
        }
        CoefficientSpec::Checkerboard { period: 0, .. } => {
            return Err(FieldError::InvalidInput(
                "checkerboard period must be positive".into(),
            ));
        }
        _ => (0..grid.cell_count())
            .into_par_iter()
            .map(|c| {
                let x = grid.cell_center(c);
                spec.value_at(&x[..grid.n()], grid.cell_multi(c))
                    .expect("closed-form kind")
            })
            .collect(),
    };
    if let Some(cell) = values.iter().position(|&a| !bounds.admits(a)) {
        return Err(FieldError::Violation {
            cell,
            value: values[cell],
        });
    }
    Ok(CoefficientField {
        values,
        bounds,
        spec: spec.clone(),
        seed,
        bmo: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    pub ellipticity_ok: bool,
    pub sector_ok: bool,
    pub worst_cell: usize,
    pub worst_ellipticity_margin: f64,
    pub worst_sector_margin: f64,
}

impl StructureReport {
    pub fn ok(&self) -> bool {
        self.ellipticity_ok && self.sector_ok
    }
}

/// Exhaustive cell-wise check of both structure conditions.
pub fn verify_structure(a: &CoefficientField) -> StructureReport {
    let b = a.bounds;
    let mut worst_cell = 0;
    let mut worst = f64::INFINITY;
    let mut ell = f64::INFINITY;
    let mut sec = f64::INFINITY;
    for (c, &v) in a.values.iter().enumerate() {
        let (e, s) = (b.ellipticity_margin(v), b.sector_margin(v));
        ell = ell.min(e);
        sec = sec.min(s);
        if e.min(s) < worst {
            worst = e.min(s);
            worst_cell = c;
        }
    }
    StructureReport {
        ellipticity_ok: ell >= 0.0,
        sector_ok: sec > 0.0,
        worst_cell,
        worst_ellipticity_margin: ell,
        worst_sector_margin: sec,
    }
}

impl CoefficientField {
    /// Field with explicit values; checked like a constructed one.
    pub fn from_values(values: Vec<Complex64>, bounds: StructureBounds) -> Result<Self> {
        bounds.check_feasible()?;
        if let Some(cell) = values.iter().position(|&a| !bounds.admits(a)) {
            return Err(FieldError::Violation {
                cell,
                value: values[cell],
            });
        }
        let spec = CoefficientSpec::Constant {
            value: values.first().copied().unwrap_or_default(),
        };
        Ok(CoefficientField {
            values,
            bounds,
            spec,
            seed: 0,
            bmo: None,
        })
    }

    /// Constant field `a ≡ value`, skipping the admissibility check. Used for
    /// frozen coefficients and for negative tests.
    pub fn constant_unchecked(
        grid: &GridDomain,
        value: Complex64,
        bounds: StructureBounds,
    ) -> Self {
        CoefficientField {
            values: vec![value; grid.cell_count()],
            bounds,
            spec: CoefficientSpec::Constant { value },
            seed: 0,
            bmo: None,
        }
    }

    /// `sup |a − base|` over the cells, for smooth fields.
    pub fn amplitude(&self) -> Option<f64> {
        match self.spec {
            CoefficientSpec::SmoothOscillatory { base, .. } => Some(
                self.values
                    .iter()
                    .map(|v| (v - base).norm())
                    .fold(0.0, f64::max),
            ),
            _ => None,
        }
    }

    pub fn with_bmo(mut self, report: BmoReport) -> Self {
        self.bmo = Some(report);
        self
    }

    pub fn to_snapshot(&self, grid: &GridDomain) -> Result<Snapshot> {
        let params =
            serde_json::json!({ "spec": self.spec, "bounds": self.bounds, "seed": self.seed });
        Ok(Snapshot::for_grid(
            grid,
            Role::Coefficient,
            Location::Cell,
            1,
            self.spec.kind_name(),
            params,
            self.values.clone(),
        )?)
    }

    pub fn from_snapshot(snap: &Snapshot, grid: &GridDomain) -> Result<Self> {
        if snap.role != Role::Coefficient || snap.location != Location::Cell || snap.components != 1
        {
            return Err(FieldError::InvalidInput(
                "snapshot does not hold a cell coefficient".into(),
            ));
        }
        if !snap.matches(grid) {
            return Err(FieldError::InvalidInput(
                "snapshot lattice differs from the grid".into(),
            ));
        }
        let bounds: StructureBounds = serde_json::from_value(snap.params["bounds"].clone())
            .map_err(|e| FieldError::InvalidInput(format!("snapshot bounds: {e}")))?;
        let spec: CoefficientSpec = serde_json::from_value(snap.params["spec"].clone())
            .map_err(|e| FieldError::InvalidInput(format!("snapshot spec: {e}")))?;
        let seed = snap.params["seed"].as_u64().unwrap_or(0);
        let mut f = Self::from_values(snap.values.clone(), bounds)?;
        f.spec = spec;
        f.seed = seed;
        Ok(f)
    }
}

/// Dyadic radii `r0, r0/2, …` down to `4h`.
pub fn bmo_radii(r0: f64, h: f64) -> Vec<f64> {
    let mut radii = Vec::new();
    let mut r = r0;
    while r >= 4.0 * h * (1.0 - 1e-12) {
        radii.push(r);
        r *= 0.5;
    }
    radii
}

/// Mean oscillation of complex values under a lattice ball. Returns the
/// number of cells with it.
fn oscillation(
    values: &[Complex64],
    grid: &GridDomain,
    stencil: &BallStencil,
    reference: [usize; 3],
) -> (f64, usize) {
    // Deviations are accumulated from a pivot value inside the ball, which
    // makes constant fields oscillation-free to the last bit.
    let mut count = 0usize;
    let mut pivot = None;
    let mut sum = Complex64::new(0.0, 0.0);
    stencil.for_each_run(grid, reference, |line, lo, hi| {
        let p = *pivot.get_or_insert(values[line + lo]);
        count += hi - lo;
        sum += values[line + lo..line + hi]
            .iter()
            .map(|v| v - p)
            .sum::<Complex64>();
    });
    let Some(pivot) = pivot else { return (0.0, 0) };
    let mean = pivot + sum / count as f64;
    let mut dev = 0.0;
    stencil.for_each_run(grid, reference, |line, lo, hi| {
        dev += values[line + lo..line + hi]
            .iter()
            .map(|v| (v - mean).norm())
            .sum::<f64>();
    });
    (dev / count as f64, count)
}

/// Sampled BMO seminorm: sup over node centers and radii from [`bmo_radii`]
/// of the mean oscillation over the ball clipped to the bounding box.
pub fn bmo_seminorm(a: &CoefficientField, r0: f64, grid: &GridDomain) -> Result<BmoReport> {
    bmo_of_values(&a.values, r0, grid)
}

pub fn bmo_of_values(values: &[Complex64], r0: f64, grid: &GridDomain) -> Result<BmoReport> {
    if values.len() != grid.cell_count() {
        return Err(FieldError::InvalidInput(format!(
            "{} values for {} cells",
            values.len(),
            grid.cell_count()
        )));
    }
    if !(r0 >= 4.0 * grid.h()) {
        return Err(FieldError::Resolution { r0, h: grid.h() });
    }
    let diam = grid.diam();
    if r0 > diam * (1.0 + 1e-12) {
        return Err(FieldError::InvalidInput(format!(
            "r0 = {r0} exceeds the domain diameter {diam}"
        )));
    }
    let stencils: Vec<BallStencil> = bmo_radii(r0, grid.h())
        .into_iter()
        .map(|r| BallStencil::new(grid.n(), r, grid.h(), Centering::Node))
        .collect();
    let per_node: Vec<(f64, usize, f64)> = (0..grid.node_count())
        .into_par_iter()
        .map(|j| {
            let reference = grid.node_multi(j);
            let mut best = (f64::NEG_INFINITY, 0usize, 0.0);
            for s in &stencils {
                let (osc, count) = oscillation(values, grid, s, reference);
                if count < MIN_BALL_CELLS {
                    continue;
                }
                best.1 += 1;
                if osc > best.0 {
                    best = (osc, best.1, s.radius);
                }
            }
            best
        })
        .collect();
    let mut report = BmoReport {
        seminorm: 0.0,
        r0,
        ball_count: 0,
        max_ball_center: grid.node_coord(0)[..grid.n()].to_vec(),
        max_ball_radius: r0,
    };
    let mut best = f64::NEG_INFINITY;
    for (j, &(osc, balls, radius)) in per_node.iter().enumerate() {
        report.ball_count += balls;
        if balls > 0 && osc > best {
            best = osc;
            report.max_ball_center = grid.node_coord(j)[..grid.n()].to_vec();
            report.max_ball_radius = radius;
        }
    }
    report.seminorm = best.max(0.0);
    Ok(report)
}
