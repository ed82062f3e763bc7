//! Domains, coefficient choices and source families of the sweeps.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::fields::{make_coefficient, CoefficientField, CoefficientSpec, StructureBounds};
use crate::grid::{make_grid, CellField, GridDomain, Mask};
use crate::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// The unit box, or the ball inscribed in it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Rectangle,
    Ball,
}

/// Grid with `m` cells per axis on the unit box.
pub fn unit_grid(n: usize, m: usize, domain: Domain) -> Result<GridDomain, HarnessError> {
    let mask = match domain {
        Domain::Rectangle => Mask::Rectangle,
        Domain::Ball => Mask::Ball {
            center: vec![0.5; n],
            radius: 0.5,
        },
    };
    Ok(make_grid(n, &vec![m; n], 1.0 / m as f64, mask)?)
}

/// Coefficient recipes in physical units, so a refined grid sees the same field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientChoice {
    Constant {
        value: Complex64,
    },
    Oscillatory {
        base: Complex64,
        modulus_amplitude: f64,
        phase_amplitude: f64,
        frequency: f64,
    },
    /// Checkerboard of `blocks_per_axis` blocks across the unit box.
    Checkerboard {
        values: [Complex64; 2],
        blocks_per_axis: usize,
    },
    /// Independent draws per cell; not refinement-stable.
    RandomSector,
}

impl CoefficientChoice {
    pub fn default_oscillatory() -> Self {
        CoefficientChoice::Oscillatory {
            base: c(1.0, 0.2),
            modulus_amplitude: 0.3,
            phase_amplitude: 0.1,
            frequency: 2.0,
        }
    }

    pub fn default_checkerboard() -> Self {
        CoefficientChoice::contrast_checkerboard(0.5, 8)
    }

    /// Values `1` and `1 + t·e^{iθ}` with `tan θ = 0.3`.
    pub fn contrast_checkerboard(t: f64, blocks_per_axis: usize) -> Self {
        let dir = c(1.0, 0.3) / c(1.0, 0.3).norm();
        CoefficientChoice::Checkerboard {
            values: [c(1.0, 0.0), c(1.0, 0.0) + dir * t],
            blocks_per_axis,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CoefficientChoice::Constant { .. } => "constant",
            CoefficientChoice::Oscillatory { .. } => "oscillatory",
            CoefficientChoice::Checkerboard { .. } => "checkerboard",
            CoefficientChoice::RandomSector => "random_sector",
        }
    }

    pub fn validate(&self, resolution: usize) -> Result<(), HarnessError> {
        if let CoefficientChoice::Checkerboard {
            blocks_per_axis, ..
        } = self
        {
            check_blocks(*blocks_per_axis, resolution)?;
        }
        Ok(())
    }

    pub fn spec(&self, m: usize) -> Result<CoefficientSpec, HarnessError> {
        Ok(match *self {
            CoefficientChoice::Constant { value } => CoefficientSpec::Constant { value },
            CoefficientChoice::Oscillatory {
                base,
                modulus_amplitude,
                phase_amplitude,
                frequency,
            } => CoefficientSpec::SmoothOscillatory {
                base,
                modulus_amplitude,
                phase_amplitude,
                frequency,
            },
            CoefficientChoice::Checkerboard {
                values,
                blocks_per_axis,
            } => {
                check_blocks(blocks_per_axis, m)?;
                CoefficientSpec::Checkerboard {
                    values,
                    period: m / blocks_per_axis,
                }
            }
            CoefficientChoice::RandomSector => CoefficientSpec::RandomSector,
        })
    }

    pub fn build(
        &self,
        grid: &GridDomain,
        bounds: StructureBounds,
        seed: u64,
    ) -> Result<CoefficientField, HarnessError> {
        let spec = self.spec(grid.shape()[0])?;
        Ok(make_coefficient(&spec, grid, bounds, seed)?)
    }
}

fn check_blocks(blocks: usize, m: usize) -> Result<(), HarnessError> {
    if blocks == 0 || !m.is_multiple_of(blocks) {
        return Err(HarnessError::Config(format!(
            "{blocks} blocks per axis do not tile {m} cells"
        )));
    }
    Ok(())
}

/// Source families, from smooth to rough.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `F = Dg` with `g = z·Π sin(πx_a)`.
    Smooth,
    /// Gaussian bump of the given width.
    Bump { width: f64 },
    /// Uniform complex noise, constant on blocks of the unit box.
    Rough { blocks_per_axis: usize },
}

const BUMP_CENTER: [f64; 3] = [0.4, 0.55, 0.5];

impl Family {
    pub fn standard() -> Vec<Family> {
        vec![
            Family::Smooth,
            Family::Bump { width: 0.2 },
            Family::Bump { width: 0.1 },
            Family::Bump { width: 0.05 },
            Family::Rough {
                blocks_per_axis: 16,
            },
        ]
    }

    pub fn label(&self) -> String {
        match self {
            Family::Smooth => "smooth".into(),
            Family::Bump { width } => format!("bump_{width}"),
            Family::Rough { blocks_per_axis } => format!("rough_{blocks_per_axis}"),
        }
    }

    pub fn validate(&self, resolution: usize) -> Result<(), HarnessError> {
        match *self {
            Family::Smooth => Ok(()),
            Family::Bump { width } if width > 0.0 && width.is_finite() => Ok(()),
            Family::Bump { width } => Err(HarnessError::Config(format!(
                "bump width {width} must be positive"
            ))),
            Family::Rough { blocks_per_axis } => check_blocks(blocks_per_axis, resolution),
        }
    }

    pub fn build(
        &self,
        grid: &GridDomain,
        ncomp: usize,
        seed: u64,
    ) -> Result<CellField, HarnessError> {
        let n = grid.n();
        Ok(match *self {
            Family::Smooth => CellField::from_fn(grid, ncomp, |x| {
                let mut out = Vec::with_capacity(ncomp * n);
                for r in 0..ncomp {
                    let z = c(1.0, 0.5) / (r + 1) as f64;
                    for a in 0..n {
                        let d: f64 = (0..n)
                            .map(|b| {
                                if a == b {
                                    PI * (PI * x[b]).cos()
                                } else {
                                    (PI * x[b]).sin()
                                }
                            })
                            .product();
                        out.push(z * d);
                    }
                }
                out
            }),
            Family::Bump { width } => {
                let v = [c(1.0, 0.5), c(-0.5, 1.0), c(0.3, -0.2)];
                CellField::from_fn(grid, ncomp, |x| {
                    let d2: f64 = (0..n).map(|a| (x[a] - BUMP_CENTER[a]).powi(2)).sum();
                    let e = (-d2 / (width * width)).exp();
                    (0..ncomp)
                        .flat_map(|r| (0..n).map(move |a| v[a] * e / (r + 1) as f64))
                        .collect()
                })
            }
            Family::Rough { blocks_per_axis } => {
                let m = grid.shape()[0];
                check_blocks(blocks_per_axis, m)?;
                let block = ncomp * n;
                let count = blocks_per_axis.pow(n as u32);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let table: Vec<Complex64> = (0..count * block)
                    .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect();
                let mut f = CellField::zeros(grid, ncomp);
                let per = m / blocks_per_axis;
                for cell in 0..grid.cell_count() {
                    let mi = grid.cell_multi(cell);
                    let mut b = 0;
                    for a in (0..n).rev() {
                        b = b * blocks_per_axis + mi[a] / per;
                    }
                    f.at_mut(cell)
                        .copy_from_slice(&table[b * block..(b + 1) * block]);
                }
                f
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::bmo_seminorm;

    fn bounds() -> StructureBounds {
        super::super::config::default_bounds()
    }

    #[test]
    fn default_coefficients_are_admissible() {
        let g = unit_grid(2, 32, Domain::Rectangle).unwrap();
        for choice in [
            CoefficientChoice::default_oscillatory(),
            CoefficientChoice::default_checkerboard(),
            CoefficientChoice::contrast_checkerboard(1.0, 16),
            CoefficientChoice::RandomSector,
        ] {
            choice.build(&g, bounds(), 1).unwrap();
        }
    }

    #[test]
    fn checkerboard_is_resolution_independent() {
        let choice = CoefficientChoice::contrast_checkerboard(0.5, 8);
        let coarse = unit_grid(2, 32, Domain::Rectangle).unwrap();
        let fine = unit_grid(2, 64, Domain::Rectangle).unwrap();
        let a = choice.build(&coarse, bounds(), 0).unwrap();
        let b = choice.build(&fine, bounds(), 0).unwrap();
        for cell in 0..fine.cell_count() {
            let m = fine.cell_multi(cell);
            let parent = coarse.cell_index([m[0] / 2, m[1] / 2, 0]);
            assert_eq!(a.values[parent], b.values[cell]);
        }
        let lo = bmo_seminorm(&a, 0.25, &coarse).unwrap().seminorm;
        assert!(lo > 0.0);
    }

    #[test]
    fn rough_family_is_resolution_independent() {
        let fam = Family::Rough {
            blocks_per_axis: 16,
        };
        let coarse = unit_grid(2, 32, Domain::Rectangle).unwrap();
        let fine = unit_grid(2, 64, Domain::Rectangle).unwrap();
        let a = fam.build(&coarse, 1, 5).unwrap();
        let b = fam.build(&fine, 1, 5).unwrap();
        for cell in 0..fine.cell_count() {
            let m = fine.cell_multi(cell);
            let parent = coarse.cell_index([m[0] / 2, m[1] / 2, 0]);
            assert_eq!(a.at(parent), b.at(cell));
        }
        assert!(b.values.iter().all(|z| z.re.abs() <= 1.0 && z.im.abs() <= 1.0));
    }

    #[test]
    fn smooth_family_is_gradient_of_product() {
        let g = unit_grid(2, 16, Domain::Rectangle).unwrap();
        let f = Family::Smooth.build(&g, 1, 0).unwrap();
        let x = g.cell_center(5);
        let expect = c(1.0, 0.5) * PI * (PI * x[0]).cos() * (PI * x[1]).sin();
        assert!((f.at(5)[0] - expect).norm() < 1e-14);
    }

    #[test]
    fn ball_domain_and_bad_blocks() {
        let g = unit_grid(2, 32, Domain::Ball).unwrap();
        assert!(g.active_cells().len() < g.cell_count());
        assert!(Family::Rough { blocks_per_axis: 3 }.validate(32).is_err());
        assert!(CoefficientChoice::contrast_checkerboard(0.5, 5)
            .validate(32)
            .is_err());
    }
}
