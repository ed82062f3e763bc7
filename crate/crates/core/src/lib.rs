//! Numerical toolkit for degenerate p-Laplacian systems with complex
//! coefficients on structured grids.
//!
//! The crate is split into layers:
//!
//! - [`algebra`]: the pointwise flux map `V` and the inequality oracles built on it.
//! - [`grid`]: masked lattices, the staggered gradient/divergence pair, snapshots.
//! - [`fields`]: admissible coefficient fields and their BMO seminorm.
//! - [`solver`]: the nonlinear Dirichlet solver and the local comparison problems.
//! - [`analysis`]: fractional maximal operators, norms, weights, covering checks.
//! - [`harness`]: experiment drivers producing JSON/CSV reports.
//!
//! ```
//! use cplap::algebra::{vpmu, ComplexMat};
//!
//! let eta = ComplexMat::from_real(1, 1, &[2.0]).unwrap();
//! let v = vpmu(&eta, 4.0, 0.0).unwrap();
//! assert_eq!(v.get(0, 0).re, 8.0);
//! ```
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algebra;
pub mod analysis;
pub mod fields;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod solver;
pub mod sum;

pub use num_complex::Complex64;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/algebra.md")]
    mod algebra {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    mod coefficients {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/maximal.md")]
    mod maximal {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
