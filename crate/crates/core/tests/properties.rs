use cplap::algebra::{c0_from, cinner, vpmu, ComplexMat, EllipticityConstants, Provenance};
use cplap::analysis::{
    dyadic_radii, layer_cake, lq_norm, maximal, morrey_norm, truncated_maximal, weighted_lq_norm,
    ScalarField, Side, Weight,
};
use cplap::fields::{bmo_of_values, bmo_seminorm, make_coefficient, CoefficientSpec, StructureBounds};
use cplap::grid::{cell_inner, make_grid, node_inner, CellField, GridDomain, Mask, NodeField};
use cplap::solver::monotonicity_gap;
use cplap::Complex64;
use proptest::prelude::*;

fn square(m: usize) -> GridDomain {
    make_grid(2, &[m, m], 1.0 / m as f64, Mask::Rectangle).unwrap()
}

fn bounds() -> StructureBounds {
    StructureBounds {
        c0: 2.0,
        gamma0: 0.1,
        gamma1: 0.5,
        gamma2: 2.0,
    }
}

/// Small integers keep every ball sum exact in floating point.
fn integer_field(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u8..16, m * m).prop_map(|v| v.into_iter().map(f64::from).collect())
}

fn complex_entries(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), len)
        .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.5), Just(2.0), Just(3.0), Just(4.0), 1.1f64..5.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flux_is_a_nonnegative_multiple(e in complex_entries(4), p in exponent(), mu in 0.0f64..=1.0) {
        let eta = ComplexMat::from_vec(2, 2, e).unwrap();
        let v = vpmu(&eta, p, mu).unwrap();
        let n2 = eta.norm_sqr();
        let scale = (mu * mu + n2).powf(0.5 * (p - 2.0));
        for (a, b) in v.entries().iter().zip(eta.entries()) {
            prop_assert!((a - b * scale).norm() <= 1e-12 * (1.0 + (b * scale).norm()));
        }
        let want = scale * n2.sqrt();
        prop_assert!((v.norm() - want).abs() <= 1e-12 * (1.0 + want));
    }

    #[test]
    fn p2_monotonicity_product_is_real(e1 in complex_entries(2), e2 in complex_entries(2), mu in 0.0f64..=1.0) {
        let (a, b) = (
            ComplexMat::from_vec(1, 2, e1).unwrap(),
            ComplexMat::from_vec(1, 2, e2).unwrap(),
        );
        let d = vpmu(&a, 2.0, mu).unwrap().checked_sub(&vpmu(&b, 2.0, mu).unwrap()).unwrap();
        let z = cinner(&d, &a.checked_sub(&b).unwrap()).unwrap();
        prop_assert_eq!(z.im, 0.0);
    }

    #[test]
    fn c0_grows_with_the_ratio(r1 in 1.0f64..10.0, r2 in 1.0f64..10.0) {
        let c = |r: f64| {
            c0_from(&EllipticityConstants::new(1.0, r, 3.0, 0.0, (1, 2), Provenance::Analytic).unwrap())
                .unwrap()
        };
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(c(lo) <= c(hi));
        prop_assert_eq!(c(1.0), 0.0);
    }

    #[test]
    fn maximal_is_monotone_and_dominates(f in integer_field(12), g in integer_field(12), beta in prop_oneof![Just(0.0), Just(1.0)]) {
        let grid = square(12);
        let lo: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a.min(*b)).collect();
        let radii = dyadic_radii(&grid);
        let ml = maximal(&grid, &ScalarField::new(&grid, lo.clone()).unwrap(), beta, &radii).unwrap();
        let mf = maximal(&grid, &ScalarField::new(&grid, f.clone()).unwrap(), beta, &radii).unwrap();
        for (c, &fc) in f.iter().enumerate() {
            prop_assert!(ml.values()[c] <= mf.values()[c]);
            if beta == 0.0 {
                prop_assert!(mf.values()[c] >= fc);
            }
        }
    }

    #[test]
    fn maximal_is_sublinear(f in integer_field(12), g in integer_field(12), beta in prop_oneof![Just(0.0), Just(1.0)]) {
        let grid = square(12);
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let radii = dyadic_radii(&grid);
        let m = |v: Vec<f64>| maximal(&grid, &ScalarField::new(&grid, v).unwrap(), beta, &radii).unwrap();
        let (ms, mf, mg) = (m(sum), m(f), m(g));
        for c in 0..grid.cell_count() {
            let rhs = mf.values()[c] + mg.values()[c];
            // Division by the ball count rounds each side separately.
            prop_assert!(ms.values()[c] <= rhs * (1.0 + 4.0 * f64::EPSILON));
        }
    }

    #[test]
    fn truncation_split_reconstructs(f in integer_field(10), cut in 0.05f64..2.0) {
        let grid = square(10);
        let f = ScalarField::new(&grid, f).unwrap();
        let radii = dyadic_radii(&grid);
        let m = maximal(&grid, &f, 0.5, &radii).unwrap();
        let b = truncated_maximal(&grid, &f, 0.5, &radii, cut, Side::Below).unwrap();
        let a = truncated_maximal(&grid, &f, 0.5, &radii, cut, Side::Above).unwrap();
        for c in 0..grid.cell_count() {
            prop_assert_eq!(m.values()[c], b.values()[c].max(a.values()[c]));
        }
    }

    #[test]
    fn layer_cake_matches_the_norm(v in prop::collection::vec(0.0f64..5.0, 100), q in 1.0f64..5.0) {
        let grid = square(10);
        let f = ScalarField::new(&grid, v).unwrap();
        let lc = layer_cake(&grid, &f, q).unwrap();
        let direct = lq_norm(&grid, &f, q).unwrap().powf(q);
        prop_assert!((lc - direct).abs() <= 1e-12 * direct.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn constant_weight_scales_the_norm(v in prop::collection::vec(0.0f64..5.0, 100), q in 1.0f64..5.0, w in 0.01f64..100.0) {
        let grid = square(10);
        let f = ScalarField::new(&grid, v).unwrap();
        let weighted = weighted_lq_norm(&grid, &f, q, &Weight::constant(&grid, w).unwrap()).unwrap();
        let plain = lq_norm(&grid, &f, q).unwrap();
        prop_assert!((weighted - w.powf(1.0 / q) * plain).abs() <= 1e-12 * (1.0 + weighted));
    }

    #[test]
    fn morrey_reduces_at_q_equals_s(v in prop::collection::vec(0.0f64..5.0, 256), q in 1.0f64..4.0) {
        let grid = square(16);
        let f = ScalarField::new(&grid, v).unwrap();
        prop_assert_eq!(morrey_norm(&grid, &f, q, q).unwrap(), lq_norm(&grid, &f, q).unwrap());
    }

    #[test]
    fn morrey_grows_with_s_on_small_domains(v in prop::collection::vec(0.0f64..5.0, 64), q in 1.0f64..3.0, ds in 0.0f64..3.0, dt in 0.0f64..3.0) {
        // Every ball has measure below one, so |B|^(1/s - 1/q) increases with s.
        let grid = make_grid(2, &[8, 8], 1.0 / 32.0, Mask::Rectangle).unwrap();
        let f = ScalarField::new(&grid, v).unwrap();
        let (s1, s2) = (q + ds.min(dt), q + ds.max(dt));
        let (m1, m2) = (morrey_norm(&grid, &f, q, s1).unwrap(), morrey_norm(&grid, &f, q, s2).unwrap());
        prop_assert!(m1 <= m2 * (1.0 + 1e-12));
    }

    #[test]
    fn bmo_ignores_constants_and_scales(seed in 0u64..1000, shift in complex_entries(1), k in -4.0f64..4.0) {
        let grid = square(16);
        let a = make_coefficient(&CoefficientSpec::RandomSector, &grid, bounds(), seed).unwrap();
        let base = bmo_seminorm(&a, 0.5, &grid).unwrap().seminorm;
        // Dyadic shifts and power-of-two scalings are exact in floating point.
        let s = Complex64::new(shift[0].re.round(), shift[0].im.round());
        let t = 2f64.powi(k.round() as i32);
        let moved: Vec<Complex64> = a.values.iter().map(|v| v + s).collect();
        let scaled: Vec<Complex64> = a.values.iter().map(|v| v * t).collect();
        let m = bmo_of_values(&moved, 0.5, &grid).unwrap().seminorm;
        prop_assert!((m - base).abs() <= 1e-12 * base);
        prop_assert_eq!(bmo_of_values(&scaled, 0.5, &grid).unwrap().seminorm, t * base);
        let smaller = bmo_seminorm(&a, 0.25, &grid).unwrap().seminorm;
        prop_assert!(smaller <= base);
    }

    #[test]
    fn gradient_is_linear_and_adjoint(u in complex_entries(81), v in complex_entries(81), g in complex_entries(128), s in complex_entries(1)) {
        let grid = square(8);
        let field = |vals: Vec<Complex64>| {
            let mut f = NodeField { ncomp: 1, values: vals };
            f.clear_non_free(&grid);
            f
        };
        let (u, v) = (field(u), field(v));
        let mix = NodeField {
            ncomp: 1,
            values: u.values.iter().zip(&v.values).map(|(a, b)| a + s[0] * b).collect(),
        };
        let (du, dv, dm) = (
            grid.discrete_gradient(&u).unwrap(),
            grid.discrete_gradient(&v).unwrap(),
            grid.discrete_gradient(&mix).unwrap(),
        );
        for k in 0..dm.values.len() {
            let want = du.values[k] + s[0] * dv.values[k];
            prop_assert!((dm.values[k] - want).norm() <= 1e-12 * (1.0 + want.norm()));
        }
        let g = CellField { rows: 1, cols: 2, values: g };
        let lhs = cell_inner(&grid, &g, &du);
        // div = -D^T, so the pairings cancel.
        let rhs = node_inner(&grid, &grid.discrete_divergence(&g).unwrap(), &u);
        prop_assert!((lhs + rhs).norm() <= 1e-10 * (1.0 + lhs.norm()));
    }

    #[test]
    fn monotonicity_gap_is_accretive(d1 in complex_entries(128), d2 in complex_entries(128), seed in 0u64..100, p in exponent(), mu in 0.0f64..1.0) {
        let grid = square(8);
        let a = make_coefficient(&CoefficientSpec::RandomSector, &grid, bounds(), seed).unwrap();
        let f1 = CellField { rows: 1, cols: 2, values: d1 };
        let f2 = CellField { rows: 1, cols: 2, values: d2 };
        prop_assert!(monotonicity_gap(&grid, &a.values, &f1, &f2, p, mu).re > 0.0);
        prop_assert_eq!(monotonicity_gap(&grid, &a.values, &f1, &f1, p, mu).re, 0.0);
    }
}

#[test]
fn affine_fields_have_exact_gradients() {
    let grid = square(8);
    let u = NodeField::from_fn(&grid, 1, |x| vec![Complex64::new(0.5 * x[0], -0.25 * x[1])]);
    let du = grid.discrete_gradient(&u).unwrap();
    for c in 0..grid.cell_count() {
        let g = du.at(c);
        assert!((g[0] - Complex64::new(0.5, 0.0)).norm() < 1e-13);
        assert!((g[1] - Complex64::new(0.0, -0.25)).norm() < 1e-13);
    }
}

#[test]
fn unit_integral_is_the_measure() {
    for m in [8, 9, 16] {
        let grid = square(m);
        let one = vec![1.0; grid.cell_count()];
        assert_eq!(grid.integrate_cells(&one).unwrap(), grid.measure());
    }
}
