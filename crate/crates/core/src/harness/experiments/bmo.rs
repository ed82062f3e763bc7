//! Measured BMO seminorms of the coefficient knobs.

use super::COEFFICIENT_STREAM;
use crate::fields::{bmo_seminorm, verify_structure};
use crate::harness::config::{ExperimentConfig, ExperimentId};
use crate::harness::inputs::{unit_grid, CoefficientChoice};
use crate::harness::report::{ExperimentReport, Table};
use crate::harness::Result;
use crate::Complex64;

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(ExperimentId::Bmo, cfg);
    report.convention(
        "bmo",
        "sup over node centers and radii r0/2^k >= 4h of the mean oscillation on the ball clipped to the box",
    );
    let bp = &cfg.bmo;
    let mut choices: Vec<(String, f64, CoefficientChoice)> = vec![(
        "constant".into(),
        0.0,
        CoefficientChoice::Constant {
            value: Complex64::new(1.0, 0.2),
        },
    )];
    for &k in &bp.contrasts {
        choices.push((
            "checkerboard_contrast".into(),
            k,
            CoefficientChoice::contrast_checkerboard(k, bp.blocks_per_axis),
        ));
    }
    for &f in &bp.frequencies {
        let CoefficientChoice::Oscillatory {
            base,
            modulus_amplitude,
            phase_amplitude,
            ..
        } = CoefficientChoice::default_oscillatory()
        else {
            unreachable!()
        };
        choices.push((
            "oscillation_frequency".into(),
            f,
            CoefficientChoice::Oscillatory {
                base,
                modulus_amplitude,
                phase_amplitude,
                frequency: f,
            },
        ));
    }
    choices.push(("random_sector".into(), 0.0, CoefficientChoice::RandomSector));

    let mut table = Table::new(
        "seminorms",
        &[
            "kind",
            "knob",
            "resolution",
            "r0",
            "seminorm",
            "ball_count",
            "structure_ok",
        ],
    );
    let mut structure_ok = true;
    let mut constant_zero = true;
    let mut contrast_monotone = true;
    for m in cfg.resolutions() {
        let grid = unit_grid(cfg.dimension, m, cfg.domain)?;
        let mut last_contrast = -1.0f64;
        for (kind, knob, choice) in &choices {
            let a = choice.build(&grid, cfg.bounds, cfg.seed ^ COEFFICIENT_STREAM)?;
            let ok = verify_structure(&a).ok();
            structure_ok &= ok;
            let rep = bmo_seminorm(&a, bp.r0, &grid)?;
            if kind == "constant" {
                constant_zero &= rep.seminorm == 0.0;
            }
            if kind == "checkerboard_contrast" {
                contrast_monotone &= rep.seminorm >= last_contrast;
                last_contrast = rep.seminorm;
            }
            report
                .constants
                .insert(format!("bmo[{kind}={knob},m={m}]"), rep.seminorm);
            table.push(vec![
                kind.as_str().into(),
                (*knob).into(),
                m.into(),
                bp.r0.into(),
                rep.seminorm.into(),
                rep.ball_count.into(),
                ok.into(),
            ]);
        }
    }
    report.check("structure_conditions", structure_ok, "every cell of every field");
    report.check("constant_is_oscillation_free", constant_zero, "seminorm exactly 0");
    report.check(
        "contrast_monotone",
        contrast_monotone,
        "seminorm nondecreasing in checkerboard contrast",
    );
    report.tables = vec![table];
    Ok(report)
}
