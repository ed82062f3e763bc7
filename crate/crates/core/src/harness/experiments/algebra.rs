//! Pointwise flux inequalities on fresh samples, with constants from a
//! disjoint estimation run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebra::{
    accretivity_lower, c0_from, check_band, cinner, estimate_c1_c2, sector_of, vpmu,
    EllipticityConstants, PairSampler, Provenance,
};
use crate::fields::{sample_admissible, StructureBounds};
use crate::harness::config::{ExperimentConfig, ExperimentId};
use crate::harness::report::{ExperimentReport, Table};
use crate::harness::Result;

const FRESH_STREAM: u64 = 0xf4e5_0000;
const CHUNK: usize = 4096;

#[derive(Default, Clone, Copy)]
struct Tally {
    samples: usize,
    band_fail: usize,
    accretivity_fail: usize,
    sector_fail: usize,
    /// Smallest `Re z / (c1 Q)`.
    re_margin: f64,
    /// Largest `|Im z| / (sqrt(c2² − c1²) Q)`, or `|Im z|/|z|` when the bound vanishes.
    im_margin: f64,
    /// Largest `|Im z| / |z|`.
    im_relative: f64,
}

impl Tally {
    fn empty() -> Self {
        Tally {
            re_margin: f64::INFINITY,
            ..Default::default()
        }
    }

    fn merge(self, o: Tally) -> Tally {
        Tally {
            samples: self.samples + o.samples,
            band_fail: self.band_fail + o.band_fail,
            accretivity_fail: self.accretivity_fail + o.accretivity_fail,
            sector_fail: self.sector_fail + o.sector_fail,
            re_margin: self.re_margin.min(o.re_margin),
            im_margin: self.im_margin.max(o.im_margin),
            im_relative: self.im_relative.max(o.im_relative),
        }
    }
}

fn fresh_tally(
    c: &EllipticityConstants,
    bounds: StructureBounds,
    count: usize,
    seed: u64,
) -> Result<Tally> {
    let (rows, cols) = c.dims;
    let (p, mu) = (c.p, c.mu);
    let c0 = c0_from(c)?;
    let sector = StructureBounds { c0, ..bounds };
    let sampler = PairSampler::new(rows, cols, mu);
    let chunks = count.div_ceil(CHUNK);
    let tallies: Vec<Result<Tally>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ FRESH_STREAM);
            rng.set_stream(k as u64);
            let mut t = Tally::empty();
            for _ in 0..CHUNK.min(count - k * CHUNK) {
                let (e1, e2) = sampler.sample_complex(&mut rng, rows, cols);
                if e1.checked_sub(&e2)?.is_zero() {
                    continue;
                }
                t.samples += 1;
                let l = check_band(&e1, &e2, p, mu, c)?;
                t.band_fail += usize::from(!l.pass);
                if l.re_bound > 0.0 {
                    t.re_margin = t.re_margin.min(l.re_lhs / l.re_bound);
                }
                let zn = l.re_lhs.hypot(l.im_lhs);
                if zn > 0.0 {
                    t.im_relative = t.im_relative.max(l.im_lhs.abs() / zn);
                }
                t.im_margin = t.im_margin.max(if l.im_bound > 0.0 {
                    l.im_lhs.abs() / l.im_bound
                } else if zn > 0.0 {
                    l.im_lhs.abs() / zn
                } else {
                    0.0
                });
                let v = vpmu(&e1, p, mu)?.checked_sub(&vpmu(&e2, p, mu)?)?;
                let z = cinner(&v, &e1.checked_sub(&e2)?)?;
                t.sector_fail += usize::from(!sector_of(z, c0));
                let a = sample_admissible(&mut rng, &sector)?;
                let acc = accretivity_lower(a, &e1, p, mu, bounds.gamma0, c)?;
                t.accretivity_fail += usize::from(!acc.pass);
            }
            Ok(t)
        })
        .collect();
    tallies
        .into_iter()
        .try_fold(Tally::empty(), |acc, t| Ok(acc.merge(t?)))
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(ExperimentId::VerifyAlgebra, cfg);
    let ap = &cfg.algebra;
    report.convention(
        "slack",
        "band bounds compared with relative slack 1e-9; sector membership exact",
    );
    report.convention(
        "samples",
        "constants from estimation_samples pairs at the config seed; checks on fresh_samples pairs from a disjoint stream",
    );
    let mut table = Table::new(
        "constants",
        &[
            "p",
            "mu",
            "c1",
            "c2",
            "c0",
            "analytic",
            "estimation_samples",
            "fresh_samples",
            "band_fail",
            "accretivity_fail",
            "sector_fail",
            "re_margin",
            "im_margin",
            "im_relative",
        ],
    );
    let mut totals = Tally::empty();
    let mut exact = true;
    let mut exact_detail = Vec::new();
    for &p in &ap.p_values {
        for &mu in &ap.mu_values {
            let c = estimate_c1_c2(p, mu, ap.dims, ap.estimation_samples, cfg.seed)?;
            let t = fresh_tally(&c, cfg.bounds, ap.fresh_samples, cfg.seed)?;
            let c0 = c0_from(&c)?;
            if p == 2.0 {
                let ok = (c.c1 - 1.0).abs() <= ap.exactness_tol
                    && (c.c2 - 1.0).abs() <= ap.exactness_tol
                    && t.im_relative <= ap.exactness_tol;
                exact &= ok;
                exact_detail.push(format!(
                    "mu={mu}: c1={}, c2={}, max |Im z|/|z| = {:e}",
                    c.c1, c.c2, t.im_relative
                ));
            }
            report.constants.insert(format!("c1[p={p},mu={mu}]"), c.c1);
            report.constants.insert(format!("c2[p={p},mu={mu}]"), c.c2);
            table.push(vec![
                p.into(),
                mu.into(),
                c.c1.into(),
                c.c2.into(),
                c0.into(),
                (c.provenance == Provenance::Analytic).into(),
                ap.estimation_samples.into(),
                t.samples.into(),
                t.band_fail.into(),
                t.accretivity_fail.into(),
                t.sector_fail.into(),
                t.re_margin.into(),
                t.im_margin.into(),
                t.im_relative.into(),
            ]);
            totals = totals.merge(t);
        }
    }
    report.check(
        "band_bounds",
        totals.band_fail == 0,
        format!("{} failures in {} samples", totals.band_fail, totals.samples),
    );
    report.check(
        "accretivity",
        totals.accretivity_fail == 0,
        format!("{} failures in {} samples", totals.accretivity_fail, totals.samples),
    );
    report.check(
        "value_sector",
        totals.sector_fail == 0,
        format!("{} failures in {} samples", totals.sector_fail, totals.samples),
    );
    if !exact_detail.is_empty() {
        report.check("p2_exactness", exact, exact_detail.join("; "));
    }
    report.tables = vec![table];
    Ok(report)
}
