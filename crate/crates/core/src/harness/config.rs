//! Experiment configuration, read from versioned JSON.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::inputs::{CoefficientChoice, Domain, Family};
use super::HarnessError;
use crate::algebra::check_exponents;
use crate::fields::StructureBounds;
use crate::solver::SolveOptions;
use crate::Complex64;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Solve,
    VerifyAlgebra,
    Bmo,
    Maximal,
    ExistenceUniqueness,
    Apriori,
    Comparison,
    GoodLambda,
    CzSweep,
    MorreySweep,
    All,
}

impl ExperimentId {
    /// Experiments run by `all`, in report order.
    pub const SUITE: [ExperimentId; 9] = [
        ExperimentId::VerifyAlgebra,
        ExperimentId::Bmo,
        ExperimentId::Maximal,
        ExperimentId::ExistenceUniqueness,
        ExperimentId::Apriori,
        ExperimentId::Comparison,
        ExperimentId::GoodLambda,
        ExperimentId::CzSweep,
        ExperimentId::MorreySweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Solve => "solve",
            ExperimentId::VerifyAlgebra => "verify_algebra",
            ExperimentId::Bmo => "bmo",
            ExperimentId::Maximal => "maximal",
            ExperimentId::ExistenceUniqueness => "existence_uniqueness",
            ExperimentId::Apriori => "apriori",
            ExperimentId::Comparison => "comparison",
            ExperimentId::GoodLambda => "good_lambda",
            ExperimentId::CzSweep => "cz_sweep",
            ExperimentId::MorreySweep => "morrey_sweep",
            ExperimentId::All => "all",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exponents {
    pub p: f64,
    pub mu: f64,
}

/// Pass thresholds shared by the sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Slack {
    /// Largest fitted constant still counted as bounded.
    pub boundedness_cap: f64,
    /// Allowed ratio between constants at consecutive resolutions.
    pub refinement_factor: f64,
    /// Probe distances must stay below this multiple of `tol·max(‖Du‖_p, 1)`.
    pub uniqueness_factor: f64,
    /// Agreement of the β = 0, q = p constant with the a-priori constant.
    pub cross_check: f64,
}

impl Default for Slack {
    fn default() -> Self {
        Slack {
            boundedness_cap: 100.0,
            refinement_factor: 2.0,
            uniqueness_factor: 100.0,
            cross_check: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgebraParams {
    pub p_values: Vec<f64>,
    pub mu_values: Vec<f64>,
    /// Matrix shape `(N, n)` of the sampled gradients.
    pub dims: (usize, usize),
    pub estimation_samples: usize,
    pub fresh_samples: usize,
    pub exactness_tol: f64,
}

impl Default for AlgebraParams {
    fn default() -> Self {
        AlgebraParams {
            p_values: vec![1.5, 2.0, 3.0, 4.0],
            mu_values: vec![0.0, 0.5, 1.0],
            dims: (1, 2),
            estimation_samples: 1_000_000,
            fresh_samples: 100_000,
            exactness_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmoParams {
    pub r0: f64,
    /// Checkerboard contrasts: the second value is `1 + contrast·(1+0.3i)/|1+0.3i|`.
    pub contrasts: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub blocks_per_axis: usize,
}

impl Default for BmoParams {
    fn default() -> Self {
        BmoParams {
            r0: 0.25,
            contrasts: vec![0.0, 0.25, 0.5, 1.0],
            frequencies: vec![1.0, 2.0, 4.0],
            blocks_per_axis: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaximalParams {
    pub betas: Vec<f64>,
    pub lambda_count: usize,
    pub random_fields: usize,
    pub layer_cake_q: Vec<f64>,
    pub layer_cake_tol: f64,
    pub vitali_r0: f64,
    pub vitali_eps: Vec<f64>,
    pub vitali_trials: usize,
}

impl Default for MaximalParams {
    fn default() -> Self {
        MaximalParams {
            betas: vec![0.0, 1.0],
            lambda_count: 20,
            random_fields: 100,
            layer_cake_q: vec![1.5, 2.0, 4.0],
            layer_cake_tol: 1e-12,
            vitali_r0: 0.25,
            vitali_eps: vec![0.05, 0.1, 0.2],
            vitali_trials: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExistenceParams {
    pub exponents: Vec<Exponents>,
    pub coefficients: Vec<CoefficientChoice>,
    pub trials: usize,
    pub init_amplitude: f64,
    /// Resolution of the three-dimensional smoke solve; 0 disables it.
    pub smoke_3d_resolution: usize,
}

impl Default for ExistenceParams {
    fn default() -> Self {
        let mut exponents = Vec::new();
        for p in [1.5, 3.0, 4.0] {
            for mu in [0.0, 0.5] {
                exponents.push(Exponents { p, mu });
            }
        }
        ExistenceParams {
            exponents,
            coefficients: vec![
                CoefficientChoice::Constant {
                    value: Complex64::new(1.0, 0.2),
                },
                CoefficientChoice::default_checkerboard(),
                CoefficientChoice::RandomSector,
            ],
            trials: 3,
            init_amplitude: 1.0,
            smoke_3d_resolution: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonParams {
    pub exponents: Vec<Exponents>,
    /// Grid resolution as a multiple of the base resolution.
    pub resolution_factor: usize,
    pub xi: f64,
    pub centers: usize,
    pub contrasts: Vec<f64>,
    pub blocks_per_axis: usize,
    pub deltas: Vec<f64>,
    /// Support of the forcing bump, kept away from the sampled balls.
    pub source_center: Vec<f64>,
    pub source_width: f64,
    pub bmo_r0: f64,
    /// Largest comparison error accepted as zero for a constant coefficient.
    pub constant_tol: f64,
}

impl Default for ComparisonParams {
    fn default() -> Self {
        ComparisonParams {
            exponents: vec![Exponents { p: 2.0, mu: 0.0 }, Exponents { p: 3.0, mu: 0.5 }],
            resolution_factor: 2,
            xi: 1.0 / 16.0,
            centers: 4,
            contrasts: vec![0.0, 0.5, 1.0],
            blocks_per_axis: 16,
            deltas: vec![0.5, 0.1],
            source_center: vec![0.12, 0.12],
            source_width: 0.05,
            bmo_r0: 0.25,
            constant_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoodLambdaParams {
    pub p: f64,
    pub mu: f64,
    pub beta: f64,
    pub eps: f64,
    /// Constant in `|V| ≤ Cε|W|`.
    pub c: f64,
    /// Grid resolution as a multiple of the base resolution.
    pub resolution_factor: usize,
    pub sigma_exponents: Vec<i32>,
    pub kappa_exponents: Vec<i32>,
    pub lambda_count: usize,
    /// Smallest λ as a fraction of `max M_β(|Du|^p)`.
    pub lambda_floor: f64,
    pub coefficient: CoefficientChoice,
    pub family: Family,
    pub vitali_r0: f64,
}

impl Default for GoodLambdaParams {
    fn default() -> Self {
        GoodLambdaParams {
            p: 2.0,
            mu: 0.0,
            beta: 0.0,
            eps: 0.1,
            c: 1.0,
            resolution_factor: 2,
            sigma_exponents: (0..=6).collect(),
            kappa_exponents: (0..=12).collect(),
            lambda_count: 20,
            lambda_floor: 1e-3,
            coefficient: CoefficientChoice::Constant {
                value: Complex64::new(1.0, 0.0),
            },
            family: Family::Rough { blocks_per_axis: 16 },
            vitali_r0: 0.25,
        }
    }
}

/// A CZ case: `q` is either absolute or a multiple of `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CzCase {
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub q_over_p: Option<f64>,
    pub beta: f64,
}

impl CzCase {
    pub fn q_for(&self, p: f64) -> f64 {
        match (self.q, self.q_over_p) {
            (Some(q), _) => q,
            (None, Some(k)) => k * p,
            (None, None) => f64::NAN,
        }
    }

    pub fn label(&self) -> String {
        match (self.q, self.q_over_p) {
            (Some(q), _) => format!("q={q},beta={}", self.beta),
            (None, Some(k)) => format!("q={k}p,beta={}", self.beta),
            (None, None) => "invalid".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CzParams {
    pub cases: Vec<CzCase>,
    /// Checkerboard contrasts for the constant-vs-BMO trend.
    pub trend_contrasts: Vec<f64>,
    pub trend_blocks_per_axis: usize,
    pub trend_r0: f64,
}

impl Default for CzParams {
    fn default() -> Self {
        CzParams {
            cases: vec![
                CzCase {
                    q: Some(4.0),
                    q_over_p: None,
                    beta: 0.0,
                },
                CzCase {
                    q: None,
                    q_over_p: Some(2.0),
                    beta: 0.0,
                },
                CzCase {
                    q: Some(4.0),
                    q_over_p: None,
                    beta: 1.0,
                },
            ],
            trend_contrasts: vec![0.0, 0.5, 1.0],
            trend_blocks_per_axis: 8,
            trend_r0: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorreyCase {
    pub q: f64,
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorreyParams {
    pub cases: Vec<MorreyCase>,
    /// Radius of the ball in the annulus check, on the box `[0, box]^n`.
    pub annulus_radius: f64,
    pub annulus_box: f64,
}

impl Default for MorreyParams {
    fn default() -> Self {
        MorreyParams {
            cases: vec![
                MorreyCase { q: 4.0, s: 4.0 },
                MorreyCase { q: 2.0, s: 4.0 },
                MorreyCase { q: 3.0, s: 4.0 },
            ],
            annulus_radius: 0.125,
            annulus_box: 4.0,
        }
    }
}

/// The single problem of the `solve` experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveParams {
    pub p: f64,
    pub mu: f64,
    pub family: Family,
    pub snapshots: bool,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            p: 3.0,
            mu: 0.0,
            family: Family::Smooth,
            snapshots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    pub seed: u64,
    pub output: PathBuf,
    pub dimension: usize,
    pub components: usize,
    pub domain: Domain,
    /// Cells per axis of the coarsest sweep grid.
    pub resolution: usize,
    /// Number of grids in a sweep, each twice as fine as the last.
    pub refinement_levels: usize,
    pub bounds: StructureBounds,
    pub coefficient: CoefficientChoice,
    pub exponents: Vec<Exponents>,
    pub families: Vec<Family>,
    pub solver: SolveOptions,
    pub slack: Slack,
    pub algebra: AlgebraParams,
    pub bmo: BmoParams,
    pub maximal: MaximalParams,
    pub existence: ExistenceParams,
    pub comparison: ComparisonParams,
    pub good_lambda: GoodLambdaParams,
    pub cz: CzParams,
    pub morrey: MorreyParams,
    pub solve: SolveParams,
}

pub fn default_bounds() -> StructureBounds {
    StructureBounds {
        c0: 2.0,
        gamma0: 0.1,
        gamma1: 0.5,
        gamma2: 2.0,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut exponents = Vec::new();
        for p in [1.5, 2.0, 3.0, 4.0] {
            exponents.push(Exponents { p, mu: 0.0 });
        }
        for p in [1.5, 3.0, 4.0] {
            exponents.push(Exponents { p, mu: 0.5 });
        }
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: ExperimentId::All,
            seed: 0,
            output: PathBuf::from("reports"),
            dimension: 2,
            components: 1,
            domain: Domain::Rectangle,
            resolution: 32,
            refinement_levels: 2,
            bounds: default_bounds(),
            coefficient: CoefficientChoice::default_oscillatory(),
            exponents,
            families: Family::standard(),
            solver: SolveOptions::default(),
            slack: Slack::default(),
            algebra: AlgebraParams::default(),
            bmo: BmoParams::default(),
            maximal: MaximalParams::default(),
            existence: ExistenceParams::default(),
            comparison: ComparisonParams::default(),
            good_lambda: GoodLambdaParams::default(),
            cz: CzParams::default(),
            morrey: MorreyParams::default(),
            solve: SolveParams::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn check_pair(p: f64, mu: f64) -> Result<(), HarnessError> {
    check_exponents(p, mu).map_err(|e| invalid(e.to_string()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| invalid(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Resolutions of a sweep: `m, 2m, …`.
    pub fn resolutions(&self) -> Vec<usize> {
        (0..self.refinement_levels)
            .map(|k| self.resolution << k)
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} is not {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.dimension != 2 && self.dimension != 3 {
            return Err(invalid(format!("dimension {} not in {{2, 3}}", self.dimension)));
        }
        if self.components == 0 {
            return Err(invalid("components must be positive"));
        }
        if self.resolution < 8 {
            return Err(invalid(format!("resolution {} below 8", self.resolution)));
        }
        if self.refinement_levels == 0 {
            return Err(invalid("refinement_levels must be positive"));
        }
        self.bounds
            .check_feasible()
            .map_err(|e| invalid(e.to_string()))?;
        for e in self
            .exponents
            .iter()
            .chain(&self.existence.exponents)
            .chain(&self.comparison.exponents)
        {
            check_pair(e.p, e.mu)?;
        }
        check_pair(self.good_lambda.p, self.good_lambda.mu)?;
        check_pair(self.solve.p, self.solve.mu)?;
        for p in &self.algebra.p_values {
            for mu in &self.algebra.mu_values {
                check_pair(*p, *mu)?;
            }
        }
        if self.algebra.estimation_samples < crate::algebra::MIN_SAMPLES {
            return Err(invalid(format!(
                "estimation_samples below {}",
                crate::algebra::MIN_SAMPLES
            )));
        }
        let slack = &self.slack;
        if !(slack.boundedness_cap > 0.0
            && slack.refinement_factor >= 1.0
            && slack.uniqueness_factor > 0.0
            && slack.cross_check >= 0.0)
        {
            return Err(invalid(format!("invalid slack {slack:?}")));
        }
        for case in &self.cz.cases {
            if case.q.is_some() == case.q_over_p.is_some() {
                return Err(invalid("a cz case needs exactly one of q, q_over_p"));
            }
            if !(case.beta >= 0.0 && case.beta < self.dimension as f64) {
                return Err(invalid(format!("beta {} outside [0, n)", case.beta)));
            }
            for e in &self.exponents {
                if !(case.q_for(e.p) > 1.0) {
                    return Err(invalid(format!("cz exponent q must exceed 1 in {case:?}")));
                }
            }
        }
        for case in &self.morrey.cases {
            if !(case.q > 1.0 && case.q <= case.s && case.s.is_finite()) {
                return Err(invalid(format!("morrey case needs 1 < q <= s, got {case:?}")));
            }
        }
        let gl = &self.good_lambda;
        if !(gl.eps > 0.0 && gl.eps < 1.0 && gl.c > 0.0) {
            return Err(invalid("good_lambda needs 0 < eps < 1 and c > 0"));
        }
        if gl.sigma_exponents.iter().any(|&k| k < 0) {
            return Err(invalid("sigma = 2^-k needs k >= 0"));
        }
        if gl.lambda_count == 0 || !(gl.lambda_floor > 0.0 && gl.lambda_floor < 1.0) {
            return Err(invalid("good_lambda needs lambda_count > 0 and 0 < lambda_floor < 1"));
        }
        if !(gl.beta >= 0.0 && gl.beta < self.dimension as f64) {
            return Err(invalid(format!("beta {} outside [0, n)", gl.beta)));
        }
        if self.maximal.lambda_count == 0 || self.maximal.random_fields == 0 {
            return Err(invalid("maximal sweeps need positive counts"));
        }
        if self.maximal.layer_cake_q.iter().any(|&q| !(q > 1.0)) {
            return Err(invalid("layer-cake exponents must exceed 1"));
        }
        let cmp = &self.comparison;
        if !(cmp.xi > 0.0 && 8.0 * cmp.xi < 1.0) {
            return Err(invalid("comparison balls of radius 4xi must fit inside the unit box"));
        }
        if cmp.source_center.len() != self.dimension {
            return Err(invalid("comparison source_center has the wrong dimension"));
        }
        if self.existence.trials < 2 {
            return Err(invalid("uniqueness needs at least two trials"));
        }
        for choice in std::iter::once(&self.coefficient)
            .chain(&self.existence.coefficients)
            .chain(std::iter::once(&gl.coefficient))
        {
            choice.validate(self.resolution)?;
        }
        for f in self.families.iter().chain([&gl.family, &self.solve.family]) {
            f.validate(self.resolution)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"schema_version": 1, "experiment": "good_lambda", "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.experiment, ExperimentId::GoodLambda);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.resolution, 32);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "{",
            r#"{"schema_version": 2}"#,
            r#"{"unknown_field": 1}"#,
            r#"{"dimension": 4}"#,
            r#"{"exponents": [{"p": 1.0, "mu": 0.0}]}"#,
            r#"{"morrey": {"cases": [{"q": 4.0, "s": 2.0}]}}"#,
            r#"{"cz": {"cases": [{"beta": 0.0}]}}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::from_json(text), Err(HarnessError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn cz_case_exponents() {
        let c = CzCase {
            q: None,
            q_over_p: Some(2.0),
            beta: 0.0,
        };
        assert_eq!(c.q_for(1.5), 3.0);
        assert_eq!(c.label(), "q=2p,beta=0");
    }
}
