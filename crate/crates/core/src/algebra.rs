//! Pointwise complex operator algebra.
//!
//! A [`ComplexMat`] is an `N × n` complex matrix stored row-major: `N`
//! components, `n` space directions. The flux map is
//! `V(η) = (μ² + |η|²)^{(p−2)/2} η`. The real embeddings [`hat`] and
//! [`tilde`] turn complex pairings into real Frobenius products, and the
//! oracles at the bottom of the file check the monotonicity, sector and
//! accretivity inequalities pair by pair.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Sub};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack applied to every pass/fail comparison.
pub const REL_SLACK: f64 = 1e-9;

/// Smallest accepted `sample_count` for [`estimate_c1_c2`].
pub const MIN_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("constants cache i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("constants cache format: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AlgebraError>;

pub fn check_exponents(p: f64, mu: f64) -> Result<()> {
    if !(p.is_finite() && p > 1.0) {
        return Err(AlgebraError::InvalidInput(format!(
            "exponent p = {p} must be finite and > 1"
        )));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(AlgebraError::InvalidInput(format!(
            "degeneracy mu = {mu} must lie in [0, 1]"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexMat {
    rows: usize,
    cols: usize,
    entries: Vec<Complex64>,
}

impl ComplexMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        ComplexMat {
            rows,
            cols,
            entries: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, entries: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AlgebraError::InvalidInput(
                "matrix dimensions must be positive".into(),
            ));
        }
        if entries.len() != rows * cols {
            return Err(AlgebraError::InvalidInput(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(ComplexMat {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_real(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::from_vec(
            rows,
            cols,
            values.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        )
    }

    /// Inverse of [`hat`]: `values` is the row-major `2N × n` stack `[Re; Im]`.
    pub fn from_hat(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        let m = rows * cols;
        if values.len() != 2 * m {
            return Err(AlgebraError::InvalidInput(format!(
                "{} values supplied for a {}x{cols} real stack",
                values.len(),
                2 * rows
            )));
        }
        Self::from_vec(
            rows,
            cols,
            (0..m)
                .map(|k| Complex64::new(values[k], values[m + k]))
                .collect(),
        )
    }

    pub fn from_fn<F: FnMut(usize, usize) -> Complex64>(
        rows: usize,
        cols: usize,
        mut f: F,
    ) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.entries[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Complex64] {
        &mut self.entries
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.entries[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.entries[r * self.cols + c] = v;
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.entries)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        ComplexMat {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn checked_sub(&self, other: &ComplexMat) -> Result<Self> {
        self.same_dims(other)?;
        Ok(self - other)
    }

    pub fn checked_add(&self, other: &ComplexMat) -> Result<Self> {
        self.same_dims(other)?;
        Ok(self + other)
    }

    fn same_dims(&self, other: &ComplexMat) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(AlgebraError::DimensionMismatch(
                self.rows, self.cols, other.rows, other.cols,
            ));
        }
        Ok(())
    }
}

impl Sub for &ComplexMat {
    type Output = ComplexMat;
    fn sub(self, rhs: &ComplexMat) -> ComplexMat {
        assert_eq!(self.dims(), rhs.dims(), "dimension mismatch");
        let entries = self
            .entries
            .iter()
            .zip(&rhs.entries)
            .map(|(a, b)| a - b)
            .collect();
        ComplexMat {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }
}

impl Add for &ComplexMat {
    type Output = ComplexMat;
    fn add(self, rhs: &ComplexMat) -> ComplexMat {
        assert_eq!(self.dims(), rhs.dims(), "dimension mismatch");
        let entries = self
            .entries
            .iter()
            .zip(&rhs.entries)
            .map(|(a, b)| a + b)
            .collect();
        ComplexMat {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }
}

impl Mul<Complex64> for &ComplexMat {
    type Output = ComplexMat;
    fn mul(self, s: Complex64) -> ComplexMat {
        self.scaled(s)
    }
}

impl Mul<f64> for &ComplexMat {
    type Output = ComplexMat;
    fn mul(self, s: f64) -> ComplexMat {
        self.scaled(Complex64::new(s, 0.0))
    }
}

// Slice kernels, shared with the solver's per-cell loops.

pub fn norm_sqr(z: &[Complex64]) -> f64 {
    z.iter().map(|c| c.norm_sqr()).sum()
}

/// Scalar factor `(μ² + |η|²)^{(p−2)/2}` of the flux map, given `|η|²`.
///
/// At the degenerate point (`μ = 0`, `η = 0`) the factor is returned as
/// zero, so `V(0) = 0` for every `p`. The Jacobian of `V` is unbounded there
/// when `p < 2`.
pub fn flux_factor(norm_sqr: f64, p: f64, mu: f64) -> f64 {
    if p == 2.0 {
        return 1.0;
    }
    let base = mu * mu + norm_sqr;
    if base == 0.0 {
        0.0
    } else {
        base.powf(0.5 * (p - 2.0))
    }
}

/// `Σ_k y_k · conj(z_k)`.
pub fn cinner_slices(y: &[Complex64], z: &[Complex64]) -> Complex64 {
    y.iter().zip(z).map(|(a, b)| a * b.conj()).sum()
}

pub fn vpmu(eta: &ComplexMat, p: f64, mu: f64) -> Result<ComplexMat> {
    check_exponents(p, mu)?;
    if !eta.is_finite() {
        return Err(AlgebraError::InvalidInput(
            "non-finite entry in argument of V".into(),
        ));
    }
    let f = flux_factor(eta.norm_sqr(), p, mu);
    Ok(eta * f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    Hat,
    Tilde,
}

/// Real `2N × n` matrix obtained from a complex `N × n` one.
#[derive(Clone, Debug, PartialEq)]
pub struct RealEmbedding {
    flavor: Flavor,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl RealEmbedding {
    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    /// Number of real rows, `2N`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Frobenius product `A : B`.
    pub fn frob(&self, other: &RealEmbedding) -> Result<f64> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(AlgebraError::DimensionMismatch(
                self.rows, self.cols, other.rows, other.cols,
            ));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// `[Re Z; Im Z]`.
pub fn hat(z: &ComplexMat) -> RealEmbedding {
    let mut values: Vec<f64> = z.entries.iter().map(|c| c.re).collect();
    values.extend(z.entries.iter().map(|c| c.im));
    RealEmbedding {
        flavor: Flavor::Hat,
        rows: 2 * z.rows,
        cols: z.cols,
        values,
    }
}

/// `[−Im Z; Re Z]`.
pub fn tilde(z: &ComplexMat) -> RealEmbedding {
    let mut values: Vec<f64> = z.entries.iter().map(|c| -c.im).collect();
    values.extend(z.entries.iter().map(|c| c.re));
    RealEmbedding {
        flavor: Flavor::Tilde,
        rows: 2 * z.rows,
        cols: z.cols,
        values,
    }
}

/// Complex inner product `hat(Y):hat(Z) + i·hat(Y):tilde(Z)`, evaluated as
/// `Σ y·conj(z)`.
pub fn cinner(y: &ComplexMat, z: &ComplexMat) -> Result<Complex64> {
    y.same_dims(z)?;
    Ok(cinner_slices(&y.entries, &z.entries))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    Sampled { sample_count: usize, seed: u64 },
}

/// The two constants of the monotonicity band of `V`, tagged with where they
/// came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityConstants {
    pub c1: f64,
    pub c2: f64,
    pub p: f64,
    pub mu: f64,
    pub dims: (usize, usize),
    pub provenance: Provenance,
}

impl EllipticityConstants {
    pub fn new(
        c1: f64,
        c2: f64,
        p: f64,
        mu: f64,
        dims: (usize, usize),
        provenance: Provenance,
    ) -> Result<Self> {
        check_exponents(p, mu)?;
        if !(c1 > 0.0 && c1 <= c2 && c2.is_finite()) {
            return Err(AlgebraError::InvalidInput(format!(
                "constants must satisfy 0 < c1 <= c2, got {c1}, {c2}"
            )));
        }
        Ok(EllipticityConstants {
            c1,
            c2,
            p,
            mu,
            dims,
            provenance,
        })
    }
}

/// Monotonicity ratio of a real pair, or `None` when undefined or not finite.
pub fn monotonicity_ratio(y: &[f64], z: &[f64], p: f64, mu: f64) -> Option<f64> {
    let ny: f64 = y.iter().map(|v| v * v).sum();
    let nz: f64 = z.iter().map(|v| v * v).sum();
    let fy = flux_factor(ny, p, mu);
    let fz = flux_factor(nz, p, mu);
    let mut num = 0.0;
    let mut dd = 0.0;
    for (a, b) in y.iter().zip(z) {
        let d = a - b;
        num += (fy * a - fz * b) * d;
        dd += d * d;
    }
    if !(dd > 0.0) {
        return None;
    }
    let weight = if p == 2.0 {
        1.0
    } else {
        (mu * mu + ny + nz).powf(0.5 * (p - 2.0))
    };
    let q = weight * dd;
    let r = num / q;
    (q > 0.0 && r.is_finite()).then_some(r)
}

const MIN_RADIUS: f64 = 1e-6;
const MAX_RADIUS: f64 = 1e6;
const MIN_SEPARATION: f64 = 1e-5;
const STRATA: usize = 7;

/// Stratified sampler of real pairs in `ℝ^{2N×n}`.
///
/// Strata: independent uniform directions with log-uniform radii in
/// `[1e-3, 1e3]`, Cauchy-tailed radii, near-collinear pairs, radial pairs
/// `z = t·y`, equal-radius pairs, antipodal pairs, and radii around `μ`.
#[derive(Clone, Copy, Debug)]
pub struct PairSampler {
    dim: usize,
    mu: f64,
}

impl PairSampler {
    pub fn new(rows: usize, cols: usize, mu: f64) -> Self {
        PairSampler {
            dim: 2 * rows * cols,
            mu,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        match rng.random_range(0..STRATA) {
            0 => {
                let (r1, r2) = (log_uniform(rng, -3.0, 3.0), log_uniform(rng, -3.0, 3.0));
                (self.sphere(rng, r1), self.sphere(rng, r2))
            }
            1 => {
                let cauchy = Cauchy::new(0.0, 1.0).unwrap();
                let r1 = f64::abs(cauchy.sample(rng)).clamp(MIN_RADIUS, MAX_RADIUS);
                let r2 = f64::abs(cauchy.sample(rng)).clamp(MIN_RADIUS, MAX_RADIUS);
                (self.sphere(rng, r1), self.sphere(rng, r2))
            }
            2 => {
                let r = log_uniform(rng, -3.0, 3.0);
                let y = self.sphere(rng, r);
                let s = log_uniform(rng, MIN_SEPARATION.log10(), 0.0);
                let e = self.sphere(rng, s * r);
                let z = y.iter().zip(&e).map(|(a, b)| a + b).collect();
                (y, z)
            }
            3 => {
                let r = log_uniform(rng, -3.0, 3.0);
                let y = self.sphere(rng, r);
                let t = if rng.random_bool(0.5) {
                    log_uniform(rng, -2.0, 2.0)
                } else {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    1.0 + sign * log_uniform(rng, MIN_SEPARATION.log10(), -0.5)
                };
                let z = y.iter().map(|a| t * a).collect();
                (y, z)
            }
            4 => {
                let r = log_uniform(rng, -3.0, 3.0);
                (self.sphere(rng, r), self.sphere(rng, r))
            }
            5 => {
                let r = log_uniform(rng, -3.0, 3.0);
                let y = self.sphere(rng, r);
                let t = if rng.random_bool(0.25) {
                    1.0
                } else {
                    log_uniform(rng, -1.0, 1.0)
                };
                let z = y.iter().map(|a| -t * a).collect();
                (y, z)
            }
            _ => {
                let scale = self.mu.max(1e-3);
                let (r1, r2) = (
                    scale * log_uniform(rng, -1.0, 1.0),
                    scale * log_uniform(rng, -1.0, 1.0),
                );
                (self.sphere(rng, r1), self.sphere(rng, r2))
            }
        }
    }

    /// A sampled real pair mapped back to complex `N × n` matrices.
    pub fn sample_complex<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        rows: usize,
        cols: usize,
    ) -> (ComplexMat, ComplexMat) {
        assert_eq!(2 * rows * cols, self.dim, "sampler dimension mismatch");
        let (y, z) = self.sample(rng);
        (
            ComplexMat::from_hat(rows, cols, &y).unwrap(),
            ComplexMat::from_hat(rows, cols, &z).unwrap(),
        )
    }

    fn sphere<R: Rng + ?Sized>(&self, rng: &mut R, radius: f64) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = l2(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x * radius / n).collect();
            }
        }
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo..hi))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

const CHUNK: usize = 1 << 16;
const REFINE_STEPS: usize = 4000;
const REFINE_STREAM_OFFSET: u64 = 1 << 32;

type Pair = (Vec<f64>, Vec<f64>);

struct ChunkExtremes {
    finite: usize,
    min: Option<(f64, Pair)>,
    max: Option<(f64, Pair)>,
}

/// Estimate the monotonicity constants by sampling.
///
/// `p = 2` returns the analytic values `c1 = c2 = 1`. Otherwise `c1`/`c2` are
/// the smallest/largest ratio over `sample_count` stratified pairs, after a
/// local hill-climb started from the extreme pair of each chunk.
pub fn estimate_c1_c2(
    p: f64,
    mu: f64,
    dims: (usize, usize),
    sample_count: usize,
    seed: u64,
) -> Result<EllipticityConstants> {
    check_exponents(p, mu)?;
    if sample_count < MIN_SAMPLES {
        return Err(AlgebraError::InvalidInput(format!(
            "sample_count {sample_count} below the minimum {MIN_SAMPLES}"
        )));
    }
    if p == 2.0 {
        return EllipticityConstants::new(1.0, 1.0, p, mu, dims, Provenance::Analytic);
    }
    let (c1, c2) = sampled_ratio_range(p, mu, dims, sample_count, seed)?;
    EllipticityConstants::new(
        c1,
        c2,
        p,
        mu,
        dims,
        Provenance::Sampled { sample_count, seed },
    )
}

/// Sampled `(min, max)` of the monotonicity ratio; never short-circuits,
/// including for `p = 2`.
pub fn sampled_ratio_range(
    p: f64,
    mu: f64,
    dims: (usize, usize),
    sample_count: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_exponents(p, mu)?;
    if dims.0 == 0 || dims.1 == 0 {
        return Err(AlgebraError::InvalidInput(
            "matrix dimensions must be positive".into(),
        ));
    }
    let sampler = PairSampler::new(dims.0, dims.1, mu);
    let chunks = sample_count.div_ceil(CHUNK);
    let per_chunk: Vec<ChunkExtremes> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(sample_count - c * CHUNK);
            let mut ext = ChunkExtremes {
                finite: 0,
                min: None,
                max: None,
            };
            for _ in 0..n {
                let (y, z) = sampler.sample(&mut rng);
                let Some(r) = monotonicity_ratio(&y, &z, p, mu) else {
                    continue;
                };
                ext.finite += 1;
                if ext.min.as_ref().is_none_or(|(m, _)| r < *m) {
                    ext.min = Some((r, (y.clone(), z.clone())));
                }
                if ext.max.as_ref().is_none_or(|(m, _)| r > *m) {
                    ext.max = Some((r, (y, z)));
                }
            }
            ext
        })
        .collect();
    if per_chunk.iter().all(|e| e.finite == 0) {
        return Err(AlgebraError::Numeric(
            "every sampled ratio was non-finite".into(),
        ));
    }
    let starts: Vec<(usize, f64, Pair)> = per_chunk
        .into_iter()
        .enumerate()
        .flat_map(|(c, e)| {
            let lo = e.min.map(|(r, pair)| (2 * c, r, pair));
            let hi = e.max.map(|(r, pair)| (2 * c + 1, -r, pair));
            lo.into_iter().chain(hi)
        })
        .collect();
    let refined: Vec<(usize, f64)> = starts
        .into_par_iter()
        .map(|(tag, _, pair)| {
            let sign = if tag % 2 == 0 { -1.0 } else { 1.0 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(REFINE_STREAM_OFFSET + tag as u64);
            (tag, refine(pair, p, mu, sign, &sampler, &mut rng))
        })
        .collect();
    let mut c1 = f64::INFINITY;
    let mut c2 = f64::NEG_INFINITY;
    for (tag, r) in refined {
        if tag % 2 == 0 {
            c1 = c1.min(r);
        } else {
            c2 = c2.max(r);
        }
    }
    Ok((c1, c2))
}

fn admissible(y: &[f64], z: &[f64]) -> bool {
    let m = l2(y).max(l2(z));
    let sep: f64 = y
        .iter()
        .zip(z)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    (MIN_RADIUS..=MAX_RADIUS).contains(&m) && sep >= MIN_SEPARATION * m
}

/// (1+1) evolution strategy pushing `sign·ratio` upward; returns the ratio.
fn refine(
    pair: Pair,
    p: f64,
    mu: f64,
    sign: f64,
    sampler: &PairSampler,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (mut y, mut z) = pair;
    let mut best = monotonicity_ratio(&y, &z, p, mu).expect("start pair has a finite ratio");
    let mut step = 1e-2;
    let shrink = 1.5f64.powf(-0.25);
    for _ in 0..REFINE_STEPS {
        let scale = l2(&y).max(l2(&z));
        let mut ny = y.clone();
        let mut nz = z.clone();
        let moved = rng.random_range(0..3);
        for k in 0..sampler.dim {
            let (gy, gz): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
            if moved != 1 {
                ny[k] += step * scale * gy;
            }
            if moved != 0 {
                nz[k] += step * scale * gz;
            }
        }
        let candidate = admissible(&ny, &nz)
            .then(|| monotonicity_ratio(&ny, &nz, p, mu))
            .flatten();
        match candidate {
            Some(r) if sign * r > sign * best => {
                best = r;
                y = ny;
                z = nz;
                step = (step * 1.5).min(0.2);
            }
            _ => step = (step * shrink).max(1e-12),
        }
    }
    best
}

/// `sqrt((c2/c1)² − 1)`.
pub fn c0_from(c: &EllipticityConstants) -> Result<f64> {
    if !(c.c1 > 0.0) {
        return Err(AlgebraError::InvalidInput(format!(
            "c1 = {} must be positive",
            c.c1
        )));
    }
    if c.c1 > c.c2 {
        return Err(AlgebraError::InvalidInput(format!(
            "c1 = {} exceeds c2 = {}",
            c.c1, c.c2
        )));
    }
    let ratio = c.c2 / c.c1;
    Ok((ratio * ratio - 1.0).max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BandCheck {
    pub re_lhs: f64,
    pub re_bound: f64,
    pub im_lhs: f64,
    pub im_bound: f64,
    pub pass: bool,
}

/// Real and imaginary bounds for `z = ⟨V(η₁) − V(η₂), η₁ − η₂⟩`:
/// `Re z ≥ c1·Q` and `|Im z| ≤ sqrt(c2² − c1²)·Q`, with
/// `Q = (μ² + |η₁|² + |η₂|²)^{(p−2)/2} |η₁ − η₂|²`.
///
/// Both bounds are compared with relative slack [`REL_SLACK`]; when the
/// imaginary bound is zero the imaginary part must vanish exactly.
pub fn check_band(
    eta1: &ComplexMat,
    eta2: &ComplexMat,
    p: f64,
    mu: f64,
    c: &EllipticityConstants,
) -> Result<BandCheck> {
    let d = eta1.checked_sub(eta2)?;
    if d.is_zero() {
        return Err(AlgebraError::Precondition(
            "the two arguments coincide".into(),
        ));
    }
    let v = vpmu(eta1, p, mu)?.checked_sub(&vpmu(eta2, p, mu)?)?;
    let z = cinner(&v, &d)?;
    let weight = if p == 2.0 {
        1.0
    } else {
        (mu * mu + eta1.norm_sqr() + eta2.norm_sqr()).powf(0.5 * (p - 2.0))
    };
    let q = weight * d.norm_sqr();
    let re_bound = c.c1 * q;
    let im_bound = (c.c2 * c.c2 - c.c1 * c.c1).max(0.0).sqrt() * q;
    let pass = z.re >= re_bound * (1.0 - REL_SLACK) && z.im.abs() <= im_bound * (1.0 + REL_SLACK);
    Ok(BandCheck {
        re_lhs: z.re,
        re_bound,
        im_lhs: z.im,
        im_bound,
        pass,
    })
}

/// `|Im z| ≤ c0·Re z`.
pub fn sector_of(z: Complex64, c0: f64) -> bool {
    z.im.abs() <= c0 * z.re
}

/// Margin of the coefficient sector condition, `Re a − c0·|Im a| − γ₀`.
pub fn sector_margin(a: Complex64, c0: f64, gamma0: f64) -> f64 {
    a.re - c0 * a.im.abs() - gamma0
}

/// Constant `K` in `Re⟨a V(η), η⟩ ≥ K (μ² + |η|²)^{(p−2)/2} |η|²` for
/// coefficients in the sector with parameter `γ₀`.
///
/// `⟨aV(η), η⟩ = a·(μ² + |η|²)^{(p−2)/2}|η|²` and `Re a > γ₀` inside the
/// sector, so `K = γ₀`.
pub fn accretivity_constant(gamma0: f64) -> f64 {
    gamma0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AccretivityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn accretivity_lower(
    a_val: Complex64,
    eta: &ComplexMat,
    p: f64,
    mu: f64,
    gamma0: f64,
    c: &EllipticityConstants,
) -> Result<AccretivityCheck> {
    let c0 = c0_from(c)?;
    if !(sector_margin(a_val, c0, gamma0) > 0.0) {
        return Err(AlgebraError::Precondition(format!(
            "coefficient {a_val} violates Re a - {c0}|Im a| > {gamma0}"
        )));
    }
    let v = vpmu(eta, p, mu)?;
    let lhs = cinner(&(&v * a_val), eta)?.re;
    let rhs = accretivity_constant(gamma0) * flux_factor(eta.norm_sqr(), p, mu) * eta.norm_sqr();
    Ok(AccretivityCheck {
        lhs,
        rhs,
        pass: lhs >= rhs * (1.0 - REL_SLACK),
    })
}

/// JSON cache of estimated constants keyed by `"p,mu,N,n,sample_count,seed"`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantsCache {
    entries: BTreeMap<String, EllipticityConstants>,
}

impl ConstantsCache {
    pub fn key(p: f64, mu: f64, dims: (usize, usize), sample_count: usize, seed: u64) -> String {
        format!("{p},{mu},{},{},{sample_count},{seed}", dims.0, dims.1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&EllipticityConstants> {
        self.entries.get(key)
    }

    pub fn get_or_estimate(
        &mut self,
        p: f64,
        mu: f64,
        dims: (usize, usize),
        sample_count: usize,
        seed: u64,
    ) -> Result<EllipticityConstants> {
        let key = Self::key(p, mu, dims, sample_count, seed);
        if let Some(c) = self.entries.get(&key) {
            return Ok(c.clone());
        }
        let c = estimate_c1_c2(p, mu, dims, sample_count, seed)?;
        self.entries.insert(key, c.clone());
        Ok(c)
    }

    /// Loads a cache file; a missing file yields an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMat {
        ComplexMat::from_fn(rows, cols, |_, _| {
            c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
        })
    }

    #[test]
    fn vpmu_p2_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eta = random_mat(&mut rng, 2, 3);
        assert_eq!(vpmu(&eta, 2.0, 0.7).unwrap(), eta);
    }

    #[test]
    fn vpmu_direct_evaluation() {
        let eta = ComplexMat::from_real(1, 1, &[2.0]).unwrap();
        assert_eq!(vpmu(&eta, 4.0, 0.0).unwrap().get(0, 0), c(8.0, 0.0));
    }

    #[test]
    fn vpmu_degenerate_point_is_zero() {
        let zero = ComplexMat::zeros(2, 2);
        assert!(vpmu(&zero, 1.5, 1.0).unwrap().is_zero());
        assert!(vpmu(&zero, 1.5, 0.0).unwrap().is_zero());
    }

    #[test]
    fn vpmu_rejects_bad_input() {
        let mut eta = ComplexMat::zeros(1, 2);
        assert!(vpmu(&eta, 1.0, 0.0).is_err());
        assert!(vpmu(&eta, 2.0, 1.5).is_err());
        eta.set(0, 1, c(f64::NAN, 0.0));
        assert!(matches!(
            vpmu(&eta, 3.0, 0.0),
            Err(AlgebraError::InvalidInput(_))
        ));
    }

    #[test]
    fn vpmu_modulus_and_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(p, mu) in &[(1.5, 0.0), (3.0, 0.5), (4.0, 1.0)] {
            let eta = random_mat(&mut rng, 2, 2);
            let v = vpmu(&eta, p, mu).unwrap();
            let expect = (mu * mu + eta.norm_sqr()).powf((p - 2.0) / 2.0) * eta.norm();
            assert!((v.norm() - expect).abs() <= 1e-14 * expect);
            let s = v.norm() / eta.norm();
            for (a, b) in hat(&v).values().iter().zip(hat(&eta).values()) {
                assert!((a - s * b).abs() <= 1e-14 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn embeddings_of_real_matrix() {
        let z = ComplexMat::from_real(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(hat(&z).values(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            tilde(&z).values(),
            &[-0.0, -0.0, -0.0, -0.0, 1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(hat(&z).rows(), 4);
    }

    #[test]
    fn embeddings_orthogonal_and_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let z = random_mat(&mut rng, 2, 3);
            let (h, t) = (hat(&z), tilde(&z));
            assert!(h.frob(&t).unwrap().abs() <= 1e-14 * z.norm_sqr());
            assert!((h.norm() - z.norm()).abs() <= 1e-14 * z.norm());
            assert!((t.norm() - z.norm()).abs() <= 1e-14 * z.norm());
            assert_eq!(ComplexMat::from_hat(2, 3, h.values()).unwrap(), z);
        }
    }

    #[test]
    fn cinner_matches_embedding_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let y = random_mat(&mut rng, 2, 2);
            let z = random_mat(&mut rng, 2, 2);
            let direct = cinner(&y, &z).unwrap();
            let re = hat(&y).frob(&hat(&z)).unwrap();
            let im = hat(&y).frob(&tilde(&z)).unwrap();
            assert!((direct.re - re).abs() <= 1e-12 && (direct.im - im).abs() <= 1e-12);
        }
    }

    #[test]
    fn cinner_basic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random_mat(&mut rng, 1, 2);
        let zz = cinner(&z, &z).unwrap();
        assert_eq!(zz.im, 0.0);
        assert!((zz.re - z.norm_sqr()).abs() <= 1e-14 * zz.re);

        let a = ComplexMat::from_real(1, 2, &[1.0, -2.0]).unwrap();
        let b = ComplexMat::from_real(1, 2, &[3.0, 0.5]).unwrap();
        assert_eq!(cinner(&a, &b).unwrap(), c(2.0, 0.0));

        assert!(cinner(&a, &ComplexMat::zeros(2, 2)).is_err());
    }

    #[test]
    fn cinner_of_rotated_argument_hand_case() {
        // z = 3 + 4i, y = iz = -4 + 3i.
        // hat(y):hat(z) = -12 + 12 = 0; hat(y):tilde(z) = (-4)(-4) + 3·3 = 25.
        let z = ComplexMat::from_vec(1, 1, vec![c(3.0, 4.0)]).unwrap();
        let y = z.scaled(c(0.0, 1.0));
        assert_eq!(cinner(&y, &z).unwrap(), c(0.0, 25.0));
    }

    #[test]
    fn estimate_rejects_small_sample_count() {
        assert!(estimate_c1_c2(3.0, 0.0, (1, 2), 100, 0).is_err());
    }

    #[test]
    fn estimate_p2_is_analytic_and_sampling_agrees() {
        let c = estimate_c1_c2(2.0, 0.3, (1, 2), MIN_SAMPLES, 9).unwrap();
        assert_eq!(
            (c.c1, c.c2, &c.provenance),
            (1.0, 1.0, &Provenance::Analytic)
        );
        let (lo, hi) = sampled_ratio_range(2.0, 0.3, (1, 2), MIN_SAMPLES, 9).unwrap();
        assert!((lo - 1.0).abs() <= 1e-12 && (hi - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn estimate_is_deterministic() {
        let a = estimate_c1_c2(3.0, 0.5, (1, 2), 20_000, 11).unwrap();
        let b = estimate_c1_c2(3.0, 0.5, (1, 2), 20_000, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn c0_formula() {
        let mk = |c1, c2| {
            EllipticityConstants::new(c1, c2, 3.0, 0.0, (1, 2), Provenance::Analytic).unwrap()
        };
        assert_eq!(c0_from(&mk(0.7, 0.7)).unwrap(), 0.0);
        assert!((c0_from(&mk(0.5, 1.0)).unwrap() - 3f64.sqrt()).abs() <= 1e-15);
        let bad = EllipticityConstants {
            c1: 0.0,
            ..mk(0.5, 1.0)
        };
        assert!(c0_from(&bad).is_err());
    }

    #[test]
    fn band_trivial_base_point() {
        let one =
            EllipticityConstants::new(1.0, 1.0, 2.0, 0.0, (1, 2), Provenance::Analytic).unwrap();
        let eta1 = ComplexMat::from_real(1, 2, &[1.5, -0.5]).unwrap();
        let r = check_band(&eta1, &ComplexMat::zeros(1, 2), 2.0, 0.0, &one).unwrap();
        assert_eq!(r.re_lhs, eta1.norm_sqr());
        assert_eq!(r.im_lhs, 0.0);
        assert!(r.pass);
        assert!(check_band(&eta1, &eta1, 2.0, 0.0, &one).is_err());
    }

    #[test]
    fn band_p2_imaginary_part_exactly_zero() {
        let one =
            EllipticityConstants::new(1.0, 1.0, 2.0, 0.5, (2, 2), Provenance::Analytic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let (a, b) = (random_mat(&mut rng, 2, 2), random_mat(&mut rng, 2, 2));
            let r = check_band(&a, &b, 2.0, 0.5, &one).unwrap();
            assert_eq!(r.im_bound, 0.0);
            assert_eq!(r.im_lhs, 0.0);
            assert!(r.pass);
        }
    }

    #[test]
    fn sector_examples() {
        assert!(sector_of(c(2.0, 0.0), 0.0));
        assert!(sector_of(c(1.0, 1.0), 1.0));
        assert!(!sector_of(c(1.0, 1.0), 0.5));
    }

    #[test]
    fn accretivity_examples() {
        let one =
            EllipticityConstants::new(1.0, 1.0, 2.0, 0.0, (1, 2), Provenance::Analytic).unwrap();
        let eta = ComplexMat::from_real(1, 2, &[0.3, 0.4]).unwrap();
        let r = accretivity_lower(c(1.0, 0.0), &eta, 2.0, 0.0, 0.5, &one).unwrap();
        assert!((r.lhs - 0.25).abs() <= 1e-15 && r.pass);
        let z =
            accretivity_lower(c(1.0, 0.0), &ComplexMat::zeros(1, 2), 2.0, 0.0, 0.5, &one).unwrap();
        assert_eq!((z.lhs, z.rhs, z.pass), (0.0, 0.0, true));
        let wide =
            EllipticityConstants::new(0.5, 1.0, 3.0, 0.0, (1, 2), Provenance::Analytic).unwrap();
        assert!(matches!(
            accretivity_lower(c(1.0, 1.0), &eta, 3.0, 0.0, 0.1, &wide),
            Err(AlgebraError::Precondition(_))
        ));
    }

    #[test]
    fn sampler_respects_separation_floor() {
        let s = PairSampler::new(1, 2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let (y, z) = s.sample(&mut rng);
            assert_eq!(y.len(), 4);
            assert!(y.iter().chain(&z).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("constants.json");
        let mut cache = ConstantsCache::load(&path).unwrap();
        assert!(cache.is_empty());
        let c = cache
            .get_or_estimate(3.0, 0.0, (1, 2), MIN_SAMPLES, 1)
            .unwrap();
        cache.save(&path).unwrap();
        let back = ConstantsCache::load(&path).unwrap();
        assert_eq!(
            back.get(&ConstantsCache::key(3.0, 0.0, (1, 2), MIN_SAMPLES, 1)),
            Some(&c)
        );
    }
}
