//! Banded symmetric positive definite storage and Cholesky factorization.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("entry ({0}, {1}) lies outside the band")]
    OutsideBand(usize, usize),
}

/// Lower band of a symmetric matrix: row `i` stores columns `i−bw ..= i`.
#[derive(Clone, Debug)]
pub struct SymBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBand {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` at `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) -> Result<(), LinalgError> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            return Err(LinalgError::OutsideBand(i, j));
        }
        let s = self.slot(i, j);
        self.data[s] += v;
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// `y = A x` for `m` interleaved right-hand sides (`x[i*m + r]`).
    pub fn mul(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.n * m];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.data[self.slot(i, j)];
                if a == 0.0 {
                    continue;
                }
                for r in 0..m {
                    y[i * m + r] += a * x[j * m + r];
                    if j != i {
                        y[j * m + r] += a * x[i * m + r];
                    }
                }
            }
        }
        y
    }

    pub fn factor(mut self) -> Result<BandCholesky, LinalgError> {
        let w = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(self.bw));
                let mut s = self.data[i * w + (j + self.bw - i)];
                let ri = i * w + self.bw - i;
                let rj = j * w + self.bw - j;
                for k in klo..j {
                    s -= self.data[ri + k] * self.data[rj + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(LinalgError::NotPositiveDefinite { row: i, pivot: s });
                    }
                    self.data[ri + i] = s.sqrt();
                } else {
                    self.data[ri + j] = s / self.data[rj + j];
                }
            }
        }
        Ok(BandCholesky { l: self })
    }
}

/// `A = L Lᵀ` with `L` stored in the band of a [`SymBand`].
#[derive(Clone, Debug)]
pub struct BandCholesky {
    l: SymBand,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.l.n
    }

    /// Solves `A X = B` in place for `m` interleaved right-hand sides.
    pub fn solve_in_place(&self, b: &mut [f64], m: usize) {
        let (n, bw) = (self.l.n, self.l.bw);
        let w = bw + 1;
        let d = &self.l.data;
        assert_eq!(b.len(), n * m);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            for k in lo..i {
                let l = d[ri + k];
                for r in 0..m {
                    b[i * m + r] -= l * b[k * m + r];
                }
            }
            let piv = d[ri + i];
            for r in 0..m {
                b[i * m + r] /= piv;
            }
        }
        for i in (0..n).rev() {
            let ri = i * w + bw - i;
            let piv = d[ri + i];
            for r in 0..m {
                b[i * m + r] /= piv;
            }
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                let l = d[ri + k];
                for r in 0..m {
                    b[k * m + r] -= l * b[i * m + r];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_tridiagonal_laplacian() {
        let n = 50;
        let mut a = SymBand::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0).unwrap();
            if i > 0 {
                a.add(i, i - 1, -1.0).unwrap();
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = a.mul(&x, 1);
        a.factor().unwrap().solve_in_place(&mut b, 1);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn random_banded_spd_multi_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, bw, m) = (80, 7, 3);
        let mut a = SymBand::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v = rng.random_range(-1.0..1.0);
                a.add(i, j, v).unwrap();
            }
        }
        for i in 0..n {
            a.add(i, i, 2.0 * bw as f64 + 1.0).unwrap();
        }
        let x: Vec<f64> = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b = a.mul(&x, m);
        a.factor().unwrap().solve_in_place(&mut b, m);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_indefinite_and_band_overflow() {
        let mut a = SymBand::zeros(3, 1);
        a.add(0, 0, 1.0).unwrap();
        a.add(1, 1, -1.0).unwrap();
        a.add(2, 2, 1.0).unwrap();
        assert!(matches!(
            a.clone().factor(),
            Err(LinalgError::NotPositiveDefinite { row: 1, .. })
        ));
        assert_eq!(a.add(2, 0, 1.0), Err(LinalgError::OutsideBand(2, 0)));
        assert_eq!(a.get(0, 2), 0.0);
    }
}
