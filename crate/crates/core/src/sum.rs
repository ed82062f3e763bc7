//! Fixed-order pairwise summation.
//!
//! Every reduction in the crate goes through these helpers so results do not
//! depend on thread count.

const BLOCK: usize = 64;

pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(i)` for `i in 0..len`.
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(len: usize, f: F) -> f64 {
    fn go<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= BLOCK {
            return (lo..hi).map(f).sum();
        }
        let mid = lo + (hi - lo) / 2;
        go(lo, mid, f) + go(mid, hi, f)
    }
    if len == 0 {
        return 0.0;
    }
    go(0, len, &f)
}
