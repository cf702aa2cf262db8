//! Data-parallel map helpers.
//!
//! The heavy loops in this crate (per-frame skinning, loss atoms, and
//! per-coordinate finite differences) are all independent maps over an index
//! range. With the `parallel` feature these run on rayon; without it they
//! fall back to plain loops. Results are always collected in index order and
//! reduced sequentially afterwards, so the two paths (and any thread count)
//! produce bit-identical floating point output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving index order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential twin of [`map_indexed`], available regardless of features.
/// Benchmarks use it to compare the two execution paths in one build.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Ordered sequential sum; the closing reduction for the map helpers.
pub fn sum_ordered(values: &[f64]) -> f64 {
    values.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.1).sin() / ((i + 1) as f64);
        let a = map_indexed(1000, f);
        let b = map_indexed_seq(1000, f);
        assert_eq!(a, b);
        assert_eq!(sum_ordered(&a).to_bits(), sum_ordered(&b).to_bits());
    }
}
