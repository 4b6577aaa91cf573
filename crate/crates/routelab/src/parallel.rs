//! Data-parallel batch helpers with a sequential fallback.
//!
//! `map_batch` fans independent per-item work across rayon when the
//! `parallel` feature is enabled and degrades to a plain iterator
//! otherwise. Results are collected in input order and any floating-point
//! reduction over them happens serially in the caller, so output bytes do
//! not depend on thread count or feature selection. `map_batch_seq` is
//! always sequential; the criterion bench compares the two.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_batch<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_batch<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Sequential reference path, kept available in all builds for benching.
pub fn map_batch_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let items: Vec<u64> = (0..4096).collect();
        let f = |x: &u64| (*x as f64).sqrt().sin();
        let par = map_batch(&items, f);
        let seq = map_batch_seq(&items, f);
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(seq.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
