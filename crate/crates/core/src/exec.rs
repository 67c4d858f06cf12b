//! Data-parallel map helpers.
//!
//! With the `parallel` feature (default) indexed work fans out over rayon;
//! without it the same code path runs sequentially. The `_sequential`
//! variants are always compiled so results can be cross-checked and
//! benchmarked against the parallel path in the same build.

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_sequential(n, f)
}

/// Sequential counterpart of [`map_indexed`]; always available.
pub fn map_indexed_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let par = map_indexed(100, |i| i * i);
        let seq = map_indexed_sequential(100, |i| i * i);
        assert_eq!(par, seq);
    }
}
