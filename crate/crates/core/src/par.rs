//! Data-parallel helpers with a sequential fallback.
//!
//! Reductions are split into fixed-size chunks whose partial results are
//! merged in chunk order, so the floating-point result does not depend on the
//! number of worker threads or on whether the `parallel` feature is enabled.

/// Rows per reduction chunk.
pub const CHUNK_ROWS: usize = 2048;

/// Order-preserving map over a slice.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map(&idx, |&i| f(i))
}

/// Splits each `(group, len)` into chunks of [`CHUNK_ROWS`], evaluates `f` on
/// every chunk and folds the partials left to right with `merge`.
pub fn chunked_fold<A, F, M>(group_lens: &[usize], init: A, f: F, merge: M) -> A
where
    A: Send,
    F: Fn(usize, std::ops::Range<usize>) -> A + Sync + Send,
    M: Fn(&mut A, A),
{
    let mut jobs = Vec::new();
    for (g, &len) in group_lens.iter().enumerate() {
        let mut start = 0;
        while start < len {
            let end = (start + CHUNK_ROWS).min(len);
            jobs.push((g, start..end));
            start = end;
        }
    }
    let partials = map(&jobs, |(g, r)| f(*g, r.clone()));
    let mut acc = init;
    for p in partials {
        merge(&mut acc, p);
    }
    acc
}
