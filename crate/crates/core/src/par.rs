//! Row-chunked reductions with a fixed summation order.
//!
//! Rows are split into chunks of [`CHUNK`] rows. Each chunk is reduced
//! sequentially, and chunk partials are then folded left to right. The
//! parallel and sequential paths share this exact order, so their results
//! are bit-identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const CHUNK: usize = 256;

/// Execution strategy for data-parallel inner loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Map every chunk of `0..n` to a partial result, returned in chunk order.
pub fn map_chunks<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let range = move |c: usize| c * CHUNK..((c + 1) * CHUNK).min(n);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..chunks).into_par_iter().map(|c| f(range(c))).collect();
    }
    let _ = exec;
    (0..chunks).map(|c| f(range(c))).collect()
}

/// Map every item of `0..n` independently, preserving order.
pub fn map_indices<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Sum `f(i)` over `0..n` in the fixed chunk order.
pub fn sum<F>(exec: Exec, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_chunks(exec, n, |r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}
