//! Per-item fan-out with a sequential fallback.
//!
//! With the `parallel` feature, work runs on the current rayon pool (callers
//! control thread count by installing a pool). Results are always returned in
//! index order so reductions over them are deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Whether parallel execution is compiled in.
pub const fn enabled() -> bool {
    cfg!(feature = "parallel")
}
