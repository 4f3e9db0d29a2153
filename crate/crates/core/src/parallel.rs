//! Data-parallel map over replicate indices, with a sequential fallback.
//!
//! With the `parallel` feature (default) the map runs on rayon's global pool
//! unless `threads == 1`; without the feature it always runs sequentially.
//! Outputs are collected in index order, so callers that derive per-index
//! RNG streams get results independent of scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Degree of parallelism for replicate maps.
///
/// `Sequential` forces the in-thread loop even when rayon is compiled in;
/// `Default` uses the global rayon pool (or the sequential loop when the
/// `parallel` feature is off).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[default]
    Default,
    Sequential,
}

impl ExecMode {
    /// Map a CLI/config `threads` value: `1` means sequential, anything else
    /// defers to the global pool.
    pub fn from_threads(threads: usize) -> Self {
        if threads == 1 {
            ExecMode::Sequential
        } else {
            ExecMode::Default
        }
    }
}

/// `(0..count).map(f)` collected in order, parallel when allowed.
pub fn map_indexed<U, F>(count: usize, mode: ExecMode, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode == ExecMode::Default {
            return (0..count).into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    (0..count).map(f).collect()
}
