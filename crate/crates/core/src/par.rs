//! Data-parallel helpers.
//!
//! Every sweep in the crate (policy enumeration, grid search, Monte Carlo
//! paths, per-state separation) goes through [`map_indexed`]. Results are
//! always collected in index order, so reductions downstream are
//! deterministic regardless of thread schedule. With the `parallel` feature
//! disabled, [`Execution::Parallel`] silently runs sequentially.

/// How a sweep is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run sweeps on a thread pool.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// `(0..n).map(f)` collected in order, optionally on the rayon pool.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Runs `f` inside a dedicated pool of `threads` workers (parallel builds
/// only); otherwise just calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let a = map_indexed(1000, Execution::Parallel, |i| i * i);
        let b = map_indexed(1000, Execution::Sequential, |i| i * i);
        assert_eq!(a, b);
    }
}
