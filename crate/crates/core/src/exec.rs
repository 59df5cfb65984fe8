//! Execution strategy for embarrassingly parallel loops.
//!
//! Results are always returned in index order, so switching between the
//! sequential and parallel paths never changes an output. Without the
//! `parallel` feature every strategy runs sequentially.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon with `workers` threads, or the global pool when `None`.
    #[default]
    Parallel,
    Workers(usize),
}

impl Execution {
    /// `Sequential` for one worker, a dedicated pool otherwise.
    pub fn with_workers(workers: usize) -> Self {
        if workers <= 1 {
            Execution::Sequential
        } else {
            Execution::Workers(workers)
        }
    }
}

/// Evaluates `f(0..n)` under the given strategy.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    imp::map_indexed(n, exec, f)
}

#[cfg(feature = "parallel")]
mod imp {
    use super::Execution;
    use rayon::prelude::*;

    pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match exec {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            Execution::Workers(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
                Err(e) => {
                    log::warn!("could not build a {k}-thread pool ({e}); running sequentially");
                    (0..n).map(f).collect()
                }
            },
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    use super::Execution;

    pub fn map_indexed<T, F>(n: usize, _exec: Execution, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
