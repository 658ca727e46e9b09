//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over rayon; without it every
//! helper runs in order on the calling thread. Results are always returned in input
//! order, so callers see identical output either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for a data-parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Falls back to [`Exec::Sequential`] when the `parallel` feature is disabled.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Like [`map`], stopping at an error. Which error is reported when several items fail
/// is unspecified in parallel mode.
pub fn try_map<T, R, E, F>(exec: Exec, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// A fixed-width worker pool: never runs more than `width` closures at once.
///
/// Used for request fan-out, where the width is the configured concurrency limit.
pub struct Dispatcher {
    width: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Dispatcher {
    pub fn new(width: usize) -> Self {
        let width = width.max(1);
        #[cfg(feature = "parallel")]
        {
            let pool = (width > 1).then(|| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(width)
                    .thread_name(|i| format!("dispatch-{i}"))
                    .build()
                    .expect("failed to build dispatcher pool")
            });
            Dispatcher { width, pool }
        }
        #[cfg(not(feature = "parallel"))]
        Dispatcher { width }
    }

    /// Effective number of concurrent workers (1 without the `parallel` feature).
    pub fn width(&self) -> usize {
        if cfg!(feature = "parallel") {
            self.width
        } else {
            1
        }
    }

    pub fn try_map<T, R, E, F>(&self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            // with_max_len(1) keeps one item per task so each worker holds at most one
            // request at a time
            return pool.install(|| items.par_iter().with_max_len(1).map(&f).collect());
        }
        items.iter().map(f).collect()
    }
}
