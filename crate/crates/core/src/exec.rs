//! Execution mode for the data-parallel loops (s-grids, sweeps, matvecs).
//!
//! With the `parallel` feature disabled every mode runs sequentially, so
//! callers never need their own `cfg` switches.

/// How independent work items are dispatched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// `Parallel` when the crate was built with rayon support.
    pub fn best() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Order-preserving map over `items`.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Order-preserving map over contiguous chunks; results are flattened.
///
/// Used where items inside a chunk share state (continuation seeds).
pub fn map_chunks<T, R, F>(mode: ExecMode, items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> Vec<R> + Sync + Send,
{
    let chunk = chunk.max(1);
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_chunks(chunk).flat_map_iter(f).collect()
        }
        _ => items.chunks(chunk).flat_map(f).collect(),
    }
}

/// Number of worker threads the parallel mode will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Configure the global worker pool. A no-op without the `parallel` feature.
///
/// Only the first call takes effect; later calls return an error string
/// from rayon which we ignore because the pool is already usable.
pub fn init_thread_pool(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
    }
}
