//! Thread-pool executor for grid, stencil and replicate evaluations.

use rayon::prelude::*;
use selfex_core::exec::Executor;

/// Evaluates on a dedicated rayon pool. Results are returned in index
/// order, so numbers do not depend on the number of threads.
#[derive(Debug)]
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// `threads = None` uses the machine's available parallelism.
    pub fn new(threads: Option<usize>) -> anyhow::Result<Self> {
        let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }
}
