use ldta_core::DocRunner;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Runs per-document work on a rayon pool. Results keep document order, so
/// output does not depend on the thread count.
pub struct RayonRunner {
    pool: Option<ThreadPool>,
}

impl RayonRunner {
    /// `None` uses rayon's global pool.
    pub fn new(threads: Option<usize>) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = match threads {
            Some(n) => Some(ThreadPoolBuilder::new().num_threads(n).build()?),
            None => None,
        };
        Ok(RayonRunner { pool })
    }
}

impl DocRunner for RayonRunner {
    fn map_docs<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let run = || (0..n).into_par_iter().map(&f).collect();
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }
}
