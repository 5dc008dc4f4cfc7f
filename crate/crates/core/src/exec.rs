//! Sequential or thread-pool execution of independent per-item work.
//!
//! Results are always returned in input order, so a computation that is a
//! pure function of its item gives identical output in both modes.

use std::sync::Arc;

use rayon::prelude::*;

#[derive(Clone, Default)]
pub enum Exec {
    /// Reference path: plain iteration on the calling thread.
    #[default]
    Sequential,
    Pool(Arc<rayon::ThreadPool>),
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Exec::Sequential => f.write_str("Sequential"),
            Exec::Pool(p) => write!(f, "Pool({})", p.current_num_threads()),
        }
    }
}

impl Exec {
    /// `jobs <= 1` selects the sequential path.
    pub fn with_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            return Exec::Sequential;
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .thread_name(|i| format!("healsim-worker-{i}"))
            .build()
            .expect("thread pool");
        Exec::Pool(Arc::new(pool))
    }

    pub fn jobs(&self) -> usize {
        match self {
            Exec::Sequential => 1,
            Exec::Pool(p) => p.current_num_threads(),
        }
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            Exec::Pool(pool) => pool.install(|| items.par_iter().map(f).collect()),
        }
    }
}
