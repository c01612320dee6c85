//! Fixed-size worker pool; results keep input order.

use rayon::prelude::*;

pub struct Pool {
    inner: Option<rayon::ThreadPool>,
}

impl Pool {
    /// A single worker runs everything on the calling thread.
    pub fn new(workers: usize) -> Self {
        let inner = (workers > 1).then(|| rayon::ThreadPoolBuilder::new().num_threads(workers).build().ok()).flatten();
        Pool { inner }
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match &self.inner {
            Some(pool) if items.len() > 1 => pool.install(|| items.par_iter().map(&f).collect()),
            _ => items.iter().map(f).collect(),
        }
    }
}

/// One-off [`Pool::map`].
pub fn map<T, R, F>(workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    Pool::new(workers).map(items, f)
}
