//! Order-preserving fan-out over independent work items.

use rayon::prelude::*;

/// Map `f(index, item)` over `items` on the rayon pool; results come back in
/// input order regardless of scheduling.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.par_iter().enumerate().map(|(k, item)| f(k, item)).collect()
}

/// Configure the global pool. `None` keeps rayon's default (all cores).
pub fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs.filter(|n| *n > 0) {
        // an already-initialized pool is fine; keep whatever it has
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
