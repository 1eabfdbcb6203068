//! Worker pool for independent trials.

use std::ops::Range;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Runs trial closures on a fixed-size pool. Results always come back in
/// trial-index order, so reductions do not depend on the thread count.
pub struct Exec {
    pool: ThreadPool,
    threads: usize,
}

impl Exec {
    /// `threads == 0` means one worker per available core.
    pub fn new(threads: usize) -> Self {
        let threads = if threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            threads
        };
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        Self { pool, threads }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn map_trials<T, F>(&self, trials: Range<u64>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        self.pool.install(|| trials.into_par_iter().map(f).collect())
    }
}

impl Default for Exec {
    fn default() -> Self {
        Self::new(0)
    }
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exec").field("threads", &self.threads).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_by_index() {
        for t in [1, 3, 8] {
            let out = Exec::new(t).map_trials(5..105, |i| i * i);
            assert_eq!(out, (5..105u64).map(|i| i * i).collect::<Vec<_>>());
        }
    }
}
