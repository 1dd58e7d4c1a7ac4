//! Replica-level fan-out. With the `parallel` feature replicas run on a rayon
//! pool; without it (or with [`Execution::Sequential`]) they run in order on
//! the calling thread. Results always come back in replica order.

use std::sync::OnceLock;

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "ERWRE_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Parallel with the given worker count, or the default when `None`.
    Parallel(Option<usize>),
    #[default]
    Auto,
}

/// Worker count from `ERWRE_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[cfg(feature = "parallel")]
fn default_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads_from_env() {
            b = b.num_threads(n);
        }
        b.build().expect("thread pool")
    })
}

#[cfg(not(feature = "parallel"))]
#[allow(dead_code)]
fn default_pool() -> &'static () {
    static POOL: OnceLock<()> = OnceLock::new();
    POOL.get_or_init(|| ())
}

/// Whether parallel execution is compiled in.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

/// Evaluate `f(0), …, f(n-1)`, returning results in index order.
pub fn map_replicas<T, F>(n: u64, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel(threads) => {
            use rayon::prelude::*;
            let run = || (0..n).into_par_iter().map(&f).collect();
            match threads {
                Some(k) => rayon::ThreadPoolBuilder::new()
                    .num_threads(k.max(1))
                    .build()
                    .expect("thread pool")
                    .install(run),
                None => default_pool().install(run),
            }
        }
        #[cfg(feature = "parallel")]
        Execution::Auto => {
            use rayon::prelude::*;
            default_pool().install(|| (0..n).into_par_iter().map(&f).collect())
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel(_) | Execution::Auto => (0..n).map(f).collect(),
    }
}
