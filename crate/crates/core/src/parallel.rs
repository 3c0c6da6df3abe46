//! Thread-pool sizing for replicate-level parallelism.
//!
//! Work is split into independent replicates whose random streams depend only on
//! `(seed, replicate)`, and results are collected in replicate order, so output
//! does not depend on the number of threads.

use crate::error::{Error, Result};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "FALLFACT_THREADS";

/// Thread count from [`THREADS_ENV`], if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&t| t > 0)
}

/// Runs `f` inside a pool with `threads` workers (or [`env_threads`], or the
/// rayon default).
pub fn install<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads.or_else(env_threads) {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
