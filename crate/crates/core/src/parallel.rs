//! Worker pool sizing.
//!
//! All parallel loops in the crate reduce in a fixed order, so the thread
//! count changes wall time only.

use thiserror::Error;

pub const THREADS_ENV: &str = "IMPULSE_THREADS";

#[derive(Debug, Error)]
pub enum ParallelError {
    #[error("{THREADS_ENV} must be a positive integer (got {0:?})")]
    BadThreadCount(String),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Thread count requested through `IMPULSE_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, ParallelError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => parse_threads(&s).map(Some),
    }
}

fn parse_threads(s: &str) -> Result<usize, ParallelError> {
    match s.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(ParallelError::BadThreadCount(s.to_string())),
    }
}

/// Run `f` on a dedicated pool of `threads` workers (rayon's default when
/// `None`).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R, ParallelError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?.install(f))
}
