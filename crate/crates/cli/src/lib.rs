//! Command implementations behind the `dopplerkit` binary.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, Result};

/// Runs `f` on a pool of `workers` threads. Outputs do not depend on the
/// worker count; it only changes wall-clock time.
#[cfg(feature = "parallel")]
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<T: Send>(_workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    f()
}
