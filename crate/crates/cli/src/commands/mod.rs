pub mod ablate;
pub mod eval;
pub mod measure;
pub mod simulate;
pub mod sweep;
pub mod train;

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

pub use simulate::json_bytes;

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Serialises CSV records into memory so a failure never leaves a partial
/// file behind.
pub fn csv_bytes<R: serde::Serialize>(records: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv buffer: {e}")))
}

/// `None` prints as an empty cell.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(dopplerkit_core::formats::fmt_f64).unwrap_or_default()
}
