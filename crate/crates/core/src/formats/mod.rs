//! On-disk formats: binary PGM rasters and JSON case sidecars.

pub mod pgm;
pub mod sidecar;

pub use pgm::{read_pgm, write_pgm, Pgm};
pub use sidecar::{GroundTruth, Sidecar};

/// Float text with 17 significant digits, which always parses back to the
/// same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
