use std::path::PathBuf;

use dopplerkit_core::metrics::EdCase;

use super::eval::{lambda_csv, lambda_curve, EdRecord, LambdaCurve, LAMBDA_CSV};
use super::create_dir;
use crate::config::RunConfig;
use crate::dataset::{read_bytes, write_bytes};
use crate::error::Result;

/// Re-scores the ED events saved by `eval` over a λ grid, optionally for a
/// subset of flow types.
pub fn run(cfg: &RunConfig) -> Result<(PathBuf, LambdaCurve)> {
    let s = &cfg.sweep;
    let records: Vec<EdRecord> = serde_json::from_slice(&read_bytes(&s.ed_file)?)?;
    let cases: Vec<EdCase> = records
        .into_iter()
        .filter(|r| s.flow_types.is_empty() || s.flow_types.contains(&r.flow_type))
        .map(|r| r.ed)
        .collect();
    let curve = lambda_curve(&cases, &s.lambdas)?;
    create_dir(&s.out_dir)?;
    cfg.echo(&s.out_dir)?;
    write_bytes(&s.out_dir.join(LAMBDA_CSV), &lambda_csv(&curve)?)?;
    Ok((s.out_dir.clone(), curve))
}
