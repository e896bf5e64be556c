use std::fmt::Write as _;
use std::path::Path;

use dopplerkit_core::formats::{fmt_f64, Pgm, Sidecar};
use dopplerkit_core::image::FlowClass;
use dopplerkit_core::measure::{measure_mask, MeasureReport};
use serde::{Deserialize, Serialize};

use super::csv_bytes;
use crate::config::RunConfig;
use crate::dataset::{read_bytes, write_bytes};
use crate::error::{CliError, Result};

/// One CSV line per beat; `ed_time` is empty for beats the flow type's
/// ED rule does not watch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub beat: usize,
    pub direction: FlowClass,
    pub start_col: usize,
    pub end_col: usize,
    pub vmax: String,
    pub vti: String,
    pub ed_time: String,
}

pub fn rows(report: &MeasureReport) -> Vec<MeasureRow> {
    report
        .measurements
        .iter()
        .enumerate()
        .map(|(i, m)| MeasureRow {
            beat: i,
            direction: m.beat.direction,
            start_col: m.beat.start_col,
            end_col: m.beat.end_col,
            vmax: fmt_f64(m.vmax),
            vti: fmt_f64(m.vti),
            ed_time: report
                .ed_events
                .iter()
                .find(|e| e.beat == m.beat)
                .map(|e| fmt_f64(e.time))
                .unwrap_or_default(),
        })
        .collect()
}

pub fn parse_csv(bytes: &[u8]) -> Result<Vec<MeasureRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .map(|r| r.map_err(CliError::from))
        .collect()
}

pub fn render(report: &MeasureReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} beat(s)", report.measurements.len());
    for (r, m) in rows(report).iter().zip(&report.measurements) {
        let _ = write!(
            s,
            "beat {} {:?} cols {}..={} vmax {:.3} cm/s vti {:.4} cm",
            r.beat, m.beat.direction, r.start_col, r.end_col, m.vmax, m.vti
        );
        if let Some(e) = report.ed_events.iter().find(|e| e.beat == m.beat) {
            let _ = write!(s, " ed {:.4} s ({:?})", e.time, e.rule);
        }
        s.push('\n');
    }
    s
}

/// Measures one mask. Both inputs are parsed and measured before anything
/// is written.
pub fn measure_files(mask: &Path, sidecar: &Path) -> Result<MeasureReport> {
    let mask = Pgm::from_bytes(&read_bytes(mask)?)
        .and_then(Pgm::into_mask)
        .map_err(|e| CliError::Config(format!("{}: {e}", mask.display())))?;
    let side = Sidecar::from_bytes(&read_bytes(sidecar)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", sidecar.display())))?;
    Ok(measure_mask(&mask, &side.calibration, side.flow_type)?)
}

pub fn run(cfg: &RunConfig) -> Result<MeasureReport> {
    let m = &cfg.measure;
    let report = measure_files(&m.mask, &m.sidecar)?;
    if let Some(out) = &m.out {
        let bytes = csv_bytes(rows(&report))?;
        if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            super::create_dir(dir)?;
        }
        write_bytes(out, &bytes)?;
        write_bytes(&out.with_extension("config.toml"), cfg.to_toml()?.as_bytes())?;
    }
    Ok(report)
}
