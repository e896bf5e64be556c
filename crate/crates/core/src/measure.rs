//! Beat delineation, peak velocity, velocity-time integral and
//! end-diastole events from a segmentation mask.
//!
//! Velocities are distances from the baseline row: a pixel `r` rows away
//! from `baseline_row` reads `r * cmps_per_row` cm/s. Each column of a beat
//! contributes its farthest pixel of the beat's class, so holes inside the
//! segmented region do not change the result.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::flow::{EdEdge, FlowType};
use crate::image::{FlowClass, SegMask};

/// Physical scaling of a spectrogram raster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sec_per_col: f64,
    pub cmps_per_row: f64,
    pub baseline_row: usize,
}

impl Calibration {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if !(self.sec_per_col > 0.0 && self.sec_per_col.is_finite()) {
            bail!(Data, "sec_per_col must be positive, got {}", self.sec_per_col);
        }
        if !(self.cmps_per_row > 0.0 && self.cmps_per_row.is_finite()) {
            bail!(Data, "cmps_per_row must be positive, got {}", self.cmps_per_row);
        }
        if self.baseline_row >= rows {
            bail!(Data, "baseline row {} outside {} rows", self.baseline_row, rows);
        }
        Ok(())
    }

    /// Columns spanning `seconds`, at least one.
    pub fn cols_for(&self, seconds: f64) -> usize {
        ((seconds / self.sec_per_col).round() as usize).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Beat {
    pub start_col: usize,
    /// Inclusive.
    pub end_col: usize,
    pub direction: FlowClass,
}

impl Beat {
    pub fn n_cols(&self) -> usize {
        self.end_col + 1 - self.start_col
    }

    pub fn duration(&self, calib: &Calibration) -> f64 {
        self.n_cols() as f64 * calib.sec_per_col
    }

    pub fn start_time(&self, calib: &Calibration) -> f64 {
        self.start_col as f64 * calib.sec_per_col
    }

    pub fn end_time(&self, calib: &Calibration) -> f64 {
        (self.end_col + 1) as f64 * calib.sec_per_col
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub beat: Beat,
    /// cm/s
    pub vmax: f64,
    /// cm
    pub vti: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdEvent {
    /// Seconds from the first column's left edge.
    pub time: f64,
    pub rule: EdEdge,
    pub beat: Beat,
}

/// Beat grouping thresholds in columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatParams {
    pub min_gap_cols: usize,
    pub min_width_cols: usize,
}

impl BeatParams {
    pub const DEFAULT_GAP_SECONDS: f64 = 0.060;
    pub const DEFAULT_WIDTH_SECONDS: f64 = 0.040;

    /// 60 ms gap and 40 ms width; the gap never drops below two columns so
    /// a single dropped column between touching lobes cannot split a beat.
    pub fn for_calibration(calib: &Calibration) -> Self {
        Self {
            min_gap_cols: calib.cols_for(Self::DEFAULT_GAP_SECONDS).max(2),
            min_width_cols: calib.cols_for(Self::DEFAULT_WIDTH_SECONDS),
        }
    }
}

/// Per-column farthest distance (in rows) from the baseline among pixels
/// of `class`; `None` where the column has no such pixel.
pub fn column_extents(mask: &SegMask, calib: &Calibration, class: FlowClass) -> Vec<Option<usize>> {
    let mut out = vec![None; mask.cols];
    let label = class.label();
    for r in 0..mask.rows {
        let d = r.abs_diff(calib.baseline_row);
        let row = &mask.labels[r * mask.cols..(r + 1) * mask.cols];
        for (c, &l) in row.iter().enumerate() {
            if l == label {
                out[c] = Some(out[c].map_or(d, |e: usize| e.max(d)));
            }
        }
    }
    out
}

/// Groups columns holding at least one pixel of a flow class into beats.
///
/// Runs separated by fewer than `min_gap_cols` empty columns merge; runs
/// shorter than `min_width_cols` are dropped. The result is sorted by start
/// column, forward before reverse on ties.
pub fn extract_beats(mask: &SegMask, calib: &Calibration, min_gap_cols: usize, min_width_cols: usize) -> Vec<Beat> {
    let mut beats = Vec::new();
    for class in [FlowClass::Forward, FlowClass::Reverse] {
        let present: Vec<bool> = column_extents(mask, calib, class)
            .iter()
            .map(Option::is_some)
            .collect();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut c = 0;
        while c < present.len() {
            if !present[c] {
                c += 1;
                continue;
            }
            let start = c;
            while c < present.len() && present[c] {
                c += 1;
            }
            match runs.last_mut() {
                Some(last) if start - last.1 - 1 < min_gap_cols => last.1 = c - 1,
                _ => runs.push((start, c - 1)),
            }
        }
        beats.extend(
            runs.into_iter()
                .filter(|(s, e)| e + 1 - s >= min_width_cols)
                .map(|(start_col, end_col)| Beat {
                    start_col,
                    end_col,
                    direction: class,
                }),
        );
    }
    beats.sort_by_key(|b| (b.start_col, b.direction));
    beats
}

fn beat_extents(mask: &SegMask, beat: &Beat, calib: &Calibration) -> Result<Vec<usize>> {
    if beat.end_col >= mask.cols || beat.start_col > beat.end_col {
        bail!(Contract, "beat {:?} outside a {}-column mask", beat, mask.cols);
    }
    let ext = column_extents(mask, calib, beat.direction);
    let cols = &ext[beat.start_col..=beat.end_col];
    if cols.iter().all(Option::is_none) {
        bail!(Contract, "beat {:?} contains no {:?} pixels", beat, beat.direction);
    }
    Ok(cols.iter().map(|e| e.unwrap_or(0)).collect())
}

/// Peak velocity: farthest beat pixel from the baseline, in cm/s.
pub fn compute_vmax(mask: &SegMask, beat: &Beat, calib: &Calibration) -> Result<f64> {
    let ext = beat_extents(mask, beat, calib)?;
    Ok(*ext.iter().max().expect("non-empty beat") as f64 * calib.cmps_per_row)
}

/// Velocity-time integral: sum of per-column envelope velocities times the
/// column duration, in cm.
pub fn compute_vti(mask: &SegMask, beat: &Beat, calib: &Calibration) -> Result<f64> {
    let ext = beat_extents(mask, beat, calib)?;
    Ok(ext
        .iter()
        .map(|&e| e as f64 * calib.cmps_per_row * calib.sec_per_col)
        .sum())
}

/// End-diastole events from the beats of the direction the flow type's
/// rule watches.
pub fn detect_ed(beats: &[Beat], flow_type: FlowType, calib: &Calibration) -> Vec<EdEvent> {
    let rule = flow_type.ed_rule();
    beats
        .iter()
        .filter(|b| b.direction == rule.direction)
        .map(|b| EdEvent {
            time: match rule.edge {
                EdEdge::Initiation => b.start_time(calib),
                EdEdge::Termination => b.end_time(calib),
            },
            rule: rule.edge,
            beat: *b,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub beats: Vec<Beat>,
    pub measurements: Vec<Measurement>,
    pub ed_events: Vec<EdEvent>,
}

/// Runs the whole extraction with default beat thresholds.
pub fn measure_mask(mask: &SegMask, calib: &Calibration, flow_type: FlowType) -> Result<MeasureReport> {
    calib.validate(mask.rows)?;
    let p = BeatParams::for_calibration(calib);
    let beats = extract_beats(mask, calib, p.min_gap_cols, p.min_width_cols);
    let measurements = beats
        .iter()
        .map(|b| {
            Ok(Measurement {
                beat: *b,
                vmax: compute_vmax(mask, b, calib)?,
                vti: compute_vti(mask, b, calib)?,
            })
        })
        .collect::<Result<_>>()?;
    let ed_events = detect_ed(&beats, flow_type, calib);
    Ok(MeasureReport {
        beats,
        measurements,
        ed_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calib(baseline_row: usize, cmps: f64, spc: f64) -> Calibration {
        Calibration {
            sec_per_col: spc,
            cmps_per_row: cmps,
            baseline_row,
        }
    }

    #[test]
    fn empty_mask_has_no_beats() {
        let m = SegMask::empty(20, 30);
        assert!(extract_beats(&m, &calib(10, 1.0, 0.01), 2, 1).is_empty());
    }

    #[test]
    fn solid_rectangle_is_one_beat() {
        let mut m = SegMask::empty(80, 100);
        m.fill_rect(11..30, 10..60, FlowClass::Reverse);
        let beats = extract_beats(&m, &calib(10, 1.0, 0.01), 3, 2);
        assert_eq!(
            beats,
            vec![Beat {
                start_col: 10,
                end_col: 59,
                direction: FlowClass::Reverse
            }]
        );
    }

    #[test]
    fn gap_merging_follows_run_lengths() {
        let c = calib(0, 1.0, 0.01);
        for gap in 1..6 {
            let mut m = SegMask::empty(10, 60);
            m.fill_rect(1..5, 5..15, FlowClass::Reverse);
            m.fill_rect(1..5, 15 + gap..30, FlowClass::Reverse);
            let beats = extract_beats(&m, &c, 4, 1);
            // Oracle: merged iff the empty run is shorter than the threshold.
            let expect = if gap < 4 { 1 } else { 2 };
            assert_eq!(beats.len(), expect, "gap {gap}");
        }
        let mut m = SegMask::empty(10, 60);
        m.fill_rect(1..5, 5..7, FlowClass::Reverse);
        assert!(extract_beats(&m, &c, 4, 3).is_empty());
    }

    #[test]
    fn rectangle_vmax_and_vti() {
        let c = calib(10, 2.0, 0.005);
        let mut m = SegMask::empty(80, 150);
        m.fill_rect(11..61, 20..120, FlowClass::Reverse);
        let b = Beat {
            start_col: 20,
            end_col: 119,
            direction: FlowClass::Reverse,
        };
        assert_eq!(compute_vmax(&m, &b, &c).unwrap(), 100.0);
        assert!((compute_vti(&m, &b, &c).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_on_baseline_reads_zero() {
        let c = calib(5, 3.0, 0.01);
        let mut m = SegMask::empty(10, 10);
        m.set(5, 4, FlowClass::Forward);
        let b = Beat {
            start_col: 4,
            end_col: 4,
            direction: FlowClass::Forward,
        };
        assert_eq!(compute_vmax(&m, &b, &c).unwrap(), 0.0);
    }

    #[test]
    fn empty_beat_is_a_contract_violation() {
        let c = calib(5, 1.0, 0.01);
        let m = SegMask::empty(10, 10);
        let b = Beat {
            start_col: 1,
            end_col: 3,
            direction: FlowClass::Forward,
        };
        assert!(compute_vmax(&m, &b, &c).is_err());
        assert!(compute_vti(&m, &b, &c).is_err());
    }

    #[test]
    fn triangle_vti_approaches_half_base_times_height() {
        // Right triangle: velocity ramps linearly to v over duration T.
        let (v, t) = (80.0, 0.4);
        for cols in [40usize, 160, 640] {
            let spc = t / cols as f64;
            let rows = 200;
            let cmps = v / (rows - 1) as f64;
            let c = calib(0, cmps, spc);
            let mut m = SegMask::empty(rows, cols);
            for col in 0..cols {
                let vel = v * (col as f64 + 1.0) / cols as f64;
                let e = (vel / cmps).round() as usize;
                for r in 1..=e.min(rows - 1) {
                    m.set(r, col, FlowClass::Reverse);
                }
            }
            let b = Beat {
                start_col: 0,
                end_col: cols - 1,
                direction: FlowClass::Reverse,
            };
            let vti = compute_vti(&m, &b, &c).unwrap();
            assert!((vti - v * t / 2.0).abs() <= v * spc + cmps * t, "cols {cols}: {vti}");
        }
    }

    #[test]
    fn ed_rules_by_flow_type() {
        let c = calib(0, 1.0, 0.005);
        let fwd = Beat {
            start_col: 0,
            end_col: 199,
            direction: FlowClass::Forward,
        };
        let ev = detect_ed(&[fwd], FlowType::AvInflow, &c);
        assert_eq!(ev.len(), 1);
        assert!((ev[0].time - 1.0).abs() < 1e-12);
        assert_eq!(ev[0].rule, EdEdge::Termination);
        let ev = detect_ed(&[fwd], FlowType::VarEjection, &c);
        assert_eq!(ev[0].time, 0.0);
        assert_eq!(ev[0].rule, EdEdge::Initiation);
        assert!(detect_ed(&[fwd], FlowType::AvRegurg, &c).is_empty());
        let rev = Beat {
            direction: FlowClass::Reverse,
            ..fwd
        };
        assert_eq!(detect_ed(&[fwd, rev], FlowType::VarRegurg, &c).len(), 1);
        assert_eq!(detect_ed(&[rev], FlowType::AvRegurg, &c)[0].time, 0.0);
    }
}
