use std::path::PathBuf;

use dopplerkit_core::flow::FlowType;
use dopplerkit_core::formats::fmt_f64;
use dopplerkit_core::measure::{measure_mask, Calibration, Measurement};
use dopplerkit_core::metrics::match_beats;
use dopplerkit_core::net::{checkpoint, predict_masks, Model};
use dopplerkit_core::synth::{apply_baseline_shift, SynthCase};
use dopplerkit_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use super::{create_dir, csv_bytes, json_bytes};
use crate::config::RunConfig;
use crate::dataset::{write_bytes, Dataset};
use crate::error::{CliError, Result};

pub const ABLATION_CSV: &str = "ablation.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Mean absolute measurement change of one model between the unshifted and
/// the shifted prediction of a case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub vmax: f64,
    pub vti: f64,
    pub matched: usize,
    pub unmatched: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub case: usize,
    pub flow_type: FlowType,
    pub shift: i64,
    pub aa: Deviation,
    pub plain: Deviation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub shift: i64,
    pub n_cases: usize,
    pub aa_mean_dvmax: f64,
    pub plain_mean_dvmax: f64,
    pub aa_mean_dvti: f64,
    pub plain_mean_dvti: f64,
}

/// Per-case means over every non-zero shift, compared between models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseComparison {
    pub n_cases: usize,
    pub aa_lower_vmax: usize,
    pub aa_lower_vti: usize,
    pub aa_lower_both: usize,
    pub aa_not_higher_both: usize,
    pub frac_aa_lower_both: f64,
    pub aa_mean_dvmax: f64,
    pub plain_mean_dvmax: f64,
    pub aa_mean_dvti: f64,
    pub plain_mean_dvti: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub shifts: Vec<ShiftSummary>,
    pub cases: CaseComparison,
    /// `(case, shift)` pairs left out because the shift would clip.
    pub skipped: Vec<(usize, i64)>,
}

#[derive(Serialize)]
struct CsvRow {
    case: usize,
    flow_type: FlowType,
    shift: i64,
    aa_dvmax: String,
    aa_dvti: String,
    aa_matched: usize,
    aa_unmatched: usize,
    plain_dvmax: String,
    plain_dvti: String,
    plain_matched: usize,
    plain_unmatched: usize,
}

#[derive(Serialize)]
struct SummaryRow {
    shift: i64,
    n_cases: usize,
    aa_mean_dvmax: String,
    plain_mean_dvmax: String,
    aa_mean_dvti: String,
    plain_mean_dvti: String,
}

/// Matched beats contribute `|Δ|`; a beat present in only one of the two
/// predictions contributes its own full value, as if measured against zero.
pub fn deviation(base: &[Measurement], shifted: &[Measurement]) -> Deviation {
    let bb: Vec<_> = base.iter().map(|m| m.beat).collect();
    let sb: Vec<_> = shifted.iter().map(|m| m.beat).collect();
    let pairs = match_beats(&sb, &bb);
    let (mut dv, mut dt) = (0.0, 0.0);
    for &(s, b) in &pairs {
        dv += (shifted[s].vmax - base[b].vmax).abs();
        dt += (shifted[s].vti - base[b].vti).abs();
    }
    let mut unmatched = 0;
    for (i, m) in base.iter().enumerate() {
        if !pairs.iter().any(|p| p.1 == i) {
            dv += m.vmax;
            dt += m.vti;
            unmatched += 1;
        }
    }
    for (i, m) in shifted.iter().enumerate() {
        if !pairs.iter().any(|p| p.0 == i) {
            dv += m.vmax;
            dt += m.vti;
            unmatched += 1;
        }
    }
    let n = pairs.len() + unmatched;
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Deviation {
        vmax: mean(dv),
        vti: mean(dt),
        matched: pairs.len(),
        unmatched,
    }
}

fn measure_all(model: &Model, cases: &[SynthCase], batch: usize) -> Result<Vec<Vec<Measurement>>> {
    let images: Vec<_> = cases.iter().map(|c| &c.spectrogram).collect();
    let masks = predict_masks(model, &images, batch)?;
    masks
        .iter()
        .zip(cases)
        .map(|(m, c)| {
            let cal: &Calibration = c.calibration();
            Ok(measure_mask(m, cal, c.flow_type())?.measurements)
        })
        .collect()
}

/// Compares how far each model's measurements move when the baseline is
/// shifted, on the same cases and shifts.
pub fn run(cfg: &RunConfig, repeat: usize) -> Result<(PathBuf, Vec<AblationRow>, AblationSummary)> {
    let a = &cfg.ablate;
    let aa = checkpoint::load(&a.checkpoint_aa)?;
    let plain = checkpoint::load(&a.checkpoint_plain)?;
    if !aa.config.anti_alias || plain.config.anti_alias || !aa.config.differs_only_in_anti_alias(&plain.config) {
        return Err(CliError::Config(
            "ablation checkpoints must differ only in anti_alias (on for checkpoint_aa, off for checkpoint_plain)".into(),
        ));
    }
    let data = Dataset::open(&a.data_dir)?;
    let case_ids = data.ids(repeat, a.split)?;
    let cases: Vec<SynthCase> = data
        .load_many(&case_ids)?
        .iter()
        .map(|c| c.to_synth())
        .collect::<Result<_>>()?;

    let base_aa = measure_all(&aa, &cases, a.batch_size)?;
    let base_plain = measure_all(&plain, &cases, a.batch_size)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &shift in &a.shifts {
        let mut ids = Vec::new();
        let mut shifted = Vec::new();
        for (i, c) in cases.iter().enumerate() {
            match apply_baseline_shift(c, shift) {
                Ok(s) => {
                    ids.push(i);
                    shifted.push(s);
                }
                Err(CoreError::Range(_)) => skipped.push((case_ids[i], shift)),
                Err(e) => return Err(e.into()),
            }
        }
        let s_aa = measure_all(&aa, &shifted, a.batch_size)?;
        let s_plain = measure_all(&plain, &shifted, a.batch_size)?;
        for (k, &i) in ids.iter().enumerate() {
            rows.push(AblationRow {
                case: case_ids[i],
                flow_type: cases[i].flow_type(),
                shift,
                aa: deviation(&base_aa[i], &s_aa[k]),
                plain: deviation(&base_plain[i], &s_plain[k]),
            });
        }
    }
    let summary = summarize(&rows, &a.shifts, skipped);

    create_dir(&a.out_dir)?;
    cfg.echo(&a.out_dir)?;
    let csv = csv_bytes(rows.iter().map(|r| CsvRow {
        case: r.case,
        flow_type: r.flow_type,
        shift: r.shift,
        aa_dvmax: fmt_f64(r.aa.vmax),
        aa_dvti: fmt_f64(r.aa.vti),
        aa_matched: r.aa.matched,
        aa_unmatched: r.aa.unmatched,
        plain_dvmax: fmt_f64(r.plain.vmax),
        plain_dvti: fmt_f64(r.plain.vti),
        plain_matched: r.plain.matched,
        plain_unmatched: r.plain.unmatched,
    }))?;
    write_bytes(&a.out_dir.join(ABLATION_CSV), &csv)?;
    let csv = csv_bytes(summary.shifts.iter().map(|s| SummaryRow {
        shift: s.shift,
        n_cases: s.n_cases,
        aa_mean_dvmax: fmt_f64(s.aa_mean_dvmax),
        plain_mean_dvmax: fmt_f64(s.plain_mean_dvmax),
        aa_mean_dvti: fmt_f64(s.aa_mean_dvti),
        plain_mean_dvti: fmt_f64(s.plain_mean_dvti),
    }))?;
    write_bytes(&a.out_dir.join(SUMMARY_CSV), &csv)?;
    write_bytes(&a.out_dir.join(SUMMARY_JSON), &json_bytes(&summary)?)?;
    Ok((a.out_dir.clone(), rows, summary))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn summarize(rows: &[AblationRow], shifts: &[i64], skipped: Vec<(usize, i64)>) -> AblationSummary {
    let shift_rows = shifts
        .iter()
        .map(|&shift| {
            let sel: Vec<_> = rows.iter().filter(|r| r.shift == shift).collect();
            ShiftSummary {
                shift,
                n_cases: sel.len(),
                aa_mean_dvmax: mean(sel.iter().map(|r| r.aa.vmax)),
                plain_mean_dvmax: mean(sel.iter().map(|r| r.plain.vmax)),
                aa_mean_dvti: mean(sel.iter().map(|r| r.aa.vti)),
                plain_mean_dvti: mean(sel.iter().map(|r| r.plain.vti)),
            }
        })
        .collect();

    let mut ids: Vec<usize> = rows.iter().map(|r| r.case).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut per_case = Vec::with_capacity(ids.len());
    for id in ids {
        let sel: Vec<_> = rows.iter().filter(|r| r.case == id && r.shift != 0).collect();
        if sel.is_empty() {
            continue;
        }
        per_case.push([
            mean(sel.iter().map(|r| r.aa.vmax)),
            mean(sel.iter().map(|r| r.plain.vmax)),
            mean(sel.iter().map(|r| r.aa.vti)),
            mean(sel.iter().map(|r| r.plain.vti)),
        ]);
    }
    let count = |f: &dyn Fn(&[f64; 4]) -> bool| per_case.iter().filter(|c| f(c)).count();
    let n = per_case.len();
    let lower_both = count(&|c| c[0] < c[1] && c[2] < c[3]);
    AblationSummary {
        shifts: shift_rows,
        cases: CaseComparison {
            n_cases: n,
            aa_lower_vmax: count(&|c| c[0] < c[1]),
            aa_lower_vti: count(&|c| c[2] < c[3]),
            aa_lower_both: lower_both,
            aa_not_higher_both: count(&|c| c[0] <= c[1] && c[2] <= c[3]),
            frac_aa_lower_both: if n == 0 { f64::NAN } else { lower_both as f64 / n as f64 },
            aa_mean_dvmax: mean(per_case.iter().map(|c| c[0])),
            plain_mean_dvmax: mean(per_case.iter().map(|c| c[1])),
            aa_mean_dvti: mean(per_case.iter().map(|c| c[2])),
            plain_mean_dvti: mean(per_case.iter().map(|c| c[3])),
        },
        skipped,
    }
}
