use std::collections::BTreeMap;
use std::path::PathBuf;

use dopplerkit_core::flow::FlowType;
use dopplerkit_core::formats::fmt_f64;
use dopplerkit_core::image::SegMask;
use dopplerkit_core::metrics::{evaluate, sweep_lambda, CaseResult, EdCase, EvalCase, EvalReport, PccRow, RateRow};
use dopplerkit_core::net::{checkpoint, predict_masks};
use dopplerkit_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use super::{create_dir, csv_bytes, fmt_opt, json_bytes};
use crate::config::RunConfig;
use crate::dataset::{write_bytes, Dataset, LoadedCase};
use crate::error::{CliError, Result};

pub const EVAL_JSON: &str = "eval.json";
pub const MEASUREMENTS_CSV: &str = "measurements.csv";
pub const CASES_CSV: &str = "cases.csv";
pub const PCC_JSON: &str = "pcc.json";
pub const TDR_JSON: &str = "tdr.json";
pub const LAMBDA_CSV: &str = "lambda_curve.csv";
pub const ED_JSON: &str = "ed.json";

/// TDR_ED at each λ; `None` when no GT event survives the boundary exclusion.
pub type LambdaCurve = Vec<(f64, Option<f64>)>;

/// Predicted and ground-truth ED times of one case, as consumed by `sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdRecord {
    pub id: usize,
    pub flow_type: FlowType,
    #[serde(flatten)]
    pub ed: EdCase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PccFile {
    pub pooled: PccRow,
    pub per_flow_type: BTreeMap<FlowType, PccRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdrEntry {
    pub tdr_measure: RateRow,
    pub tdr_ed: RateRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdrFile {
    pub lambda: f64,
    pub pooled: TdrEntry,
    pub per_flow_type: BTreeMap<FlowType, TdrEntry>,
}

#[derive(Serialize)]
struct MeasurementRow {
    case: usize,
    flow_type: FlowType,
    beat: usize,
    gt_vmax: String,
    pred_vmax: String,
    gt_vti: String,
    pred_vti: String,
}

#[derive(Serialize)]
struct CaseRow {
    case: usize,
    flow_type: FlowType,
    dsc_forward: String,
    dsc_reverse: String,
    iou_forward: String,
    iou_reverse: String,
    gt_forward: bool,
    gt_reverse: bool,
    n_gt_beats: usize,
    n_pred_beats: usize,
    n_matched: usize,
}

#[derive(Serialize)]
struct LambdaRow {
    lambda: String,
    tdr_ed: String,
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub out_dir: PathBuf,
    pub report: EvalReport,
    pub results: Vec<CaseResult>,
    pub lambda_curve: LambdaCurve,
}

/// Segments (or, with `use_gt_masks`, reuses) the masks of the configured
/// split and scores overlap, measurements and ED detection.
pub fn run(cfg: &RunConfig, repeat: usize) -> Result<EvalOutput> {
    let e = &cfg.eval;
    let data = Dataset::open(&e.data_dir)?;
    let cases = data.load_many(&data.ids(repeat, e.split)?)?;
    if cases.is_empty() {
        return Err(CliError::Config(format!("split {:?} of repeat {repeat} is empty", e.split)));
    }
    let preds: Vec<SegMask> = if e.use_gt_masks {
        cases.iter().map(|c| c.mask.clone()).collect()
    } else {
        let model = checkpoint::load(&e.checkpoint).map_err(|err| missing_or(&e.checkpoint, err))?;
        let images: Vec<_> = cases.iter().map(|c| &c.image).collect();
        predict_masks(&model, &images, e.batch_size)?
    };
    let out = evaluate_loaded(&cases, &preds, e.lambda, &e.lambdas)?;

    create_dir(&e.out_dir)?;
    cfg.echo(&e.out_dir)?;
    write_outputs(&e.out_dir, &out.0, &out.1, &out.2)?;
    Ok(EvalOutput {
        out_dir: e.out_dir.clone(),
        report: out.0,
        results: out.1,
        lambda_curve: out.2,
    })
}

fn missing_or(path: &std::path::Path, err: CoreError) -> CliError {
    if path.exists() {
        err.into()
    } else {
        CliError::MissingInput {
            path: path.to_path_buf(),
            reason: "checkpoint not found".into(),
        }
    }
}

pub fn evaluate_loaded(
    cases: &[LoadedCase],
    preds: &[SegMask],
    lambda: f64,
    lambdas: &[f64],
) -> Result<(EvalReport, Vec<CaseResult>, LambdaCurve)> {
    let mut eval_cases = Vec::with_capacity(cases.len());
    for (c, p) in cases.iter().zip(preds) {
        let gt = c.sidecar.ground_truth.as_ref().ok_or_else(|| {
            CliError::Config(format!("case {} has no ground truth in its sidecar", c.id))
        })?;
        eval_cases.push(EvalCase {
            id: c.id,
            flow_type: c.flow_type(),
            calibration: c.sidecar.calibration,
            pred_mask: p,
            gt_mask: &c.mask,
            gt_measurements: &gt.measurements,
            gt_ed_times: &gt.ed_times,
        });
    }
    let (report, results) = evaluate(&eval_cases, lambda)?;
    let ed: Vec<EdCase> = results.iter().map(|r| r.ed.clone()).collect();
    Ok((report, results, lambda_curve(&ed, lambdas)?))
}

pub fn write_outputs(dir: &std::path::Path, report: &EvalReport, results: &[CaseResult], curve: &[(f64, Option<f64>)]) -> Result<()> {
    write_bytes(&dir.join(EVAL_JSON), &json_bytes(report)?)?;

    let rows = results.iter().flat_map(|r| {
        r.matched.iter().enumerate().map(move |(i, m)| MeasurementRow {
            case: r.id,
            flow_type: r.flow_type,
            beat: i,
            gt_vmax: fmt_f64(m.gt.vmax),
            pred_vmax: fmt_f64(m.pred.vmax),
            gt_vti: fmt_f64(m.gt.vti),
            pred_vti: fmt_f64(m.pred.vti),
        })
    });
    write_bytes(&dir.join(MEASUREMENTS_CSV), &csv_bytes(rows)?)?;

    let rows = results.iter().map(|r| CaseRow {
        case: r.id,
        flow_type: r.flow_type,
        dsc_forward: fmt_f64(r.dsc[0]),
        dsc_reverse: fmt_f64(r.dsc[1]),
        iou_forward: fmt_f64(r.iou[0]),
        iou_reverse: fmt_f64(r.iou[1]),
        gt_forward: r.gt_present[0],
        gt_reverse: r.gt_present[1],
        n_gt_beats: r.n_gt_beats,
        n_pred_beats: r.n_pred_beats,
        n_matched: r.matched.len(),
    });
    write_bytes(&dir.join(CASES_CSV), &csv_bytes(rows)?)?;

    let pcc = PccFile {
        pooled: report.pooled.pcc,
        per_flow_type: report.per_flow_type.iter().map(|(&t, g)| (t, g.pcc)).collect(),
    };
    write_bytes(&dir.join(PCC_JSON), &json_bytes(&pcc)?)?;

    let entry = |g: &dopplerkit_core::metrics::GroupReport| TdrEntry {
        tdr_measure: g.tdr_measure,
        tdr_ed: g.tdr_ed,
    };
    let tdr = TdrFile {
        lambda: report.lambda,
        pooled: entry(&report.pooled),
        per_flow_type: report.per_flow_type.iter().map(|(&t, g)| (t, entry(g))).collect(),
    };
    write_bytes(&dir.join(TDR_JSON), &json_bytes(&tdr)?)?;

    write_bytes(&dir.join(LAMBDA_CSV), &lambda_csv(curve)?)?;

    let ed: Vec<EdRecord> = results
        .iter()
        .map(|r| EdRecord {
            id: r.id,
            flow_type: r.flow_type,
            ed: r.ed.clone(),
        })
        .collect();
    write_bytes(&dir.join(ED_JSON), &json_bytes(&ed)?)
}

/// Pooled TDR_ED over `lambdas`; every rate is `None` when no ground-truth
/// ED survives the boundary exclusion.
pub fn lambda_curve(cases: &[EdCase], lambdas: &[f64]) -> Result<LambdaCurve> {
    match sweep_lambda(cases, lambdas) {
        Ok(curve) => Ok(curve.into_iter().map(|(l, r)| (l, Some(r))).collect()),
        Err(CoreError::Undefined(_)) => Ok(lambdas.iter().map(|&l| (l, None)).collect()),
        Err(e) => Err(e.into()),
    }
}

pub fn lambda_csv(curve: &[(f64, Option<f64>)]) -> Result<Vec<u8>> {
    csv_bytes(curve.iter().map(|&(l, r)| LambdaRow {
        lambda: fmt_f64(l),
        tdr_ed: fmt_opt(r),
    }))
}
