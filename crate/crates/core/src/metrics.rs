//! Segmentation overlap, beat matching, correlation and detection rates,
//! plus Monte Carlo train/val/test splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::flow::FlowType;
use crate::image::{FlowClass, SegMask};
use crate::measure::{measure_mask, Beat, Calibration, Measurement};
use crate::par;
use crate::synth::mix;

/// Predicted EDs farther than this from a ground-truth ED are misses.
pub const DEFAULT_LAMBDA: f64 = 0.08;
/// Ground-truth EDs closer than this to either end of the record are not
/// scored.
pub const BOUNDARY_EXCLUSION: f64 = 0.1;

const SPLIT_STREAM: u64 = 0x5b11_7000;

fn overlap_counts(pred: &SegMask, gt: &SegMask, class: FlowClass) -> Result<(usize, usize, usize)> {
    if pred.rows != gt.rows || pred.cols != gt.cols {
        bail!(
            Dimension,
            "mask shapes differ: {}x{} vs {}x{}",
            pred.rows,
            pred.cols,
            gt.rows,
            gt.cols
        );
    }
    let l = class.label();
    let (mut p, mut g, mut both) = (0, 0, 0);
    for (&a, &b) in pred.labels.iter().zip(&gt.labels) {
        let (ia, ib) = (a == l, b == l);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    Ok((p, g, both))
}

/// Dice coefficient of one class; 1.0 when both masks lack the class.
pub fn dsc(pred: &SegMask, gt: &SegMask, class: FlowClass) -> Result<f64> {
    let (p, g, both) = overlap_counts(pred, gt, class)?;
    Ok(if p + g == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + g) as f64
    })
}

/// Intersection over union of one class; 1.0 when both masks lack the class.
pub fn iou(pred: &SegMask, gt: &SegMask, class: FlowClass) -> Result<f64> {
    let (p, g, both) = overlap_counts(pred, gt, class)?;
    let union = p + g - both;
    Ok(if union == 0 { 1.0 } else { both as f64 / union as f64 })
}

/// `(intersection, union)` of two inclusive column intervals.
fn interval_overlap(a: &Beat, b: &Beat) -> (u64, u64) {
    let inter = (a.end_col.min(b.end_col) + 1).saturating_sub(a.start_col.max(b.start_col));
    let union = a.n_cols() + b.n_cols() - inter;
    (inter as u64, union as u64)
}

pub fn interval_iou(a: &Beat, b: &Beat) -> f64 {
    let (i, u) = interval_overlap(a, b);
    i as f64 / u as f64
}

/// Index pairs `(pred, gt)` of matched beats.
///
/// Candidates are same-direction pairs with interval IoU ≥ 0.5, taken
/// greedily by descending IoU. Ties break on the pair's intervals through a
/// key that ignores which list each side came from, so swapping the lists
/// yields the mirrored matching.
pub fn match_beats(pred: &[Beat], gt: &[Beat]) -> Vec<(usize, usize)> {
    let mut cand: Vec<(usize, usize, u64, u64)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if p.direction != g.direction {
                continue;
            }
            let (inter, union) = interval_overlap(p, g);
            if 2 * inter >= union {
                cand.push((i, j, inter, union));
            }
        }
    }
    let key = |i: usize, j: usize| {
        let (a, b) = (&pred[i], &gt[j]);
        (
            a.start_col.min(b.start_col),
            a.start_col.max(b.start_col),
            a.end_col.min(b.end_col),
            a.end_col.max(b.end_col),
        )
    };
    cand.sort_by(|x, y| {
        // x.iou > y.iou  <=>  x.inter * y.union > y.inter * x.union
        (y.2 * x.3)
            .cmp(&(x.2 * y.3))
            .then_with(|| key(x.0, x.1).cmp(&key(y.0, y.1)))
    });
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut out = Vec::new();
    for (i, j, _, _) in cand {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable_by_key(|&(_, j)| j);
    out
}

/// Pearson correlation coefficient.
pub fn pcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        bail!(Dimension, "pcc inputs differ in length: {} vs {}", xs.len(), ys.len());
    }
    if xs.len() < 2 {
        bail!(Undefined, "pcc needs at least two pairs, got {}", xs.len());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        bail!(Undefined, "pcc of a constant series");
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn tdr_measure(n_matched: usize, n_gt: usize) -> Result<f64> {
    if n_gt == 0 {
        bail!(Undefined, "no ground-truth beats");
    }
    Ok(n_matched as f64 / n_gt as f64)
}

/// `(detected, retained)` ground-truth EDs.
///
/// GT EDs within [`BOUNDARY_EXCLUSION`] of either record end are dropped.
/// Remaining (GT, prediction) pairs no farther apart than `lambda` are
/// assigned nearest first, each side at most once.
pub fn ed_counts(pred: &[f64], gt: &[f64], lambda: f64, record_len: f64) -> Result<(usize, usize)> {
    if lambda.is_nan() || lambda <= 0.0 {
        bail!(Parameter, "lambda must be positive, got {}", lambda);
    }
    let kept: Vec<f64> = gt
        .iter()
        .copied()
        .filter(|&t| t >= BOUNDARY_EXCLUSION && t <= record_len - BOUNDARY_EXCLUSION)
        .collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (j, &g) in kept.iter().enumerate() {
        for (i, &p) in pred.iter().enumerate() {
            let d = (p - g).abs();
            if d <= lambda {
                pairs.push((d, j, i));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_g = vec![false; kept.len()];
    let mut used_p = vec![false; pred.len()];
    let mut detected = 0;
    for (_, j, i) in pairs {
        if !used_g[j] && !used_p[i] {
            used_g[j] = true;
            used_p[i] = true;
            detected += 1;
        }
    }
    Ok((detected, kept.len()))
}

pub fn tdr_ed(pred: &[f64], gt: &[f64], lambda: f64, record_len: f64) -> Result<f64> {
    let (detected, retained) = ed_counts(pred, gt, lambda, record_len)?;
    if retained == 0 {
        bail!(Undefined, "no ground-truth ED inside the scored window");
    }
    Ok(detected as f64 / retained as f64)
}

/// The default grid: 0.01 s to 0.20 s in 0.01 s steps.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 100.0).collect()
}

/// One ED case: predictions, ground truth and record length in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdCase {
    pub pred: Vec<f64>,
    pub gt: Vec<f64>,
    pub record_len: f64,
}

/// Pooled TDR_ED at each λ.
pub fn sweep_lambda(cases: &[EdCase], lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        bail!(Parameter, "lambda grid must be ascending");
    }
    lambdas.iter().map(|&l| Ok((l, pooled_tdr_ed(cases, l)?))).collect()
}

pub fn pooled_tdr_ed(cases: &[EdCase], lambda: f64) -> Result<f64> {
    let (mut det, mut ret) = (0, 0);
    for c in cases {
        let (d, r) = ed_counts(&c.pred, &c.gt, lambda, c.record_len)?;
        det += d;
        ret += r;
    }
    if ret == 0 {
        bail!(Undefined, "no ground-truth ED inside the scored window");
    }
    Ok(det as f64 / ret as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub ratios: [f64; 3],
    pub n_repeats: usize,
    pub seed: u64,
    pub repeats: Vec<Split>,
}

/// Per repeat: shuffle, then slice train | val | test. Val and test sizes
/// are floors of their shares; the remainder goes to train.
pub fn mc_split(case_ids: &[usize], ratios: [f64; 3], n_repeats: usize, seed: u64) -> Result<SplitPlan> {
    let n = case_ids.len();
    if n < 3 {
        bail!(Data, "need at least 3 cases to split, got {}", n);
    }
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        bail!(Config, "split ratios {:?} must be in [0, 1] and sum to 1", ratios);
    }
    // The epsilon keeps products like 0.29 * 100 from flooring to 28.
    let share = |r: f64| (r * n as f64 + 1e-9).floor() as usize;
    let (n_val, n_test) = (share(ratios[1]), share(ratios[2]));
    let n_train = n - n_val - n_test;
    let repeats = (0..n_repeats)
        .map(|k| {
            let mut ids = case_ids.to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, SPLIT_STREAM + k as u64));
            ids.shuffle(&mut rng);
            Split {
                train: ids[..n_train].to_vec(),
                val: ids[n_train..n_train + n_val].to_vec(),
                test: ids[n_train + n_val..].to_vec(),
            }
        })
        .collect();
    Ok(SplitPlan {
        ratios,
        n_repeats,
        seed,
        repeats,
    })
}

/// Everything needed to score one case.
#[derive(Clone, Debug)]
pub struct EvalCase<'a> {
    pub id: usize,
    pub flow_type: FlowType,
    pub calibration: Calibration,
    pub pred_mask: &'a SegMask,
    pub gt_mask: &'a SegMask,
    pub gt_measurements: &'a [Measurement],
    pub gt_ed_times: &'a [f64],
}

impl EvalCase<'_> {
    pub fn record_len(&self) -> f64 {
        self.gt_mask.cols as f64 * self.calibration.sec_per_col
    }
}

/// A ground-truth beat with its matched prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedBeat {
    pub case_id: usize,
    pub flow_type: FlowType,
    pub gt: Measurement,
    pub pred: Measurement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: usize,
    pub flow_type: FlowType,
    /// Forward, reverse.
    pub dsc: [f64; 2],
    pub iou: [f64; 2],
    /// Whether the ground truth contains forward / reverse pixels.
    pub gt_present: [bool; 2],
    pub n_gt_beats: usize,
    pub n_pred_beats: usize,
    pub matched: Vec<MatchedBeat>,
    pub ed: EdCase,
}

pub fn evaluate_case(case: &EvalCase<'_>) -> Result<CaseResult> {
    let fg = [FlowClass::Forward, FlowClass::Reverse];
    let mut dscs = [0.0; 2];
    let mut ious = [0.0; 2];
    let mut present = [false; 2];
    for (k, &class) in fg.iter().enumerate() {
        dscs[k] = dsc(case.pred_mask, case.gt_mask, class)?;
        ious[k] = iou(case.pred_mask, case.gt_mask, class)?;
        present[k] = case.gt_mask.count(class) > 0;
    }
    let report = measure_mask(case.pred_mask, &case.calibration, case.flow_type)?;
    let gt_beats: Vec<Beat> = case.gt_measurements.iter().map(|m| m.beat).collect();
    let matched = match_beats(&report.beats, &gt_beats)
        .into_iter()
        .map(|(i, j)| MatchedBeat {
            case_id: case.id,
            flow_type: case.flow_type,
            gt: case.gt_measurements[j],
            pred: report.measurements[i],
        })
        .collect();
    Ok(CaseResult {
        id: case.id,
        flow_type: case.flow_type,
        dsc: dscs,
        iou: ious,
        gt_present: present,
        n_gt_beats: gt_beats.len(),
        n_pred_beats: report.beats.len(),
        matched,
        ed: EdCase {
            pred: report.ed_events.iter().map(|e| e.time).collect(),
            gt: case.gt_ed_times.to_vec(),
            record_len: case.record_len(),
        },
    })
}

/// Correlation of matched Vmax and VTI; `None` where undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PccRow {
    pub n: usize,
    pub vmax: Option<f64>,
    pub vti: Option<f64>,
}

impl PccRow {
    pub fn from_matched<'a>(beats: impl IntoIterator<Item = &'a MatchedBeat>) -> Self {
        let (mut gv, mut pv, mut gt, mut pt) = (vec![], vec![], vec![], vec![]);
        for b in beats {
            gv.push(b.gt.vmax);
            pv.push(b.pred.vmax);
            gt.push(b.gt.vti);
            pt.push(b.pred.vti);
        }
        Self {
            n: gv.len(),
            vmax: pcc(&gv, &pv).ok(),
            vti: pcc(&gt, &pt).ok(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub hits: usize,
    pub total: usize,
    pub rate: Option<f64>,
}

impl RateRow {
    fn new(hits: usize, total: usize) -> Self {
        Self {
            hits,
            total,
            rate: (total > 0).then(|| hits as f64 / total as f64),
        }
    }
}

/// One aggregation scope: a flow type or all cases pooled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub n_cases: usize,
    pub pcc: PccRow,
    pub tdr_measure: RateRow,
    pub tdr_ed: RateRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_cases: usize,
    pub lambda: f64,
    /// Case-averaged forward and reverse DSC.
    pub dsc: [f64; 2],
    pub iou: [f64; 2],
    pub mean_dsc: f64,
    pub mean_iou: f64,
    /// Case average of the DSC over the foreground classes present in the
    /// ground truth; an absent class scoring 1.0 does not enter it.
    pub fg_dsc: f64,
    pub fg_iou: f64,
    pub pooled: GroupReport,
    pub per_flow_type: BTreeMap<FlowType, GroupReport>,
}

fn group_report<'a>(results: impl IntoIterator<Item = &'a CaseResult> + Clone, lambda: f64) -> Result<GroupReport> {
    let (mut n_cases, mut n_matched, mut n_gt, mut det, mut ret) = (0, 0, 0, 0, 0);
    for r in results.clone() {
        n_cases += 1;
        n_matched += r.matched.len();
        n_gt += r.n_gt_beats;
        let (d, k) = ed_counts(&r.ed.pred, &r.ed.gt, lambda, r.ed.record_len)?;
        det += d;
        ret += k;
    }
    Ok(GroupReport {
        n_cases,
        pcc: PccRow::from_matched(results.into_iter().flat_map(|r| &r.matched)),
        tdr_measure: RateRow::new(n_matched, n_gt),
        tdr_ed: RateRow::new(det, ret),
    })
}

/// Aggregates per-case results. Averages run in case order.
pub fn summarize(results: &[CaseResult], lambda: f64) -> Result<EvalReport> {
    if results.is_empty() {
        bail!(Data, "nothing to evaluate");
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&CaseResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let dsc = [mean(&|r| r.dsc[0]), mean(&|r| r.dsc[1])];
    let iou = [mean(&|r| r.iou[0]), mean(&|r| r.iou[1])];
    let present_mean = |v: &[f64; 2], p: &[bool; 2]| {
        let k = p.iter().filter(|&&x| x).count();
        if k == 0 {
            (v[0] + v[1]) / 2.0
        } else {
            (0..2).filter(|&i| p[i]).map(|i| v[i]).sum::<f64>() / k as f64
        }
    };
    let fg_dsc = mean(&|r| present_mean(&r.dsc, &r.gt_present));
    let fg_iou = mean(&|r| present_mean(&r.iou, &r.gt_present));
    let mut per_flow_type = BTreeMap::new();
    for t in FlowType::ALL {
        let group: Vec<&CaseResult> = results.iter().filter(|r| r.flow_type == t).collect();
        if !group.is_empty() {
            per_flow_type.insert(t, group_report(group.iter().copied(), lambda)?);
        }
    }
    Ok(EvalReport {
        n_cases: results.len(),
        lambda,
        dsc,
        iou,
        mean_dsc: (dsc[0] + dsc[1]) / 2.0,
        mean_iou: (iou[0] + iou[1]) / 2.0,
        fg_dsc,
        fg_iou,
        pooled: group_report(results.iter(), lambda)?,
        per_flow_type,
    })
}

/// Scores every case (in parallel when enabled) and aggregates.
pub fn evaluate(cases: &[EvalCase<'_>], lambda: f64) -> Result<(EvalReport, Vec<CaseResult>)> {
    let results = par::map_indexed(cases.len(), |i| evaluate_case(&cases[i]))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(&results, lambda)?, results))
}
