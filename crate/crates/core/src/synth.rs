//! Seeded synthetic Doppler spectrograms with analytic ground truth.
//!
//! Each flow type owns a beat template: a few lobes placed at fixed
//! fractions of the cardiac period, with small per-case jitter. The
//! rendered mask is the region between the baseline and the sampled
//! envelope; the ground-truth measurements come from the analytic lobes,
//! never from the rendered pixels.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::flow::{EdEdge, FlowType};
use crate::image::{FlowClass, GrayImage, SegMask};
use crate::measure::{Beat, Calibration, Measurement};
use crate::par;

/// Unit-height lobe profile over the normalised position `x` in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LobeShape {
    HalfSine,
    /// Linear rise to 1 at `apex`, linear fall to 0.
    Triangle { apex: f64 },
    /// `min(1, gain * sin(pi x))`: steep onset, flat top.
    ClippedSine { gain: f64 },
    /// Linear rise to 1 over `rise`, linear decay to `floor`, then an
    /// abrupt stop.
    Ramp { rise: f64, floor: f64 },
    Rectangle,
}

impl LobeShape {
    pub fn eval(&self, x: f64) -> f64 {
        if !(0.0..1.0).contains(&x) {
            return 0.0;
        }
        match *self {
            LobeShape::HalfSine => (PI * x).sin(),
            LobeShape::Triangle { apex } => {
                if x < apex {
                    x / apex
                } else {
                    (1.0 - x) / (1.0 - apex)
                }
            }
            LobeShape::ClippedSine { gain } => (gain * (PI * x).sin()).min(1.0),
            LobeShape::Ramp { rise, floor } => {
                if x < rise {
                    x / rise
                } else {
                    1.0 - (1.0 - floor) * (x - rise) / (1.0 - rise)
                }
            }
            LobeShape::Rectangle => 1.0,
        }
    }

    /// Position of the maximum.
    pub fn apex(&self) -> f64 {
        match *self {
            LobeShape::HalfSine | LobeShape::ClippedSine { .. } => 0.5,
            LobeShape::Triangle { apex } => apex,
            LobeShape::Ramp { rise, .. } => rise,
            LobeShape::Rectangle => 0.0,
        }
    }

    /// Closed-form `∫₀¹ eval(x) dx`.
    pub fn unit_area(&self) -> f64 {
        match *self {
            LobeShape::HalfSine => 2.0 / PI,
            LobeShape::Triangle { .. } => 0.5,
            LobeShape::ClippedSine { gain } if gain <= 1.0 => 2.0 * gain / PI,
            LobeShape::ClippedSine { gain } => {
                let x1 = (1.0 / gain).asin() / PI;
                2.0 * gain * (1.0 - (PI * x1).cos()) / PI + (1.0 - 2.0 * x1)
            }
            LobeShape::Ramp { rise, floor } => rise / 2.0 + (1.0 - rise) * (1.0 + floor) / 2.0,
            LobeShape::Rectangle => 1.0,
        }
    }
}

/// A lobe in cardiac-phase units: `start` and `width` are fractions of the
/// period, `amplitude` is signed and relative to the case's peak velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LobeTemplate {
    pub start: f64,
    pub width: f64,
    pub amplitude: f64,
    pub shape: LobeShape,
}

/// Beat template for `flow_type`, jittered deterministically by `seed`.
pub fn beat_template(flow_type: FlowType, seed: u64) -> Vec<LobeTemplate> {
    use LobeShape::*;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x7e3a_11c5));
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let lobe = |start, width, amplitude, shape| LobeTemplate {
        start,
        width,
        amplitude,
        shape,
    };
    match flow_type {
        FlowType::AvInflow => {
            let we = u(0.18, 0.24);
            let wa = u(0.12, 0.16);
            let ratio = u(0.45, 0.8);
            vec![lobe(0.0, we, 1.0, HalfSine), lobe(we, wa, ratio, HalfSine)]
        }
        FlowType::AvRegurg => vec![lobe(0.0, u(0.36, 0.44), -1.0, ClippedSine { gain: u(1.6, 2.2) })],
        FlowType::VarEjection => vec![lobe(0.0, u(0.28, 0.36), 1.0, Triangle { apex: u(0.3, 0.45) })],
        FlowType::VarRegurg => vec![lobe(
            0.0,
            u(0.45, 0.55),
            -1.0,
            Ramp {
                rise: u(0.08, 0.12),
                floor: u(0.35, 0.5),
            },
        )],
        FlowType::TdiAnnulus => {
            let s = lobe(0.0, u(0.22, 0.26), -u(0.6, 0.8), HalfSine);
            let e_start = u(0.36, 0.40);
            let e_width = u(0.14, 0.18);
            let e = lobe(e_start, e_width, 1.0, HalfSine);
            let a = lobe(e_start + e_width, u(0.10, 0.13), u(0.5, 0.9), HalfSine);
            vec![s, e, a]
        }
        FlowType::VenousPw => {
            let ws = u(0.26, 0.30);
            let sw = lobe(0.0, ws, 1.0, HalfSine);
            let dw = lobe(ws, u(0.22, 0.26), u(0.6, 0.9), HalfSine);
            let ar = lobe(u(0.70, 0.74), u(0.10, 0.12), -u(0.3, 0.45), HalfSine);
            vec![sw, dw, ar]
        }
        FlowType::OutflowPw => vec![lobe(0.0, u(0.26, 0.32), 1.0, Triangle { apex: u(0.2, 0.3) })],
    }
}

/// Fraction of the period after which a template is silent.
pub fn template_extent(template: &[LobeTemplate]) -> f64 {
    template.iter().map(|l| l.start + l.width).fold(0.0, f64::max)
}

/// Largest forward and reverse relative amplitudes of a template.
pub fn template_amplitudes(template: &[LobeTemplate]) -> (f64, f64) {
    template.iter().fold((0.0, 0.0), |(f, r), l| {
        if l.amplitude > 0.0 {
            (f64::max(f, l.amplitude), r)
        } else {
            (f, f64::max(r, -l.amplitude))
        }
    })
}

/// Parameters of one synthetic recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub flow_type: FlowType,
    /// Beats per minute.
    pub heart_rate: f64,
    pub n_beats: usize,
    /// cm/s; the largest |velocity| of the beat template.
    pub peak_velocity: f64,
    pub noise_level: f64,
    pub rows: usize,
    pub cols: usize,
    pub calibration: Calibration,
    /// Seconds from the record start to the first beat.
    pub onset: f64,
    /// Flow-region intensity before noise.
    pub brightness: u8,
    pub seed: u64,
    /// Replaces every template lobe's profile when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_override: Option<LobeShape>,
}

impl CaseSpec {
    pub fn period(&self) -> f64 {
        60.0 / self.heart_rate
    }

    pub fn record_len(&self) -> f64 {
        self.cols as f64 * self.calibration.sec_per_col
    }

    pub fn validate(&self) -> Result<()> {
        if !(30.0..=180.0).contains(&self.heart_rate) {
            bail!(Spec, "heart rate {} outside [30, 180]", self.heart_rate);
        }
        if self.n_beats == 0 {
            bail!(Spec, "n_beats must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            bail!(Spec, "noise level {} outside [0, 1]", self.noise_level);
        }
        if !(self.peak_velocity > 0.0 && self.peak_velocity.is_finite()) {
            bail!(Spec, "peak velocity must be positive");
        }
        if self.rows == 0 || self.cols == 0 {
            bail!(Spec, "empty image");
        }
        self.calibration.validate(self.rows)?;
        let tpl = beat_template(self.flow_type, self.seed);
        let last = self.onset + (self.n_beats - 1) as f64 * self.period() + template_extent(&tpl) * self.period();
        if self.onset < 0.0 || last > self.record_len() {
            bail!(
                Spec,
                "beats span [{:.3}, {:.3}] s outside the {:.3} s record",
                self.onset,
                last,
                self.record_len()
            );
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lobe {
    pub start: f64,
    pub width: f64,
    /// Signed peak, cm/s.
    pub peak: f64,
    pub shape: LobeShape,
    pub beat: usize,
}

impl Lobe {
    pub fn velocity_at(&self, t: f64) -> f64 {
        self.peak * self.shape.eval((t - self.start) / self.width)
    }

    pub fn end(&self) -> f64 {
        self.start + self.width
    }

    pub fn peak_time(&self) -> f64 {
        self.start + self.shape.apex() * self.width
    }

    /// `∫|v| dt` over the lobe, cm.
    pub fn area(&self) -> f64 {
        self.peak.abs() * self.width * self.shape.unit_area()
    }

    pub fn direction(&self) -> FlowClass {
        if self.peak >= 0.0 {
            FlowClass::Forward
        } else {
            FlowClass::Reverse
        }
    }
}

/// Analytic signed velocity envelope of a case.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub lobes: Vec<Lobe>,
    pub n_beats: usize,
}

impl Envelope {
    pub fn velocity_at(&self, t: f64) -> f64 {
        self.lobes
            .iter()
            .find(|l| t >= l.start && t < l.end())
            .map_or(0.0, |l| l.velocity_at(t))
    }

    /// Velocity at each column centre.
    pub fn sample(&self, cols: usize, sec_per_col: f64) -> Vec<f64> {
        (0..cols)
            .map(|c| self.velocity_at((c as f64 + 0.5) * sec_per_col))
            .collect()
    }

    /// Flow interval `[start, end)` in seconds of one beat and direction.
    pub fn beat_span(&self, beat: usize, dir: FlowClass) -> Option<(f64, f64)> {
        let mut lobes = self.lobes.iter().filter(|l| l.beat == beat && l.direction() == dir);
        let first = lobes.next()?;
        Some(lobes.fold((first.start, first.end()), |(s, e), l| (s.min(l.start), e.max(l.end()))))
    }

    pub fn beat_area(&self, beat: usize, dir: FlowClass) -> f64 {
        self.lobes
            .iter()
            .filter(|l| l.beat == beat && l.direction() == dir)
            .map(Lobe::area)
            .sum()
    }
}

/// Per-beat lobes of `spec`, repeated every period from `spec.onset`.
pub fn envelope_function(spec: &CaseSpec) -> Envelope {
    let period = spec.period();
    let tpl = beat_template(spec.flow_type, spec.seed);
    let lobes = (0..spec.n_beats)
        .flat_map(|beat| {
            let t0 = spec.onset + beat as f64 * period;
            tpl.iter().map(move |l| Lobe {
                start: t0 + l.start * period,
                width: l.width * period,
                peak: l.amplitude * spec.peak_velocity,
                shape: spec.shape_override.unwrap_or(l.shape),
                beat,
            })
        })
        .collect();
    Envelope {
        lobes,
        n_beats: spec.n_beats,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCase {
    pub spec: CaseSpec,
    pub spectrogram: GrayImage,
    pub gt_mask: SegMask,
    pub gt_beats: Vec<Beat>,
    pub gt_measurements: Vec<Measurement>,
    pub gt_ed_times: Vec<f64>,
}

impl SynthCase {
    pub fn calibration(&self) -> &Calibration {
        &self.spec.calibration
    }

    pub fn flow_type(&self) -> FlowType {
        self.spec.flow_type
    }
}

/// SplitMix64 finaliser over `seed ^ stream`.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = (seed ^ stream).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const RENDER_STREAM: u64 = 0x5eed_0001;
const SHIFT_STREAM: u64 = 0x5eed_0002;
const SPEC_STREAM: u64 = 0x5eed_0003;
const ORDER_STREAM: u64 = 0x5eed_0004;

/// Approximately standard normal: sum of 12 uniforms minus 6.
fn gaussish(rng: &mut impl Rng) -> f64 {
    (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0
}

fn background_pixel(noise_level: f64, rng: &mut impl Rng) -> u8 {
    let g = gaussish(rng);
    (noise_level * (40.0 + 35.0 * g)).round().clamp(0.0, 255.0) as u8
}

/// Rows above (forward) or below (reverse) the baseline occupied by a
/// sampled velocity.
pub fn extent_rows(v: f64, cmps_per_row: f64) -> usize {
    (v.abs() / cmps_per_row).round() as usize
}

pub fn generate_case(spec: &CaseSpec) -> Result<SynthCase> {
    spec.validate()?;
    let (rows, cols) = (spec.rows, spec.cols);
    let calib = spec.calibration;
    let b = calib.baseline_row;
    let env = envelope_function(spec);
    let samples = env.sample(cols, calib.sec_per_col);

    // Mask and noiseless signal.
    let mut mask = SegMask::empty(rows, cols);
    let mut signal = vec![0.0f64; rows * cols];
    let bright = spec.brightness as f64;
    for c in 0..cols {
        signal[b * cols + c] = bright;
    }
    for (c, &v) in samples.iter().enumerate() {
        let e = extent_rows(v, calib.cmps_per_row);
        if e == 0 {
            continue;
        }
        let fits = if v > 0.0 { e <= b } else { b + e < rows };
        if !fits {
            bail!(
                Spec,
                "envelope of {:.1} cm/s at column {} exceeds the image velocity range",
                v,
                c
            );
        }
        // Partial coverage of the outermost pixel.
        let coverage = (v.abs() / calib.cmps_per_row - (e - 1) as f64).clamp(0.0, 1.0);
        for d in 1..=e {
            let (r, class) = if v > 0.0 {
                (b - d, FlowClass::Forward)
            } else {
                (b + d, FlowClass::Reverse)
            };
            mask.set(r, c, class);
            signal[r * cols + c] = if d == e { bright * coverage } else { bright };
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, RENDER_STREAM));
    let n = spec.noise_level;
    let pixels = signal
        .iter()
        .map(|&s| {
            let speckle = rng.gen_range(1.0 - 0.5 * n..=1.0);
            let g = gaussish(&mut rng);
            (s * speckle + n * (40.0 + 35.0 * g)).round().clamp(0.0, 255.0) as u8
        })
        .collect();

    let (gt_beats, gt_measurements, gt_ed_times) = ground_truth(spec, &env, &samples);
    Ok(SynthCase {
        spec: spec.clone(),
        spectrogram: GrayImage::new(rows, cols, pixels)?,
        gt_mask: mask,
        gt_beats,
        gt_measurements,
        gt_ed_times,
    })
}

/// Beats are the columns whose centres fall inside each analytic flow
/// interval; Vmax is the peak of the sampled envelope over those columns,
/// VTI the closed-form lobe area, ED the rule edge of the analytic interval.
fn ground_truth(spec: &CaseSpec, env: &Envelope, samples: &[f64]) -> (Vec<Beat>, Vec<Measurement>, Vec<f64>) {
    let spc = spec.calibration.sec_per_col;
    let rule = spec.flow_type.ed_rule();
    let mut beats = Vec::new();
    let mut measurements = Vec::new();
    let mut eds = Vec::new();
    for k in 0..env.n_beats {
        for dir in [FlowClass::Forward, FlowClass::Reverse] {
            let Some((ts, te)) = env.beat_span(k, dir) else { continue };
            let start_col = (ts / spc - 0.5).ceil().max(0.0) as usize;
            let end_col = ((te / spc - 0.5).ceil() as usize).saturating_sub(1).min(spec.cols - 1);
            if end_col < start_col {
                continue;
            }
            let beat = Beat {
                start_col,
                end_col,
                direction: dir,
            };
            let vmax = samples[start_col..=end_col]
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max);
            beats.push(beat);
            measurements.push(Measurement {
                beat,
                vmax,
                vti: env.beat_area(k, dir),
            });
            if dir == rule.direction {
                eds.push(match rule.edge {
                    EdEdge::Initiation => ts,
                    EdEdge::Termination => te,
                });
            }
        }
    }
    let mut order: Vec<usize> = (0..beats.len()).collect();
    order.sort_by_key(|&i| (beats[i].start_col, beats[i].direction));
    let beats: Vec<Beat> = order.iter().map(|&i| beats[i]).collect();
    let measurements = order.iter().map(|&i| measurements[i]).collect();
    (beats, measurements, eds)
}

/// Moves the whole display by `delta_rows` (positive = down). Vacated rows
/// receive fresh background noise drawn from the case seed; ground-truth
/// quantities are baseline-relative and stay unchanged.
pub fn apply_baseline_shift(case: &SynthCase, delta_rows: i64) -> Result<SynthCase> {
    let rows = case.spec.rows as i64;
    let cols = case.spec.cols;
    if delta_rows.abs() >= rows {
        bail!(Range, "shift {} not smaller than {} rows", delta_rows, rows);
    }
    if delta_rows == 0 {
        return Ok(case.clone());
    }
    let occupied = (0..case.spec.rows).filter(|&r| {
        r == case.spec.calibration.baseline_row
            || case.gt_mask.labels[r * cols..(r + 1) * cols].iter().any(|&l| l != 0)
    });
    for r in occupied {
        let nr = r as i64 + delta_rows;
        if nr < 0 || nr >= rows {
            bail!(Range, "shift {} clips the envelope at row {}", delta_rows, r);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(case.spec.seed, SHIFT_STREAM ^ delta_rows as u64));
    let mut img = case.spectrogram.clone();
    let mut mask = SegMask::empty(case.spec.rows, cols);
    for r in 0..rows {
        let src = r - delta_rows;
        let dst = r as usize * cols..(r as usize + 1) * cols;
        if (0..rows).contains(&src) {
            let s = src as usize * cols..(src as usize + 1) * cols;
            img.pixels[dst.clone()].copy_from_slice(&case.spectrogram.pixels[s.clone()]);
            mask.labels[dst].copy_from_slice(&case.gt_mask.labels[s]);
        } else {
            for p in &mut img.pixels[dst] {
                *p = background_pixel(case.spec.noise_level, &mut rng);
            }
        }
    }
    let mut out = case.clone();
    out.spec.calibration.baseline_row = (case.spec.calibration.baseline_row as i64 + delta_rows) as usize;
    out.spectrogram = img;
    out.gt_mask = mask;
    Ok(out)
}

/// Sampling ranges for [`make_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub rows: usize,
    pub cols: usize,
    pub heart_rate: (f64, f64),
    pub n_beats: (usize, usize),
    pub noise_level: (f64, f64),
    pub brightness: (u8, u8),
    /// Fraction of the usable rows the envelope spans.
    pub fill: (f64, f64),
    /// Rows kept free above and below the content so baseline shifts of
    /// up to this many rows never clip.
    pub headroom_rows: usize,
    /// Per-type peak velocity ranges (cm/s); missing types use defaults.
    pub peak_velocity: BTreeMap<FlowType, (f64, f64)>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            rows: 256,
            cols: 512,
            heart_rate: (50.0, 110.0),
            n_beats: (2, 4),
            noise_level: (0.1, 0.6),
            brightness: (140, 230),
            fill: (0.55, 0.9),
            headroom_rows: 16,
            peak_velocity: BTreeMap::new(),
        }
    }
}

pub fn default_peak_range(t: FlowType) -> (f64, f64) {
    match t {
        FlowType::AvInflow => (50.0, 120.0),
        FlowType::AvRegurg => (300.0, 550.0),
        FlowType::VarEjection => (80.0, 200.0),
        FlowType::VarRegurg => (250.0, 450.0),
        FlowType::TdiAnnulus => (6.0, 18.0),
        FlowType::VenousPw => (30.0, 70.0),
        FlowType::OutflowPw => (60.0, 140.0),
    }
}

impl DatasetConfig {
    pub fn peak_range(&self, t: FlowType) -> (f64, f64) {
        self.peak_velocity.get(&t).copied().unwrap_or_else(|| default_peak_range(t))
    }

    pub fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (f64, f64)| lo <= hi && lo.is_finite() && hi.is_finite();
        if !ok_range(self.heart_rate) || self.heart_rate.0 < 30.0 || self.heart_rate.1 > 180.0 {
            bail!(Config, "heart rate range {:?} outside [30, 180]", self.heart_rate);
        }
        if self.n_beats.0 == 0 || self.n_beats.0 > self.n_beats.1 {
            bail!(Config, "bad n_beats range {:?}", self.n_beats);
        }
        if !ok_range(self.noise_level) || self.noise_level.0 < 0.0 || self.noise_level.1 > 1.0 {
            bail!(Config, "noise range {:?} outside [0, 1]", self.noise_level);
        }
        if !ok_range(self.fill) || self.fill.0 <= 0.0 || self.fill.1 >= 1.0 {
            bail!(Config, "fill range {:?} must lie in (0, 1)", self.fill);
        }
        if self.brightness.0 > self.brightness.1 {
            bail!(Config, "bad brightness range {:?}", self.brightness);
        }
        if self.rows < 2 * self.headroom_rows + 8 || self.cols < 16 {
            bail!(Config, "{}x{} image too small for headroom {}", self.rows, self.cols, self.headroom_rows);
        }
        for t in FlowType::ALL {
            let r = self.peak_range(t);
            if !ok_range(r) || r.0 <= 0.0 {
                bail!(Config, "bad peak velocity range {:?} for {}", r, t);
            }
        }
        Ok(())
    }

    /// Draws a valid spec of `flow_type` from the configured ranges.
    pub fn sample_spec(&self, flow_type: FlowType, seed: u64) -> CaseSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, SPEC_STREAM));
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo < hi { rng.gen_range(lo..hi) } else { lo };
        let heart_rate = uniform(&mut rng, self.heart_rate);
        let n_beats = rng.gen_range(self.n_beats.0..=self.n_beats.1);
        let noise_level = uniform(&mut rng, self.noise_level);
        let brightness = rng.gen_range(self.brightness.0..=self.brightness.1);
        let peak_velocity = uniform(&mut rng, self.peak_range(flow_type));
        let fill = uniform(&mut rng, self.fill);

        let tpl = beat_template(flow_type, seed);
        let period = 60.0 / heart_rate;
        let sec_per_col = n_beats as f64 * period / self.cols as f64;
        let quiet = (1.0 - template_extent(&tpl)) * period;
        let onset = uniform(&mut rng, (0.2 * quiet, 0.8 * quiet));

        let (fa, ra) = template_amplitudes(&tpl);
        let h = self.headroom_rows;
        let span = (self.rows - 2 * h - 1) as f64;
        let cmps_per_row = peak_velocity * (fa + ra) / (fill * span);
        let need = |a: f64| if a > 0.0 { (a * peak_velocity / cmps_per_row).round() as usize } else { 0 };
        let (nf, nr) = (need(fa), need(ra));
        let lo = h + nf;
        let hi = self.rows - 1 - h - nr;
        let baseline_row = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        CaseSpec {
            flow_type,
            heart_rate,
            n_beats,
            peak_velocity,
            noise_level,
            rows: self.rows,
            cols: self.cols,
            calibration: Calibration {
                sec_per_col,
                cmps_per_row,
                baseline_row,
            },
            onset,
            brightness,
            seed,
            shape_override: None,
        }
    }
}

/// Largest-remainder apportionment of `n` cases over the mix; ties go to
/// the earlier flow type.
pub fn type_counts(n: usize, mix: &BTreeMap<FlowType, f64>) -> Result<BTreeMap<FlowType, usize>> {
    if mix.is_empty() {
        bail!(Config, "empty flow-type mix");
    }
    let total: f64 = mix.values().sum();
    if (total - 1.0).abs() > 1e-9 || mix.values().any(|&f| f < 0.0) {
        bail!(Config, "flow-type fractions must be non-negative and sum to 1, got {}", total);
    }
    let mut counts: BTreeMap<FlowType, usize> = BTreeMap::new();
    let mut rema: Vec<(f64, FlowType)> = Vec::new();
    for (&t, &f) in mix {
        let q = f * n as f64;
        counts.insert(t, q.floor() as usize);
        rema.push((q - q.floor(), t));
    }
    let assigned: usize = counts.values().sum();
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
    for (_, t) in rema.into_iter().take(n - assigned) {
        *counts.get_mut(&t).expect("present") += 1;
    }
    Ok(counts)
}

pub fn uniform_mix() -> BTreeMap<FlowType, f64> {
    FlowType::ALL.iter().map(|&t| (t, 1.0 / 7.0)).collect()
}

/// Per-case seed derived from the master seed.
pub fn case_seed(master: u64, index: usize) -> u64 {
    mix(master, 0xca5e_0000_0000 + index as u64)
}

/// `n_cases` specs: type counts by largest remainder, order shuffled by
/// `seed`, each case with its own derived seed.
pub fn dataset_specs(
    n_cases: usize,
    type_mix: &BTreeMap<FlowType, f64>,
    seed: u64,
    config: &DatasetConfig,
) -> Result<Vec<CaseSpec>> {
    config.validate()?;
    let counts = type_counts(n_cases, type_mix)?;
    let mut types: Vec<FlowType> = counts
        .iter()
        .flat_map(|(&t, &n)| std::iter::repeat_n(t, n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, ORDER_STREAM));
    rand::seq::SliceRandom::shuffle(types.as_mut_slice(), &mut rng);
    Ok(types
        .into_iter()
        .enumerate()
        .map(|(i, t)| config.sample_spec(t, case_seed(seed, i)))
        .collect())
}

pub fn make_dataset(
    n_cases: usize,
    type_mix: &BTreeMap<FlowType, f64>,
    seed: u64,
    config: &DatasetConfig,
) -> Result<Vec<SynthCase>> {
    let specs = dataset_specs(n_cases, type_mix, seed, config)?;
    par::map_indexed(specs.len(), |i| generate_case(&specs[i]))
        .into_iter()
        .collect()
}
