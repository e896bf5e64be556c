//! Property checks shared by the unit-level tests and the acceptance
//! runner. Each returns the worst observed error instead of asserting.

#![allow(dead_code)]

use dopplerkit_core::autodiff::check::gradcheck;
use dopplerkit_core::autodiff::{Tape, Var};
use dopplerkit_core::net::{Model, NetworkConfig};
use dopplerkit_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles;

pub const FD_STEP: f64 = 1e-6;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `sum(out ⊙ r)` for a fixed random `r`, so every output element carries a
/// distinct weight into the scalar being checked.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(&mut rng, tape.value(out).shape());
    let r = tape.constant(r);
    let p = tape.mul(out, r)?;
    Ok(tape.sum(p))
}

/// Worst relative error of `f` over `trials` random inputs of `shapes`.
pub fn check_op(shapes: &[&[usize]], trials: u64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let report = gradcheck(&inputs, FD_STEP, None, |tape, v| {
            let out = f(tape, v)?;
            if tape.value(out).is_scalar() {
                Ok(out)
            } else {
                project(tape, out, 7 + trial)
            }
        })
        .unwrap();
        assert!(report.checked > 0, "nothing checked");
        worst = worst.max(report.max_rel_err);
    }
    worst
}

/// Every differentiable op, in several configurations, each over `trials`
/// random inputs. Returns `(label, worst relative error)`.
pub fn op_gradchecks(trials: u64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut push = |name: String, err: f64| out.push((name, err));
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        push(
            format!("conv2d s{stride} p{pad}"),
            check_op(&[&[2, 3, 6, 7], &[4, 3, 3, 3], &[4]], trials, |tp, v| {
                tp.conv2d(v[0], v[1], v[2], stride, pad)
            }),
        );
    }
    push(
        "conv2d 1x1".into(),
        check_op(&[&[2, 3, 4, 5], &[2, 3, 1, 1], &[2]], trials, |tp, v| tp.conv2d(v[0], v[1], v[2], 1, 0)),
    );
    for (k, s) in [(3, 2), (5, 2), (3, 1)] {
        push(
            format!("blur_pool k{k} s{s}"),
            check_op(&[&[2, 2, 7, 6]], trials, |tp, v| tp.blur_pool(v[0], k, s)),
        );
    }
    for (win, s) in [(2, 2), (2, 1), (3, 2)] {
        push(
            format!("max_pool {win} s{s}"),
            check_op(&[&[2, 2, 6, 7]], trials, |tp, v| tp.max_pool(v[0], win, s)),
        );
    }
    push("upsample".into(), check_op(&[&[2, 2, 3, 4]], trials, |tp, v| tp.upsample_nearest2x(v[0])));
    push("global_avg_pool".into(), check_op(&[&[2, 3, 4, 5]], trials, |tp, v| tp.global_avg_pool(v[0])));
    push("relu".into(), check_op(&[&[2, 3, 4, 4]], trials, |tp, v| Ok(tp.relu(v[0]))));
    push("sigmoid".into(), check_op(&[&[2, 3, 4, 4]], trials, |tp, v| Ok(tp.sigmoid(v[0]))));
    push("add".into(), check_op(&[&[2, 3, 4, 4], &[2, 3, 4, 4]], trials, |tp, v| tp.add(v[0], v[1])));
    push(
        "add broadcast".into(),
        check_op(&[&[2, 3, 4, 4], &[2, 3, 1, 1]], trials, |tp, v| tp.add(v[0], v[1])),
    );
    push("mul".into(), check_op(&[&[2, 3, 4, 4], &[2, 3, 4, 4]], trials, |tp, v| tp.mul(v[0], v[1])));
    push(
        "mul broadcast".into(),
        check_op(&[&[2, 3, 4, 4], &[2, 3, 1, 1]], trials, |tp, v| tp.mul(v[0], v[1])),
    );
    push(
        "concat_channels".into(),
        check_op(&[&[2, 1, 3, 4], &[2, 2, 3, 4]], trials, |tp, v| tp.concat_channels(v[0], v[1])),
    );
    push("scale".into(), check_op(&[&[2, 3]], trials, |tp, v| Ok(tp.scale(v[0], -2.5))));
    push("sum".into(), check_op(&[&[2, 3]], trials, |tp, v| Ok(tp.sum(v[0]))));
    push("reshape".into(), check_op(&[&[2, 3, 2, 2]], trials, |tp, v| tp.reshape(v[0], vec![6, 4])));
    let targets = [0, 2, 255, 1, 1, 0, 2, 255, 0, 1, 2, 2];
    push(
        "cross_entropy".into(),
        check_op(&[&[2, 3, 2, 3]], trials, |tp, v| tp.cross_entropy(v[0], &targets, Some(255))),
    );
    push(
        "cross_entropy 2d".into(),
        check_op(&[&[4, 7]], trials, |tp, v| tp.cross_entropy(v[0], &[6, 0, 3, 2], None)),
    );
    out
}

/// Kernels against the brute-force oracles on `instances` random inputs of
/// at most 2×4×16×16. Returns the largest absolute difference seen.
pub fn oracle_equivalence(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(1..=2);
        let c = rng.gen_range(1..=4);
        let h = rng.gen_range(3..=16);
        let w = rng.gen_range(3..=16);
        let x = rand_tensor(&mut rng, &[n, c, h, w]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());

        let o = rng.gen_range(1..=4);
        let k = [1, 3][rng.gen_range(0..2)];
        let pad = rng.gen_range(0..=k / 2);
        let stride = rng.gen_range(1..=2);
        let wt = rand_tensor(&mut rng, &[o, c, k, k]);
        let b = rand_tensor(&mut rng, &[o]);
        let (wv, bv) = (tape.constant(wt.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
        let (want, _, _) = oracles::conv2d(x.data(), [n, c, h, w], wt.data(), [o, c, k, k], b.data(), stride, pad);
        worst = worst.max(oracles::max_abs_diff(tape.value(y).data(), &want));

        let win = rng.gen_range(1..=3);
        let s = rng.gen_range(1..=2);
        let y = tape.max_pool(xv, win, s).unwrap();
        let (want, _, _) = oracles::max_pool(x.data(), [n, c, h, w], win, s);
        worst = worst.max(oracles::max_abs_diff(tape.value(y).data(), &want));

        let bk = [1, 3, 5][rng.gen_range(0..3)];
        let s = rng.gen_range(1..=3);
        let y = tape.blur_pool(xv, bk, s).unwrap();
        let (want, ho, wo) = oracles::blur_pool(x.data(), [n, c, h, w], bk, s);
        assert_eq!(tape.value(y).shape(), &[n, c, ho, wo]);
        worst = worst.max(oracles::max_abs_diff(tape.value(y).data(), &want));

        let targets: Vec<usize> = (0..n * h * w).map(|_| rng.gen_range(0..c)).collect();
        let y = tape.cross_entropy(xv, &targets, None).unwrap();
        let want = oracles::cross_entropy(x.data(), n, c, h * w, &targets, None);
        worst = worst.max((tape.value(y).data()[0] - want).abs());

        let y = tape.upsample_nearest2x(xv).unwrap();
        worst = worst.max(oracles::max_abs_diff(tape.value(y).data(), &oracles::upsample2x(x.data(), [n, c, h, w])));
        let y = tape.global_avg_pool(xv).unwrap();
        worst = worst.max(oracles::max_abs_diff(tape.value(y).data(), &oracles::global_avg_pool(x.data(), [n, c, h, w])));
    }
    worst
}

/// Blur pooling commutes with row shifts that are multiples of the stride,
/// away from the borders. Returns the largest interior difference.
pub fn blur_pool_equivariance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (32, 12);
    let mut worst = 0.0f64;
    for (k, stride, m) in [(3, 2, 1), (5, 2, 2), (3, 3, 1), (5, 2, 3)] {
        let s = stride * m;
        let x = rand_tensor(&mut rng, &[1, 2, h, w]);
        // shifted[r] = x[r - s]; the top rows get fresh values.
        let shifted = Tensor::from_fn(&[1, 2, h, w], |i| {
            let r = (i / w) % h;
            if r >= s { x.data()[i - s * w] } else { rng.gen_range(-1.0..1.0) }
        });
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(x), tape.constant(shifted));
        let ya = tape.blur_pool(a, k, stride).unwrap();
        let yb = tape.blur_pool(b, k, stride).unwrap();
        let [_, _, ho, wo] = tape.value(ya).dims4().unwrap();
        let border = (k - 1) / 2 + m;
        for p in 0..2 {
            for i in border..ho - border {
                for j in 0..wo {
                    let va = tape.value(ya).data()[(p * ho + i) * wo + j];
                    let vb = tape.value(yb).data()[(p * ho + i + m) * wo + j];
                    worst = worst.max((va - vb).abs());
                }
            }
        }
    }
    worst
}

/// Rows `lo..hi` of every plane, concatenated.
pub fn rows(t: &Tensor, lo: usize, hi: usize) -> Vec<f64> {
    let [n, c, h, w] = t.dims4().unwrap();
    let mut out = Vec::new();
    for p in 0..n * c {
        out.extend_from_slice(&t.data()[(p * h + lo) * w..(p * h + hi) * w]);
    }
    out
}

/// Moves every plane down by `s` rows, filling the top with `fill`.
pub fn shift_down(x: &Tensor, s: usize, fill: f64) -> Tensor {
    let [_, _, h, w] = x.dims4().unwrap();
    Tensor::from_fn(x.shape(), |i| {
        let r = (i / w) % h;
        if r >= s { x.data()[i - s * w] } else { fill }
    })
}

/// Interior feature equivariance of an anti-aliased depth-3 network.
/// Returns `(input shift, features compared, max difference)` for a 2-row
/// shift at the first downsampling output and an 8-row shift at the
/// bottleneck.
pub fn network_equivariance(seed: u64) -> Vec<(usize, &'static str, f64)> {
    let cfg = NetworkConfig {
        depth: 3,
        base_channels: 4,
        input_hw: (256, 16),
        ..NetworkConfig::default()
    };
    let model = Model::build(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[1, 1, 256, 16]);
    // A bottleneck row sees about ±44 input rows, so 6 bottleneck rows of
    // margin (48 input rows) keep the compared rows clear of both image
    // borders and of the shifted-in band.
    let mut out = Vec::new();
    for (s, level, margin) in [(2usize, 0usize, 16usize), (8, 3, 6)] {
        let xs = shift_down(&x, s, 0.0);
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(x.clone()), tape.constant(xs));
        let fa = model.forward(&mut tape, a, false).unwrap();
        let fb = model.forward(&mut tape, b, false).unwrap();
        let (va, vb, name) = if level == 3 {
            (tape.value(fa.bottleneck), tape.value(fb.bottleneck), "bottleneck")
        } else {
            (tape.value(fa.downsampled[level]), tape.value(fb.downsampled[level]), "first downsample")
        };
        let h = va.dims4().unwrap()[2];
        let m = 1;
        let diff = oracles::max_abs_diff(&rows(va, margin, h - margin - m), &rows(vb, margin + m, h - margin));
        out.push((s, name, diff));
    }
    out
}
