mod common;

use common::suite::{self, project, rand_tensor};
use dopplerkit_core::autodiff::Tape;
use dopplerkit_core::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

const OP_TOL: f64 = 1e-6;

#[test]
fn gradcheck_every_op() {
    for (name, err) in suite::op_gradchecks(10) {
        assert!(err < OP_TOL, "{name}: rel err {err:e}");
    }
}

#[test]
fn oracle_equivalence_random() {
    let worst = suite::oracle_equivalence(100, 2);
    assert!(worst <= 1e-12, "{worst:e}");
}

#[test]
fn conv2d_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[1, 1, 4, 5]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
    let b = tape.constant(t(&[1], &[0.0]));
    let y = tape.conv2d(xv, w, b, 1, 0).unwrap();
    assert_eq!(tape.value(y), &x);

    let c = tape.constant(Tensor::full(&[1, 1, 5, 5], 0.7));
    let ones = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = tape.conv2d(c, ones, b, 1, 0).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
    assert!(tape.value(y).data().iter().all(|v| (v - 6.3).abs() < 1e-12));

    let bad = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
    assert!(matches!(tape.conv2d(c, bad, b, 1, 0), Err(Error::Dimension(_))));
}

#[test]
fn blur_pool_examples() {
    let mut tape = Tape::new();
    for k in [1, 3, 5, 7] {
        let c = tape.constant(Tensor::full(&[1, 2, 9, 8], 0.3));
        let y = tape.blur_pool(c, k, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 5, 4]);
        assert!(tape.value(y).data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }
    let mut img = Tensor::zeros(&[1, 1, 7, 7]);
    img.data_mut()[3 * 7 + 3] = 1.0;
    let x = tape.constant(img);
    let y = tape.blur_pool(x, 3, 1).unwrap();
    let row = [0.25, 0.5, 0.25];
    for r in 0usize..7 {
        for c in 0usize..7 {
            let want = if r.abs_diff(3) <= 1 && c.abs_diff(3) <= 1 {
                row[r + 1 - 3] * row[c + 1 - 3]
            } else {
                0.0
            };
            assert_eq!(tape.value(y).data()[r * 7 + c], want);
        }
    }
    assert_eq!(tape.value(y).data()[3 * 7 + 3], 4.0 / 16.0);
    assert!(matches!(tape.blur_pool(x, 4, 2), Err(Error::Parameter(_))));
}

#[test]
fn blur_pool_shift_equivariance() {
    assert!(suite::blur_pool_equivariance(4) <= 1e-12);
}

#[test]
fn max_pool_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.max_pool(x, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);
    // Ties route the gradient to the first maximum.
    let z = tape.leaf(Tensor::full(&[1, 1, 2, 2], 5.0), true);
    let y = tape.max_pool(z, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0]);
    let l = tape.sum(y);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(z).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn upsample_gap_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
    let y = tape.upsample_nearest2x(x).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0; 4]);
    let x = tape.constant(t(&[1, 1, 2, 2], &[0.0, 2.0, 4.0, 6.0]));
    let y = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0]);
    // Stride-2 top-left subsampling undoes the upsampling.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = rand_tensor(&mut rng, &[2, 3, 4, 5]);
    let rv = tape.constant(r.clone());
    let up = tape.upsample_nearest2x(rv).unwrap();
    let ones = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let zero = tape.constant(Tensor::zeros(&[1]));
    for ch in 0..3 {
        let plane = Tensor::from_fn(&[2, 1, 8, 10], |i| {
            let (s, rest) = (i / 80, i % 80);
            tape.value(up).data()[(s * 3 + ch) * 80 + rest]
        });
        let pv = tape.constant(plane);
        let down = tape.conv2d(pv, ones, zero, 2, 0).unwrap();
        for s in 0..2 {
            assert_eq!(
                &tape.value(down).data()[s * 20..(s + 1) * 20],
                &r.data()[(s * 3 + ch) * 20..(s * 3 + ch + 1) * 20]
            );
        }
    }
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[-1.0, 2.0]));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = rand_tensor(&mut rng, &[1, 2, 3, 3]);
    let av = tape.constant(a.clone());
    let z = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let s = tape.add(av, z).unwrap();
    assert_eq!(tape.value(s), &a);
    let b = rand_tensor(&mut rng, &[1, 3, 3, 3]);
    let bv = tape.constant(b.clone());
    let cat = tape.concat_channels(av, bv).unwrap();
    assert_eq!(tape.value(cat).shape(), &[1, 5, 3, 3]);
    assert_eq!(&tape.value(cat).data()[..18], a.data());
    assert_eq!(&tape.value(cat).data()[18..], b.data());
    assert!(tape.add(av, bv).is_err());
    let odd = tape.constant(Tensor::zeros(&[1, 1, 2, 3]));
    assert!(tape.concat_channels(av, odd).is_err());
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let u = tape.constant(Tensor::zeros(&[3, 2]));
    let y = tape.cross_entropy(u, &[0, 1, 1], None).unwrap();
    assert!((tape.value(y).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    let u7 = tape.constant(Tensor::full(&[1, 7], 0.4));
    let y = tape.cross_entropy(u7, &[3], None).unwrap();
    assert!((tape.value(y).data()[0] - 7f64.ln()).abs() < 1e-15);

    let conf = tape.constant(t(&[1, 3], &[0.0, 1000.0, 0.0]));
    let y = tape.cross_entropy(conf, &[1], None).unwrap();
    assert_eq!(tape.value(y).data()[0], 0.0);

    let l = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
    let y = tape.cross_entropy(l, &[0], None).unwrap();
    let closed = -1.0 + (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
    assert!((tape.value(y).data()[0] - closed).abs() < 1e-15);
    assert!((closed - 2.407606).abs() < 1e-6);

    assert!(matches!(tape.cross_entropy(l, &[3], None), Err(Error::Index(_))));
    assert!(matches!(tape.cross_entropy(l, &[9], Some(9)), Err(Error::Contract(_))));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[2, 3], 3.0), true);
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 6]);
    // A second pass accumulates.
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0; 6]);
    tape.zero_grad();

    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[6.0; 6]);
    assert!(matches!(tape.backward(sq), Err(Error::Contract(_))));

    // Non-leaf and constant nodes keep no gradient.
    let c = tape.constant(Tensor::full(&[2, 3], 1.0));
    let p = tape.mul(x, c).unwrap();
    let l = tape.sum(p);
    tape.backward(l).unwrap();
    assert!(tape.grad(c).is_none());
    assert!(tape.grad(p).is_none());
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&mut rng, &[3, 2, 8, 8]), true);
        let w = tape.leaf(rand_tensor(&mut rng, &[4, 2, 3, 3]), true);
        let b = tape.leaf(rand_tensor(&mut rng, &[4]), true);
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        let y = tape.blur_pool(y, 3, 2).unwrap();
        let l = project(&mut tape, y, 1).unwrap();
        tape.backward(l).unwrap();
        (tape.value(l).clone(), tape.grad(w).unwrap().clone(), tape.grad(x).unwrap().clone())
    };
    assert_eq!(run(), run());
}
