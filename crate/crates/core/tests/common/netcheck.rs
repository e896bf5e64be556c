//! Finite-difference check of the whole tiny network.

#![allow(dead_code)]

use dopplerkit_core::autodiff::check::{gradcheck, GradCheck};
use dopplerkit_core::net::{total_loss, Model, NetworkConfig, IGNORE_INDEX};
use dopplerkit_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(anti_alias: bool, shape_embed: bool) -> NetworkConfig {
    NetworkConfig {
        depth: 2,
        base_channels: 4,
        input_hw: (16, 32),
        anti_alias,
        shape_embed,
        ..NetworkConfig::default()
    }
}

/// Checks the total loss gradient with respect to the input batch (every
/// pixel) and up to `per_tensor` random coordinates of each parameter.
pub fn network_gradcheck(cfg: &NetworkConfig, trial: u64, per_tensor: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
    let model = Model::build(cfg.clone(), trial).unwrap();
    let (h, w) = cfg.input_hw;
    let n = 2;
    let x = Tensor::from_fn(&[n, 1, h, w], |_| rng.gen_range(-1.0..1.0));
    let seg: Vec<usize> = (0..n * h * w)
        .map(|_| if rng.gen_bool(0.1) { IGNORE_INDEX } else { rng.gen_range(0..3) })
        .collect();
    let flow: Vec<usize> = (0..n).map(|_| rng.gen_range(0..7)).collect();

    let mut inputs = vec![x];
    inputs.extend(model.params.iter().map(|p| p.tensor.clone()));
    let mut coords: Vec<(usize, usize)> = (0..inputs[0].len()).map(|e| (0, e)).collect();
    for (i, t) in inputs.iter().enumerate().skip(1) {
        if t.len() <= per_tensor {
            coords.extend((0..t.len()).map(|e| (i, e)));
        } else {
            coords.extend(rand::seq::index::sample(&mut rng, t.len(), per_tensor).into_iter().map(|e| (i, e)));
        }
    }
    gradcheck(&inputs, 1e-6, Some(&coords), |tape, vars| {
        let fwd = model.forward_with_params(tape, vars[0], vars[1..].to_vec())?;
        Ok(total_loss(tape, fwd.seg_logits, &seg, fwd.shape_logits, &flow, cfg.mu)?.total)
    })
    .unwrap()
}
