use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Fusion, NetworkConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Name and shape of every learnable tensor, in forward (and file) order.
pub fn layer_plan(cfg: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    let mut plan = Vec::new();
    let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
        plan.push((format!("{name}.weight"), vec![cout, cin, k, k]));
        plan.push((format!("{name}.bias"), vec![cout]));
    };
    let mut cin = 1;
    for i in 0..cfg.depth {
        let w = cfg.width(i);
        conv(format!("enc{i}.conv1"), cin, w, 3);
        conv(format!("enc{i}.conv2"), w, w, 3);
        cin = w;
    }
    let wb = cfg.width(cfg.depth);
    conv("bottleneck.conv1".into(), cin, wb, 3);
    conv("bottleneck.conv2".into(), wb, wb, 3);
    if cfg.shape_embed {
        conv("shape.context".into(), wb, wb, 1);
        conv("shape.fuse".into(), wb, wb, 3);
        conv("shape.head".into(), wb, cfg.num_flow_types, 1);
    }
    for i in (0..cfg.depth).rev() {
        let w = cfg.width(i);
        conv(format!("dec{i}.conv1"), cfg.width(i + 1) + w, w, 3);
        conv(format!("dec{i}.conv2"), w, w, 3);
    }
    conv("head".into(), cfg.base_channels, cfg.num_seg_classes, 1);
    plan
}

pub fn parameter_count(cfg: &NetworkConfig) -> usize {
    layer_plan(cfg)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

/// Segmentation network: parameters plus the configuration that fixes
/// their shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub params: Vec<Param>,
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub seg_logits: Var,
    pub shape_logits: Option<Var>,
    /// Bottleneck feature map before shape embedding.
    pub bottleneck: Var,
    /// Output of every encoder downsampling step, shallowest first.
    pub downsampled: Vec<Var>,
    pub params: Vec<Var>,
}

impl Model {
    /// He-uniform weights (`U(±sqrt(6 / fan_in))`), zero biases.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layer_plan(&config)
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                    let bound = (6.0 / fan_in).sqrt();
                    Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound))
                };
                Param { name, tensor }
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let plan = layer_plan(&config);
        if plan.len() != params.len() {
            bail!(
                Config,
                "expected {} parameter tensors, got {}",
                plan.len(),
                params.len()
            );
        }
        for ((name, shape), p) in plan.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                bail!(
                    Config,
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.tensor.shape(),
                    name,
                    shape
                );
            }
        }
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    /// Records the full network on `tape` for a batch `input` of shape
    /// `N×1×H×W`, values expected in [-1, 1].
    pub fn forward(&self, tape: &mut Tape, input: Var, track_grad: bool) -> Result<Forward> {
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), track_grad))
            .collect();
        self.forward_with_params(tape, input, params)
    }

    /// [`Model::forward`] with the parameters already on the tape, in
    /// layer-plan order. The stored parameter values are not read.
    pub fn forward_with_params(&self, tape: &mut Tape, input: Var, params: Vec<Var>) -> Result<Forward> {
        let cfg = &self.config;
        if params.len() != self.params.len() {
            bail!(Contract, "expected {} parameter vars, got {}", self.params.len(), params.len());
        }
        let [_, c, h, w] = tape.value(input).dims4()?;
        if c != 1 || (h, w) != cfg.input_hw {
            bail!(
                Dimension,
                "network expects N×1×{}×{}, got {:?}",
                cfg.input_hw.0,
                cfg.input_hw.1,
                tape.value(input).shape()
            );
        }
        let mut next = params.chunks_exact(2).map(|p| (p[0], p[1]));
        let mut layer = || next.next().expect("layer plan and forward disagree");
        let conv = |tape: &mut Tape, x: Var, (w, b): (Var, Var), pad: usize| tape.conv2d(x, w, b, 1, pad);

        let mut x = input;
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut downsampled = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            let a = conv(tape, x, layer(), 1)?;
            let a = tape.relu(a);
            let a = conv(tape, a, layer(), 1)?;
            let a = tape.relu(a);
            skips.push(a);
            x = self.downsample(tape, a)?;
            downsampled.push(x);
        }
        let a = conv(tape, x, layer(), 1)?;
        let a = tape.relu(a);
        let a = conv(tape, a, layer(), 1)?;
        let bottleneck = tape.relu(a);

        let mut x = bottleneck;
        let mut shape_logits = None;
        if cfg.shape_embed {
            let (ctx, fuse, head) = (layer(), layer(), layer());
            let (out, context) = shape_embedding_block(tape, bottleneck, ctx, fuse, cfg.fusion)?;
            x = out;
            shape_logits = Some(shape_head(tape, context, head.0, head.1)?);
        }

        for skip in skips.into_iter().rev() {
            let up = tape.upsample_nearest2x(x)?;
            let cat = tape.concat_channels(up, skip)?;
            let a = conv(tape, cat, layer(), 1)?;
            let a = tape.relu(a);
            let a = conv(tape, a, layer(), 1)?;
            x = tape.relu(a);
        }
        let seg_logits = conv(tape, x, layer(), 0)?;
        Ok(Forward {
            seg_logits,
            shape_logits,
            bottleneck,
            downsampled,
            params,
        })
    }

    fn downsample(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.config.anti_alias {
            let m = tape.max_pool(x, 2, 1)?;
            tape.blur_pool(m, self.config.blur_k, 2)
        } else {
            tape.max_pool(x, 2, 2)
        }
    }
}

/// Shape-embedding block on its own: `conv3x3(f ⊕ conv1x1(gap(f)))`.
/// Returns `(fused output, pooled context)`.
pub fn shape_embedding_block(
    tape: &mut Tape,
    features: Var,
    (ctx_w, ctx_b): (Var, Var),
    (fuse_w, fuse_b): (Var, Var),
    fusion: Fusion,
) -> Result<(Var, Var)> {
    let pooled = tape.global_avg_pool(features)?;
    let context = tape.conv2d(pooled, ctx_w, ctx_b, 1, 0)?;
    let fused = match fusion {
        Fusion::Add => tape.add(features, context)?,
        Fusion::Gate => {
            let gate = tape.sigmoid(context);
            tape.mul(features, gate)?
        }
    };
    Ok((tape.conv2d(fused, fuse_w, fuse_b, 1, 1)?, context))
}

/// Linear flow-type classifier on the pooled context: `N×C×1×1 → N×K`.
pub fn shape_head(tape: &mut Tape, context: Var, weight: Var, bias: Var) -> Result<Var> {
    let logits = tape.conv2d(context, weight, bias, 1, 0)?;
    let s = tape.value(logits).shape().to_vec();
    tape.reshape(logits, vec![s[0], s[1]])
}
