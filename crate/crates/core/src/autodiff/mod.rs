//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Operations are recorded in creation order, so the tape is always
//! topologically sorted; [`Tape::backward`] walks it once in reverse.
//! Only leaves created with `requires_grad` keep their gradient after a
//! backward pass; intermediate gradients are released as soon as they have
//! been propagated.

mod adam;
pub mod check;
pub mod kernels;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};

use kernels::{BlurPlan, ConvGeom};

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    BlurPool { x: Var, plan: BlurPlan },
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample2x { x: Var },
    GlobalAvgPool { x: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Add { x: Var, y: Var, broadcast: bool },
    Mul { x: Var, y: Var, broadcast: bool },
    Concat { x: Var, y: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    Reshape { x: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: Option<usize>, count: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Shorthand for a leaf that does not track gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Every piecewise branch taken so far: the sign of each ReLU input and
    /// each max-pool winner. Two evaluations with equal patterns lie in the
    /// same smooth piece of the recorded function.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => out.extend(self.value(*x).data().iter().map(|&a| (a > 0.0) as usize)),
                Op::MaxPool { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4()?;
        let [o, ci, kh, kw] = self.value(w).dims4()?;
        if ci != c {
            bail!(Dimension, "conv2d: input has {} channels, kernel expects {}", c, ci);
        }
        if kh != kw {
            bail!(Dimension, "conv2d: kernel must be square, got {}x{}", kh, kw);
        }
        if self.value(b).shape() != [o] {
            bail!(Dimension, "conv2d: bias shape {:?} != [{}]", self.value(b).shape(), o);
        }
        if stride == 0 {
            bail!(Parameter, "conv2d: stride must be >= 1");
        }
        if kh > h + 2 * padding || kh > wd + 2 * padding {
            bail!(Dimension, "conv2d: kernel {} exceeds padded input {}x{}", kh, h, wd);
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            k: kh,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (wd + 2 * padding - kh) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let value = Tensor::new(vec![n, o, geom.ho, geom.wo], out)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, rg, Op::Conv2d { x, w, b, geom }))
    }

    /// Depthwise normalised-binomial blur with reflect padding, then
    /// subsampling by `stride` (stride 1 = blur only).
    pub fn blur_pool(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        if k.is_multiple_of(2) {
            bail!(Parameter, "blur_pool: kernel size must be odd, got {}", k);
        }
        if stride == 0 {
            bail!(Parameter, "blur_pool: stride must be >= 1");
        }
        let [n, c, h, w] = self.value(x).dims4()?;
        let plan = BlurPlan::new(n * c, h, w, k, stride);
        let value = Tensor::new(vec![n, c, plan.ho, plan.wo], plan.forward(self.value(x).data()))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::BlurPool { x, plan }))
    }

    pub fn max_pool(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if window == 0 || window > h || window > w {
            bail!(Dimension, "max_pool: window {} does not fit {}x{}", window, h, w);
        }
        if stride == 0 {
            bail!(Parameter, "max_pool: stride must be >= 1");
        }
        let (vals, argmax, ho, wo) =
            kernels::max_pool_forward(self.value(x).data(), n * c, (h, w), window, stride);
        let value = Tensor::new(vec![n, c, ho, wo], vals)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::MaxPool { x, argmax }))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * h2 * w2];
        for (p, plane) in out.chunks_mut(h2 * w2).enumerate() {
            let s = &src[p * h * w..(p + 1) * h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    plane[i * w2 + j] = s[(i / 2) * w + j / 2];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h2, w2], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Upsample2x { x }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let hw = (h * w) as f64;
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / hw)
            .collect();
        let value = Tensor::new(vec![n, c, 1, 1], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::GlobalAvgPool { x }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::from_fn(t.shape(), |i| t.data()[i].max(0.0));
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::from_fn(t.shape(), |i| sigmoid(t.data()[i]));
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Sigmoid { x })
    }

    /// Element-wise sum; `y` may also be an `N×C×1×1` map broadcast over
    /// the spatial extent of `x`.
    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let broadcast = self.check_binary("add", x, y)?;
        let value = self.binary_forward(x, y, broadcast, |a, b| a + b);
        let rg = self.any_grad(&[x, y]);
        Ok(self.push(value, rg, Op::Add { x, y, broadcast }))
    }

    /// Element-wise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        let broadcast = self.check_binary("mul", x, y)?;
        let value = self.binary_forward(x, y, broadcast, |a, b| a * b);
        let rg = self.any_grad(&[x, y]);
        Ok(self.push(value, rg, Op::Mul { x, y, broadcast }))
    }

    fn check_binary(&self, name: &str, x: Var, y: Var) -> Result<bool> {
        let (xs, ys) = (self.value(x).shape(), self.value(y).shape());
        if xs == ys {
            return Ok(false);
        }
        if xs.len() == 4 && ys.len() == 4 && xs[..2] == ys[..2] && ys[2] == 1 && ys[3] == 1 {
            return Ok(true);
        }
        bail!(Dimension, "{}: incompatible shapes {:?} and {:?}", name, xs, ys)
    }

    fn binary_forward(&self, x: Var, y: Var, broadcast: bool, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (xt, yt) = (self.value(x), self.value(y));
        if broadcast {
            let s = xt.shape();
            let hw = s[2] * s[3];
            Tensor::from_fn(s, |i| f(xt.data()[i], yt.data()[i / hw]))
        } else {
            Tensor::from_fn(xt.shape(), |i| f(xt.data()[i], yt.data()[i]))
        }
    }

    /// Stacks `x` and `y` along the channel axis.
    pub fn concat_channels(&mut self, x: Var, y: Var) -> Result<Var> {
        let [n, c1, h, w] = self.value(x).dims4()?;
        let [n2, c2, h2, w2] = self.value(y).dims4()?;
        if (n, h, w) != (n2, h2, w2) {
            bail!(
                Dimension,
                "concat_channels: {:?} vs {:?}",
                self.value(x).shape(),
                self.value(y).shape()
            );
        }
        let hw = h * w;
        let (xd, yd) = (self.value(x).data(), self.value(y).data());
        let mut out = Vec::with_capacity(n * (c1 + c2) * hw);
        for s in 0..n {
            out.extend_from_slice(&xd[s * c1 * hw..(s + 1) * c1 * hw]);
            out.extend_from_slice(&yd[s * c2 * hw..(s + 1) * c2 * hw]);
        }
        let value = Tensor::new(vec![n, c1 + c2, h, w], out)?;
        let rg = self.any_grad(&[x, y]);
        Ok(self.push(value, rg, Op::Concat { x, y }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::from_fn(t.shape(), |i| t.data()[i] * factor);
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Sum { x })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Reshape { x }))
    }

    /// Mean softmax cross-entropy over every non-ignored position.
    ///
    /// `logits` is `N×C×…` with the class axis second; `targets` holds one
    /// class index per `N×…` position in row-major order.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: Option<usize>) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() < 2 {
            bail!(Dimension, "cross_entropy: logits need a class axis, got {:?}", shape);
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        if targets.len() != n * inner {
            bail!(
                Dimension,
                "cross_entropy: {} targets for {} positions",
                targets.len(),
                n * inner
            );
        }
        let data = self.value(logits).data();
        let mut total = 0.0;
        let mut count = 0usize;
        for (pos, &t) in targets.iter().enumerate() {
            if Some(t) == ignore {
                continue;
            }
            if t >= c {
                bail!(Index, "cross_entropy: target {} outside 0..{}", t, c);
            }
            let (s, r) = (pos / inner, pos % inner);
            let at = |k: usize| data[(s * c + k) * inner + r];
            let m = (0..c).map(at).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..c).map(|k| (at(k) - m).exp()).sum::<f64>().ln();
            total += lse - at(t);
            count += 1;
        }
        if count == 0 {
            bail!(Contract, "cross_entropy: every target is ignored");
        }
        let value = Tensor::scalar(total / count as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                count,
            },
        ))
    }

    /// Propagates d`loss`/d· to every leaf created with `requires_grad`.
    /// Leaf gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            bail!(
                Contract,
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            );
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (v, d) in self.input_grads(i, &g)? {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot => *slot = Some(d),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let gd = g.data();
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.value(v).shape().to_vec(), data);
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, b, geom } => {
                let need_dx = self.requires_grad(*x);
                let cg = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    geom,
                    need_dx,
                );
                let mut out = vec![(*w, like(*w, cg.dw)?), (*b, like(*b, cg.db)?)];
                if let Some(dx) = cg.dx {
                    out.push((*x, like(*x, dx)?));
                }
                out
            }
            Op::BlurPool { x, plan } => vec![(*x, like(*x, plan.backward(gd))?)],
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&p, &gv) in argmax.iter().zip(gd) {
                    dx[p] += gv;
                }
                vec![(*x, like(*x, dx)?)]
            }
            Op::Upsample2x { x } => {
                let [n, c, h, w] = self.value(*x).dims4()?;
                let w2 = 2 * w;
                let mut dx = vec![0.0; n * c * h * w];
                for (p, plane) in dx.chunks_mut(h * w).enumerate() {
                    let gp = &gd[p * 4 * h * w..(p + 1) * 4 * h * w];
                    for i in 0..h {
                        for j in 0..w {
                            let top = 2 * i * w2 + 2 * j;
                            plane[i * w + j] = gp[top] + gp[top + 1] + gp[top + w2] + gp[top + w2 + 1];
                        }
                    }
                }
                vec![(*x, like(*x, dx)?)]
            }
            Op::GlobalAvgPool { x } => {
                let [_, _, h, w] = self.value(*x).dims4()?;
                let hw = h * w;
                let dx = (0..self.value(*x).len()).map(|k| gd[k / hw] / hw as f64).collect();
                vec![(*x, like(*x, dx)?)]
            }
            Op::Relu { x } => {
                let xd = self.value(*x).data();
                let dx = xd.iter().zip(gd).map(|(&a, &gv)| if a > 0.0 { gv } else { 0.0 }).collect();
                vec![(*x, like(*x, dx)?)]
            }
            Op::Sigmoid { x } => {
                let yd = node.value.data();
                let dx = yd.iter().zip(gd).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                vec![(*x, like(*x, dx)?)]
            }
            Op::Add { x, y, broadcast } => {
                let dy = if *broadcast { spatial_sum(g)? } else { gd.to_vec() };
                vec![(*x, like(*x, gd.to_vec())?), (*y, like(*y, dy)?)]
            }
            Op::Mul { x, y, broadcast } => {
                let (xd, yd) = (self.value(*x).data(), self.value(*y).data());
                if *broadcast {
                    let s = self.value(*x).shape();
                    let hw = s[2] * s[3];
                    let dx = (0..xd.len()).map(|k| gd[k] * yd[k / hw]).collect();
                    let prod = Tensor::from_fn(s, |k| gd[k] * xd[k]);
                    vec![(*x, like(*x, dx)?), (*y, like(*y, spatial_sum(&prod)?)?)]
                } else {
                    let dx = gd.iter().zip(yd).map(|(a, b)| a * b).collect();
                    let dy = gd.iter().zip(xd).map(|(a, b)| a * b).collect();
                    vec![(*x, like(*x, dx)?), (*y, like(*y, dy)?)]
                }
            }
            Op::Concat { x, y } => {
                let [n, c1, h, w] = self.value(*x).dims4()?;
                let c2 = self.value(*y).dims4()?[1];
                let hw = h * w;
                let mut dx = Vec::with_capacity(n * c1 * hw);
                let mut dy = Vec::with_capacity(n * c2 * hw);
                for s in 0..n {
                    let base = s * (c1 + c2) * hw;
                    dx.extend_from_slice(&gd[base..base + c1 * hw]);
                    dy.extend_from_slice(&gd[base + c1 * hw..base + (c1 + c2) * hw]);
                }
                vec![(*x, like(*x, dx)?), (*y, like(*y, dy)?)]
            }
            Op::Scale { x, factor } => vec![(*x, like(*x, gd.iter().map(|v| v * factor).collect())?)],
            Op::Sum { x } => vec![(*x, Tensor::full(self.value(*x).shape(), gd[0]))],
            Op::Reshape { x } => vec![(*x, like(*x, gd.to_vec())?)],
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                count,
            } => {
                let lt = self.value(*logits);
                let (n, c) = (lt.shape()[0], lt.shape()[1]);
                let inner = lt.len() / (n * c);
                let data = lt.data();
                let scale = gd[0] / *count as f64;
                let mut dx = vec![0.0; lt.len()];
                for (pos, &t) in targets.iter().enumerate() {
                    if Some(t) == *ignore {
                        continue;
                    }
                    let (s, r) = (pos / inner, pos % inner);
                    let idx = |k: usize| (s * c + k) * inner + r;
                    let m = (0..c).map(|k| data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = (0..c).map(|k| (data[idx(k)] - m).exp()).sum();
                    for k in 0..c {
                        let p = (data[idx(k)] - m).exp() / z;
                        dx[idx(k)] = scale * (p - if k == t { 1.0 } else { 0.0 });
                    }
                }
                vec![(*logits, like(*logits, dx)?)]
            }
        })
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn spatial_sum(g: &Tensor) -> Result<Vec<f64>> {
    let [_, _, h, w] = g.dims4()?;
    Ok(g.data().chunks(h * w).map(|p| p.iter().sum()).collect())
}
