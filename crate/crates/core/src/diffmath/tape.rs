//! Wengert-list reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; node ids are
//! therefore already a topological order and `backward` walks them in reverse
//! exactly once. Nodes that do not depend on a gradient-requiring leaf are
//! skipped during the backward sweep.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::conv::{self, ConvGeometry};
use super::warp::{SampleGrid, Warp};
use super::Tensor;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation kinds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pointwise {
    Sigmoid,
    LeakyRelu(f64),
    Add,
    Mul,
    Sub,
    Scale(f64),
}

/// Multiplicative color gains applied by [`Tape::color_jitter`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterGains {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl JitterGains {
    pub const NONE: JitterGains = JitterGains {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        geom: ConvGeometry,
    },
    BiasAdd {
        input: NodeId,
        bias: NodeId,
    },
    Sigmoid(NodeId),
    LeakyRelu(NodeId, f64),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Clamp01(NodeId),
    Sum(NodeId),
    WeightedSum {
        x: NodeId,
        weights: Tensor,
    },
    MaskedMax {
        x: NodeId,
        argmax: Option<usize>,
    },
    SelectChannels {
        x: NodeId,
        start: usize,
    },
    ColorJitter {
        x: NodeId,
        gains: JitterGains,
    },
    Warp {
        src: NodeId,
        grid: Arc<SampleGrid>,
    },
    Composite {
        base: NodeId,
        overlay: NodeId,
        mask: Tensor,
    },
    BceWithLogits {
        logits: NodeId,
        targets: Tensor,
        weights: Tensor,
    },
    WeightedL1 {
        x: NodeId,
        targets: Tensor,
        weights: Tensor,
    },
    TotalVariation(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<Tensor> {
        let g = self.grads.get(id.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[id.0].clone(), g.clone()))
    }

    /// Takes the gradient out, leaving `None`; a missing gradient means zero.
    pub fn take(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.grads.get_mut(id.0)?.take()
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let geom = ConvGeometry::new(
            self.value(input).shape(),
            self.value(kernels).shape(),
            stride,
            pad,
        )?;
        let out = conv::forward(self.value(input), self.value(kernels), &geom);
        let rg = self.rg(&[input, kernels]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                geom,
            },
            rg,
        ))
    }

    /// Adds `bias[c]` to every pixel of channel `c`.
    pub fn bias_add(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(input).dims3()?;
        let b = self.value(bias);
        if b.len() != c {
            return Err(Error::shape(format!(
                "bias has {} entries for {c} channels",
                b.len()
            )));
        }
        let mut out = self.value(input).clone();
        for (ch, chunk) in out.data_mut().chunks_mut(h * w).enumerate() {
            let bv = b.data()[ch];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let rg = self.rg(&[input, bias]);
        Ok(self.push(out, Op::BiasAdd { input, bias }, rg))
    }

    /// Dispatches an elementwise kind; binary kinds need `y`.
    pub fn pointwise(&mut self, kind: Pointwise, x: NodeId, y: Option<NodeId>) -> Result<NodeId> {
        let need = |y: Option<NodeId>| {
            y.ok_or_else(|| Error::invalid(format!("{kind:?} needs a second operand")))
        };
        match kind {
            Pointwise::Sigmoid => Ok(self.sigmoid(x)),
            Pointwise::LeakyRelu(a) => Ok(self.leaky_relu(x, a)),
            Pointwise::Scale(c) => Ok(self.scale(x, c)),
            Pointwise::Add => self.add(x, need(y)?),
            Pointwise::Sub => self.sub(x, need(y)?),
            Pointwise::Mul => self.mul(x, need(y)?),
        }
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: f64) -> NodeId {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { alpha * v });
        let rg = self.rg(&[x]);
        self.push(out, Op::LeakyRelu(x, alpha), rg)
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(())
        } else {
            Err(Error::shape(format!("operands {sa:?} and {sb:?} differ")))
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).map(|v| c * v);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Clip to `[0, 1]`; gradient passes only strictly inside the interval.
    pub fn clamp01(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.clamp(0.0, 1.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Clamp01(x), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    /// `sum(weights * x)` with constant weights.
    pub fn weighted_sum(&mut self, x: NodeId, weights: Tensor) -> Result<NodeId> {
        self.check_const_shape(x, &weights, "weights")?;
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, rg))
    }

    /// Maximum over entries where `mask > 0`; zero when the mask is empty.
    pub fn masked_max(&mut self, x: NodeId, mask: &Tensor) -> Result<NodeId> {
        self.check_const_shape(x, mask, "mask")?;
        let mut best: Option<(usize, f64)> = None;
        for (i, (&v, &m)) in self.value(x).data().iter().zip(mask.data()).enumerate() {
            if m > 0.0 && best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::scalar(best.map_or(0.0, |(_, v)| v)),
            Op::MaskedMax {
                x,
                argmax: best.map(|(i, _)| i),
            },
            rg,
        ))
    }

    pub fn select_channels(&mut self, x: NodeId, start: usize, count: usize) -> Result<NodeId> {
        let (c, h, w) = self.value(x).dims3()?;
        if count == 0 || start + count > c {
            return Err(Error::shape(format!(
                "channels {start}..{} out of range for {c}",
                start + count
            )));
        }
        let data = self.value(x).data()[start * h * w..(start + count) * h * w].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![count, h, w], data),
            Op::SelectChannels { x, start },
            rg,
        ))
    }

    /// Brightness gain, then contrast about the global mean, then saturation
    /// about per-pixel luma (three-channel inputs only).
    pub fn color_jitter(&mut self, x: NodeId, gains: JitterGains) -> Result<NodeId> {
        let (c, h, w) = self.value(x).dims3()?;
        let n = (c * h * w) as f64;
        let px = h * w;
        let mut q: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|v| gains.brightness * v)
            .collect();
        let mean = q.iter().sum::<f64>() / n;
        q.iter_mut()
            .for_each(|v| *v = gains.contrast * *v + (1.0 - gains.contrast) * mean);
        if c == 3 {
            for p in 0..px {
                let luma: f64 = (0..3).map(|ch| LUMA[ch] * q[ch * px + p]).sum();
                for ch in 0..3 {
                    let v = &mut q[ch * px + p];
                    *v = gains.saturation * *v + (1.0 - gains.saturation) * luma;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![c, h, w], q),
            Op::ColorJitter { x, gains },
            rg,
        ))
    }

    /// Bilinear resampling of `src` under `warp`; returns the sampled node and
    /// its `[1, out_h, out_w]` coverage mask.
    pub fn affine_sample(
        &mut self,
        src: NodeId,
        theta: [f64; 6],
        out_h: usize,
        out_w: usize,
    ) -> Result<(NodeId, Tensor)> {
        let (_, h, w) = self.value(src).dims3()?;
        let grid = SampleGrid::new(&Warp::Affine(theta), (h, w), (out_h, out_w), None)?;
        self.sample(src, Arc::new(grid))
    }

    /// Projective variant of [`Tape::affine_sample`].
    pub fn homography_sample(
        &mut self,
        src: NodeId,
        h: [f64; 9],
        out_h: usize,
        out_w: usize,
    ) -> Result<(NodeId, Tensor)> {
        let (_, sh, sw) = self.value(src).dims3()?;
        let grid = SampleGrid::new(&Warp::Homography(h), (sh, sw), (out_h, out_w), None)?;
        self.sample(src, Arc::new(grid))
    }

    /// Resample with a prebuilt grid.
    pub fn sample(&mut self, src: NodeId, grid: Arc<SampleGrid>) -> Result<(NodeId, Tensor)> {
        let out = grid.forward(self.value(src))?;
        let mask = grid.mask().clone();
        let rg = self.rg(&[src]);
        Ok((self.push(out, Op::Warp { src, grid }, rg), mask))
    }

    /// `base * (1 - mask) + overlay * mask`. A one-channel overlay is broadcast.
    pub fn composite(&mut self, base: NodeId, overlay: NodeId, mask: Tensor) -> Result<NodeId> {
        let (c, h, w) = self.value(base).dims3()?;
        let (co, oh, ow) = self.value(overlay).dims3()?;
        if (oh, ow) != (h, w) || !(co == c || co == 1) || mask.shape() != [1, h, w] {
            return Err(Error::shape(format!(
                "composite of {:?} over {:?} with mask {:?}",
                self.value(overlay).shape(),
                self.value(base).shape(),
                mask.shape()
            )));
        }
        let px = h * w;
        let b = self.value(base).data();
        let o = self.value(overlay).data();
        let m = mask.data();
        let mut out = b.to_vec();
        for ch in 0..c {
            let oc = if co == 1 { 0 } else { ch };
            for p in 0..px {
                let mv = m[p];
                if mv != 0.0 {
                    out[ch * px + p] = b[ch * px + p] * (1.0 - mv) + o[oc * px + p] * mv;
                }
            }
        }
        let rg = self.rg(&[base, overlay]);
        Ok(self.push(
            Tensor::from_parts(vec![c, h, w], out),
            Op::Composite {
                base,
                overlay,
                mask,
            },
            rg,
        ))
    }

    /// `sum(weights * bce(sigmoid(logits), targets))`, computed stably.
    pub fn bce_with_logits(
        &mut self,
        logits: NodeId,
        targets: Tensor,
        weights: Tensor,
    ) -> Result<NodeId> {
        self.check_const_shape(logits, &targets, "targets")?;
        self.check_const_shape(logits, &weights, "weights")?;
        let mut s = 0.0;
        for ((&x, &t), &wt) in self
            .value(logits)
            .data()
            .iter()
            .zip(targets.data())
            .zip(weights.data())
        {
            if wt != 0.0 {
                s += wt * (x.max(0.0) - x * t + (-x.abs()).exp().ln_1p());
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            },
            rg,
        ))
    }

    /// `sum(weights * |x - targets|)`.
    pub fn weighted_l1(&mut self, x: NodeId, targets: Tensor, weights: Tensor) -> Result<NodeId> {
        self.check_const_shape(x, &targets, "targets")?;
        self.check_const_shape(x, &weights, "weights")?;
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(targets.data())
            .zip(weights.data())
            .map(|((a, t), wt)| wt * (a - t).abs())
            .sum();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedL1 {
                x,
                targets,
                weights,
            },
            rg,
        ))
    }

    /// Anisotropic total variation of a `[C, H, W]` tensor: per channel, the
    /// sum of absolute horizontal and vertical neighbour differences divided by
    /// the number of neighbour pairs, averaged over channels.
    pub fn total_variation(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(x).dims3()?;
        let pairs = h * w.saturating_sub(1) + h.saturating_sub(1) * w;
        let d = self.value(x).data();
        let mut s = 0.0;
        if pairs > 0 {
            for ch in 0..c {
                let p = &d[ch * h * w..(ch + 1) * h * w];
                for y in 0..h {
                    for xx in 0..w {
                        let v = p[y * w + xx];
                        if xx + 1 < w {
                            s += (p[y * w + xx + 1] - v).abs();
                        }
                        if y + 1 < h {
                            s += (p[(y + 1) * w + xx] - v).abs();
                        }
                    }
                }
            }
            s /= (pairs * c) as f64;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::TotalVariation(x), rg))
    }

    fn check_const_shape(&self, x: NodeId, t: &Tensor, what: &str) -> Result<()> {
        if self.value(x).shape() == t.shape() {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what} shape {:?} does not match operand {:?}",
                t.shape(),
                self.value(x).shape()
            )))
        }
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes[..=root.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |id: NodeId, grads: &mut [Option<Vec<f64>>], f: &dyn Fn(&mut [f64])| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            let slot =
                grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernels,
                geom,
            } => {
                if self.requires_grad(*input) {
                    let gi = conv::backward_input(self.value(*kernels), g, geom);
                    acc(*input, grads, &|s| add_into(s, &gi));
                }
                if self.requires_grad(*kernels) {
                    let gk = conv::backward_kernels(self.value(*input), g, geom);
                    acc(*kernels, grads, &|s| add_into(s, &gk));
                }
            }
            Op::BiasAdd { input, bias } => {
                acc(*input, grads, &|s| add_into(s, g));
                let c = self.value(*bias).len();
                let px = g.len() / c;
                acc(*bias, grads, &|s| {
                    for (ch, chunk) in g.chunks(px).enumerate() {
                        s[ch] += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, grads, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::LeakyRelu(x, a) => {
                let xv = self.value(*x).data();
                acc(*x, grads, &|s| {
                    for i in 0..s.len() {
                        s[i] += if xv[i] > 0.0 { g[i] } else { a * g[i] };
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, grads, &|s| add_into(s, g));
                acc(*b, grads, &|s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, grads, &|s| add_into(s, g));
                acc(*b, grads, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, grads, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bv[i];
                    }
                });
                acc(*b, grads, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, grads, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g));
            }
            Op::Clamp01(x) => {
                let xv = self.value(*x).data();
                acc(*x, grads, &|s| {
                    for i in 0..s.len() {
                        if xv[i] > 0.0 && xv[i] < 1.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, grads, &|s| s.iter_mut().for_each(|s| *s += g[0]));
            }
            Op::WeightedSum { x, weights } => {
                acc(*x, grads, &|s| {
                    s.iter_mut()
                        .zip(weights.data())
                        .for_each(|(s, w)| *s += g[0] * w)
                });
            }
            Op::MaskedMax { x, argmax } => {
                if let Some(i) = *argmax {
                    acc(*x, grads, &|s| s[i] += g[0]);
                }
            }
            Op::SelectChannels { x, start } => {
                let offset = start * node.value.shape()[1] * node.value.shape()[2];
                acc(*x, grads, &|s| add_into(&mut s[offset..offset + g.len()], g));
            }
            Op::ColorJitter { x, gains } => {
                let (c, h, w) = self.value(*x).dims3().expect("rank checked at record time");
                let px = h * w;
                let mut g2 = g.to_vec();
                if c == 3 {
                    let sat = gains.saturation;
                    for p in 0..px {
                        let total: f64 = (0..3).map(|ch| g[ch * px + p]).sum();
                        for ch in 0..3 {
                            g2[ch * px + p] = sat * g[ch * px + p] + LUMA[ch] * (1.0 - sat) * total;
                        }
                    }
                }
                let n = g2.len() as f64;
                let mean_g = g2.iter().sum::<f64>() * (1.0 - gains.contrast) / n;
                acc(*x, grads, &|s| {
                    for i in 0..s.len() {
                        s[i] += gains.brightness * (gains.contrast * g2[i] + mean_g);
                    }
                });
            }
            Op::Warp { src, grid } => {
                let c = self.value(*src).shape()[0];
                let gs = grid.backward(g, c);
                acc(*src, grads, &|s| add_into(s, &gs));
            }
            Op::Composite {
                base,
                overlay,
                mask,
            } => {
                let m = mask.data();
                let px = m.len();
                acc(*base, grads, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * (1.0 - m[i % px]);
                    }
                });
                let co = self.value(*overlay).shape()[0];
                acc(*overlay, grads, &|s| {
                    for i in 0..g.len() {
                        let p = i % px;
                        let dst = if co == 1 { p } else { i };
                        s[dst] += g[i] * m[p];
                    }
                });
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            } => {
                let xv = self.value(*logits).data();
                acc(*logits, grads, &|s| {
                    for i in 0..s.len() {
                        let wt = weights.data()[i];
                        if wt != 0.0 {
                            s[i] += g[0] * wt * (sigmoid(xv[i]) - targets.data()[i]);
                        }
                    }
                });
            }
            Op::WeightedL1 {
                x,
                targets,
                weights,
            } => {
                let xv = self.value(*x).data();
                acc(*x, grads, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[0] * weights.data()[i] * sign(xv[i] - targets.data()[i]);
                    }
                });
            }
            Op::TotalVariation(x) => {
                let (c, h, w) = self.value(*x).dims3().expect("rank checked at record time");
                let pairs = h * w.saturating_sub(1) + h.saturating_sub(1) * w;
                if pairs == 0 {
                    return;
                }
                let scale = g[0] / (pairs * c) as f64;
                let d = self.value(*x).data();
                acc(*x, grads, &|s| {
                    for ch in 0..c {
                        let base = ch * h * w;
                        for y in 0..h {
                            for xx in 0..w {
                                let i = base + y * w + xx;
                                if xx + 1 < w {
                                    let sg = scale * sign(d[i + 1] - d[i]);
                                    s[i + 1] += sg;
                                    s[i] -= sg;
                                }
                                if y + 1 < h {
                                    let sg = scale * sign(d[i + w] - d[i]);
                                    s[i + w] += sg;
                                    s[i] -= sg;
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
