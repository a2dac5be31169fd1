//! Reverse-mode differentiation tape.
//!
//! A [`Tape`] records every operation of one forward pass in topological
//! order. [`Tape::backward`] walks the record once in reverse, accumulating
//! gradients; a value consumed by several operations receives the sum of
//! all consumer contributions.

use super::kernels::{self, ConvAttrs};
use super::tensor::Tensor;
use crate::error::{HanfError, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Broadcast-multiply `x` by a scalar-shaped node.
    MulScalar { scalar: NodeId, x: NodeId },
    /// Multiply sample `n` of `x` by `mask[n]` (constant mask).
    MulSampleMask { x: NodeId, mask: Vec<f64> },
    Relu(NodeId),
    Conv2d { x: NodeId, w: NodeId, attrs: ConvAttrs },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<f64>, inv_std: Vec<f64> },
    /// The argmax map fully determines the backward routing.
    MaxPool { x: NodeId, argmax: Vec<u32> },
    AvgPool { x: NodeId, kernel: usize, stride: usize, padding: usize },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    ConcatChannels { parts: Vec<NodeId> },
    GlobalAvgPool(NodeId),
    Softmax(NodeId),
    RowSlice { x: NodeId, row: usize },
    IndexScalar { x: NodeId, index: usize },
    Sum(NodeId),
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, addressed by [`NodeId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    /// Gradient of `id`, or zeros when `id` was not on a path to the loss.
    pub fn get_or_zeros(&self, id: NodeId, tape: &Tape) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => tape.value(id).zeros_like(),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a constant; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(HanfError::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(HanfError::shape(
                "mul",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        for (o, x) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= x;
        }
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.scale_assign(factor);
        let ng = self.needs_grad(x);
        self.push(out, Op::Scale(x, factor), ng)
    }

    pub fn mul_scalar(&mut self, scalar: NodeId, x: NodeId) -> Result<NodeId> {
        if !self.value(scalar).is_scalar() {
            return Err(HanfError::shape(
                "mul_scalar",
                format!("coefficient must be scalar, got {:?}", self.value(scalar).shape()),
            ));
        }
        let s = self.value(scalar).item();
        let mut out = self.value(x).clone();
        out.scale_assign(s);
        let ng = self.needs_grad(scalar) || self.needs_grad(x);
        Ok(self.push(out, Op::MulScalar { scalar, x }, ng))
    }

    /// Per-sample mask multiply: sample `n` of `x` is scaled by `mask[n]`.
    pub fn mul_sample_mask(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().is_empty() || xv.dim(0) != mask.len() {
            return Err(HanfError::shape(
                "mul_sample_mask",
                format!("mask length {} vs batch {:?}", mask.len(), xv.shape().first()),
            ));
        }
        let per = xv.numel() / mask.len();
        let mut out = xv.clone();
        for (n, &m) in mask.iter().enumerate() {
            for v in out.data_mut()[n * per..(n + 1) * per].iter_mut() {
                *v *= m;
            }
        }
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::MulSampleMask { x, mask }, ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut().iter_mut() {
            *v = v.max(0.0);
        }
        let ng = self.needs_grad(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, attrs: ConvAttrs) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.shape().len() != 4 || wv.shape().len() != 4 {
            return Err(HanfError::shape(
                "conv2d",
                format!("need 4-d input and weight, got {:?} and {:?}", xv.shape(), wv.shape()),
            ));
        }
        if attrs.groups == 0 || !xv.dim(1).is_multiple_of(attrs.groups) || !wv.dim(0).is_multiple_of(attrs.groups) {
            return Err(HanfError::shape(
                "conv2d",
                format!("groups {} incompatible with channels {} -> {}", attrs.groups, xv.dim(1), wv.dim(0)),
            ));
        }
        if xv.dim(1) / attrs.groups != wv.dim(1) {
            return Err(HanfError::shape(
                "conv2d",
                format!(
                    "weight expects {} input channels per group, input has {}",
                    wv.dim(1),
                    xv.dim(1) / attrs.groups
                ),
            ));
        }
        let eff_h = attrs.dilation * (wv.dim(2) - 1) + 1;
        let eff_w = attrs.dilation * (wv.dim(3) - 1) + 1;
        if xv.dim(2) + 2 * attrs.padding < eff_h || xv.dim(3) + 2 * attrs.padding < eff_w {
            return Err(HanfError::shape(
                "conv2d",
                format!(
                    "kernel {}x{} (dilation {}) exceeds padded input {}x{}",
                    wv.dim(2),
                    wv.dim(3),
                    attrs.dilation,
                    xv.dim(2) + 2 * attrs.padding,
                    xv.dim(3) + 2 * attrs.padding
                ),
            ));
        }
        let out = kernels::conv2d_fwd(xv, wv, &attrs);
        let ng = self.needs_grad(x) || self.needs_grad(w);
        Ok(self.push(out, Op::Conv2d { x, w, attrs }, ng))
    }

    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(HanfError::shape("batch_norm", format!("need 4-d input, got {:?}", xv.shape())));
        }
        let c = xv.dim(1);
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(HanfError::shape(
                "batch_norm",
                format!(
                    "scale/shift must have {} channels, got {} and {}",
                    c,
                    self.value(gamma).numel(),
                    self.value(beta).numel()
                ),
            ));
        }
        let (out, mean, inv_std) = kernels::batchnorm_fwd(xv, self.value(gamma), self.value(beta), eps);
        let ng = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, mean, inv_std }, ng))
    }

    pub fn max_pool(&mut self, x: NodeId, kernel: usize, stride: usize, padding: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(HanfError::shape("max_pool_3x3", format!("need 4-d input, got {:?}", xv.shape())));
        }
        let (out, argmax) = kernels::maxpool_fwd(xv, kernel, stride, padding);
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::MaxPool { x, argmax }, ng))
    }

    pub fn avg_pool(&mut self, x: NodeId, kernel: usize, stride: usize, padding: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(HanfError::shape("avg_pool_3x3", format!("need 4-d input, got {:?}", xv.shape())));
        }
        let out = kernels::avgpool_fwd(xv, kernel, stride, padding);
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::AvgPool { x, kernel, stride, padding }, ng))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(w);
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.dim(1) != wv.dim(1) {
            return Err(HanfError::shape(
                "linear",
                format!("input {:?} vs weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        if self.value(b).numel() != wv.dim(0) {
            return Err(HanfError::shape(
                "linear",
                format!("bias has {} entries, weight {} rows", self.value(b).numel(), wv.dim(0)),
            ));
        }
        let out = kernels::linear_fwd(xv, wv, self.value(b));
        let ng = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    /// Depth-wise concatenation along the channel axis.
    pub fn channel_concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(HanfError::InvalidArgument("channel_concat of nothing".into()));
        }
        let first = self.value(parts[0]);
        let (n, h, w) = (first.dim(0), first.dim(2), first.dim(3));
        let mut channels = 0;
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 4 || v.dim(0) != n || v.dim(2) != h || v.dim(3) != w {
                return Err(HanfError::shape(
                    "channel_concat",
                    format!("{:?} incompatible with {:?}", v.shape(), first.shape()),
                ));
            }
            channels += v.dim(1);
        }
        let mut out = Tensor::zeros(vec![n, channels, h, w]);
        let hw = h * w;
        {
            let ov = out.data_mut();
            for ni in 0..n {
                let mut c_off = 0;
                for &p in parts {
                    let v = self.value(p);
                    let pc = v.dim(1);
                    let src = &v.data()[ni * pc * hw..(ni + 1) * pc * hw];
                    let dst_base = (ni * channels + c_off) * hw;
                    ov[dst_base..dst_base + pc * hw].copy_from_slice(src);
                    c_off += pc;
                }
            }
        }
        let ng = parts.iter().any(|&p| self.needs_grad(p));
        Ok(self.push(out, Op::ConcatChannels { parts: parts.to_vec() }, ng))
    }

    /// (N, C, H, W) -> (N, C) spatial mean.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            return Err(HanfError::shape("global_avg_pool", format!("need 4-d input, got {:?}", xv.shape())));
        }
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let hw = (h * w) as f64;
        let mut out = Tensor::zeros(vec![n, c]);
        {
            let ov = out.data_mut();
            for (plane, o) in ov.iter_mut().enumerate() {
                *o = xv.data()[plane * h * w..(plane + 1) * h * w].iter().sum::<f64>() / hw;
            }
        }
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::GlobalAvgPool(x), ng))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let out = kernels::softmax_fwd(self.value(x));
        let ng = self.needs_grad(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// Row `row` of a 2-d tensor as a 1-d vector.
    pub fn row_slice(&mut self, x: NodeId, row: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || row >= xv.dim(0) {
            return Err(HanfError::shape(
                "row_slice",
                format!("row {} of shape {:?}", row, xv.shape()),
            ));
        }
        let cols = xv.dim(1);
        let out = Tensor::from_vec(vec![cols], xv.data()[row * cols..(row + 1) * cols].to_vec())?;
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::RowSlice { x, row }, ng))
    }

    /// Element `index` of a 1-d vector as a scalar.
    pub fn index_scalar(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.shape().len() != 1 || index >= xv.numel() {
            return Err(HanfError::shape(
                "index_scalar",
                format!("index {} of shape {:?}", index, xv.shape()),
            ));
        }
        let out = Tensor::scalar(xv.data()[index]);
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::IndexScalar { x, index }, ng))
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.needs_grad(x);
        self.push(out, Op::Sum(x), ng)
    }

    /// Mean cross-entropy between logits (N, C) and class labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.dim(0) != labels.len() {
            return Err(HanfError::shape(
                "cross_entropy",
                format!("logits {:?} vs {} labels", lv.shape(), labels.len()),
            ));
        }
        let classes = lv.dim(1);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(HanfError::InvalidArgument(format!(
                "cross_entropy label {} out of range for {} classes",
                bad, classes
            )));
        }
        let out = Tensor::scalar(kernels::cross_entropy_fwd(lv, labels));
        let ng = self.needs_grad(logits);
        Ok(self.push(out, Op::CrossEntropy { logits, labels: labels.to_vec() }, ng))
    }

    /// Reverse pass from a scalar loss. Every node is visited at most once;
    /// fan-out sums contributions from all consumers.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(HanfError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                if !matches!(self.nodes[id].op, Op::Leaf) {
                    grads[id] = None;
                }
                continue;
            }
            let g = match self.nodes[id].op {
                Op::Leaf => continue,
                _ => grads[id].take().expect("checked above"),
            };
            self.propagate(id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: NodeId, contribution: Tensor) {
        if !self.needs_grad(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    let mut ga = g.clone();
                    for (v, x) in ga.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *v *= x;
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.needs_grad(*b) {
                    let mut gb = g.clone();
                    for (v, x) in gb.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *v *= x;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, factor) => {
                let mut gx = g.clone();
                gx.scale_assign(*factor);
                self.accumulate(grads, *x, gx);
            }
            Op::MulScalar { scalar, x } => {
                if self.needs_grad(*x) {
                    let mut gx = g.clone();
                    gx.scale_assign(self.value(*scalar).item());
                    self.accumulate(grads, *x, gx);
                }
                if self.needs_grad(*scalar) {
                    let dot: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    self.accumulate(grads, *scalar, Tensor::scalar(dot));
                }
            }
            Op::MulSampleMask { x, mask } => {
                let per = g.numel() / mask.len();
                let mut gx = g.clone();
                for (n, &m) in mask.iter().enumerate() {
                    for v in gx.data_mut()[n * per..(n + 1) * per].iter_mut() {
                        *v *= m;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (v, inp) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *v = if *inp > 0.0 { *v } else { 0.0 };
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Conv2d { x, w, attrs } => {
                let (gx, gw) = kernels::conv2d_bwd(
                    self.value(*x),
                    self.value(*w),
                    attrs,
                    g,
                    self.needs_grad(*x),
                    self.needs_grad(*w),
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std } => {
                let (gx, ggamma, gbeta) =
                    kernels::batchnorm_bwd(self.value(*x), self.value(*gamma), mean, inv_std, g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gamma, ggamma);
                self.accumulate(grads, *beta, gbeta);
            }
            Op::MaxPool { x, argmax, .. } => {
                let gx = kernels::maxpool_bwd(self.value(*x).shape(), g, argmax);
                self.accumulate(grads, *x, gx);
            }
            Op::AvgPool { x, kernel, stride, padding } => {
                let gx = kernels::avgpool_bwd(self.value(*x).shape(), g, *kernel, *stride, *padding);
                self.accumulate(grads, *x, gx);
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = kernels::linear_bwd(self.value(*x), self.value(*w), g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *b, gb);
            }
            Op::ConcatChannels { parts } => {
                let (n, h, w) = (g.dim(0), g.dim(2), g.dim(3));
                let hw = h * w;
                let total_c = g.dim(1);
                let mut c_off = 0;
                for &p in parts {
                    let pc = self.value(p).dim(1);
                    if self.needs_grad(p) {
                        let mut gp = Tensor::zeros(vec![n, pc, h, w]);
                        {
                            let gpd = gp.data_mut();
                            for ni in 0..n {
                                let src_base = (ni * total_c + c_off) * hw;
                                gpd[ni * pc * hw..(ni + 1) * pc * hw]
                                    .copy_from_slice(&g.data()[src_base..src_base + pc * hw]);
                            }
                        }
                        self.accumulate(grads, p, gp);
                    }
                    c_off += pc;
                }
            }
            Op::GlobalAvgPool(x) => {
                let xv = self.value(*x);
                let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
                let inv = 1.0 / (h * w) as f64;
                let mut gx = Tensor::zeros(vec![n, c, h, w]);
                {
                    let gxd = gx.data_mut();
                    for plane in 0..n * c {
                        let gval = g.data()[plane] * inv;
                        for v in gxd[plane * h * w..(plane + 1) * h * w].iter_mut() {
                            *v = gval;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let gx = kernels::softmax_bwd(&self.nodes[id].value, g);
                self.accumulate(grads, *x, gx);
            }
            Op::RowSlice { x, row } => {
                let xv = self.value(*x);
                let cols = xv.dim(1);
                let mut gx = xv.zeros_like();
                gx.data_mut()[row * cols..(row + 1) * cols].copy_from_slice(g.data());
                self.accumulate(grads, *x, gx);
            }
            Op::IndexScalar { x, index } => {
                let mut gx = self.value(*x).zeros_like();
                gx.data_mut()[*index] = g.item();
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gx = Tensor::full(self.value(*x).shape().to_vec(), g.item());
                self.accumulate(grads, *x, gx);
            }
            Op::CrossEntropy { logits, labels } => {
                let gx = kernels::cross_entropy_bwd(self.value(*logits), labels, g.item());
                self.accumulate(grads, *logits, gx);
            }
        }
    }
}
