//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is a write-once arena of nodes: leaves hold inputs and
//! parameters, interior nodes record the op plus whatever the backward pass
//! needs. [`Tape::backward`] replays nodes in exact reverse creation order,
//! so a single-threaded run is bit-reproducible.
//!
//! The op set is exactly what a residual classifier needs: affine, square
//! convolution (1x1 / 3x3, stride 1 or 2), batch normalization, ReLU,
//! residual add, multiplication by a learnable scalar step size, global
//! average pooling, softmax cross-entropy, and a plain sum for tests.

use crate::error::{NeflError, Result};
use crate::tensor::Tensor;

/// Forward-pass mode; decides which statistics batch normalization uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

struct Node {
    value: Tensor,
    op: Op,
    is_param: bool,
}

enum Op {
    Leaf,
    /// y = x @ w + b with x:[B,I], w:[I,O], b:[O].
    Affine { x: NodeId, w: NodeId, b: NodeId },
    /// Square kernel convolution, zero padding.
    Conv2d { x: NodeId, k: NodeId, stride: usize, pad: usize },
    /// Saved normalized activations and 1/sqrt(var+eps) per channel.
    BatchNorm { x: NodeId, scale: NodeId, shift: NodeId, xhat: Tensor, inv_std: Vec<f64>, train: bool },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    /// y = s * x where s is a one-element tensor (a residual step size).
    ScaleBy { s: NodeId, x: NodeId },
    /// [B,C,H,W] -> [B,C], mean over the spatial axes.
    GlobalAvgPool { x: NodeId },
    /// Mean negative log-likelihood over the batch; softmax probabilities saved.
    SoftmaxXent { logits: NodeId, labels: Vec<usize>, probs: Tensor },
    /// Sum of all elements; handy for gradient tests.
    Sum { x: NodeId },
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes the loss never
/// touched have no entry.
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
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

    /// Inserts a trainable leaf; its gradient can be fetched after `backward`.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Inserts a non-trainable leaf (inputs, frozen parameters).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, is_param: bool) -> NodeId {
        self.nodes.push(Node { value, op, is_param });
        NodeId(self.nodes.len() - 1)
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(NeflError::Dimension(format!(
                "affine expects x:[B,I] w:[I,O] b:[O], got {:?} {:?} {:?}",
                xs, ws, bs
            )));
        }
        let (bsz, i, o) = (xs[0], xs[1], ws[1]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; bsz * o];
        for r in 0..bsz {
            for c in 0..o {
                let mut acc = bv[c];
                for p in 0..i {
                    acc += xv[r * i + p] * wv[p * o + c];
                }
                out[r * o + c] = acc;
            }
        }
        let value = Tensor::from_vec(vec![bsz, o], out)?;
        Ok(self.push(value, Op::Affine { x, w, b }, false))
    }

    /// Convolution with a square kernel, zero padding `pad`, stride `stride`.
    /// x:[B,C,H,W], k:[F,C,K,K] -> [B,F,H',W'] with H' = (H+2p-K)/s + 1.
    pub fn conv2d(&mut self, x: NodeId, k: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 || ks[2] != ks[3] || xs[1] != ks[1] {
            return Err(NeflError::Dimension(format!(
                "conv2d expects x:[B,C,H,W] k:[F,C,K,K], got {:?} {:?}",
                xs, ks
            )));
        }
        if stride == 0 {
            return Err(NeflError::Contract("conv2d stride must be >= 1".into()));
        }
        let (bsz, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (f, ksz) = (ks[0], ks[2]);
        if h + 2 * pad < ksz || w + 2 * pad < ksz {
            return Err(NeflError::Dimension(format!(
                "conv2d input {}x{} too small for kernel {} pad {}",
                h, w, ksz, pad
            )));
        }
        let oh = (h + 2 * pad - ksz) / stride + 1;
        let ow = (w + 2 * pad - ksz) / stride + 1;
        let xv = self.value(x).data();
        let kv = self.value(k).data();
        let mut out = vec![0.0; bsz * f * oh * ow];
        for b in 0..bsz {
            for fo in 0..f {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for i in 0..ksz {
                                let ih = (r * stride + i) as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for j in 0..ksz {
                                    let iw = (c * stride + j) as isize - pad as isize;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    acc += xv[((b * cin + ci) * h + ih as usize) * w + iw as usize]
                                        * kv[((fo * cin + ci) * ksz + i) * ksz + j];
                                }
                            }
                        }
                        out[((b * f + fo) * oh + r) * ow + c] = acc;
                    }
                }
            }
        }
        let value = Tensor::from_vec(vec![bsz, f, oh, ow], out)?;
        Ok(self.push(value, Op::Conv2d { x, k, stride, pad }, false))
    }

    /// Batch normalization over axis 1 of a [B,C] or [B,C,H,W] tensor.
    ///
    /// Train mode normalizes with batch statistics (biased variance) and
    /// updates the running statistics in place via an exponential moving
    /// average (unbiased variance, PyTorch convention). Eval mode normalizes
    /// with the running statistics and leaves them untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        running_mean: &mut Tensor,
        running_var: &mut Tensor,
        mode: Mode,
        momentum: f64,
        eps: f64,
    ) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 && xs.len() != 4 {
            return Err(NeflError::Dimension(format!(
                "batchnorm expects [B,C] or [B,C,H,W], got {:?}",
                xs
            )));
        }
        let (bsz, ch) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        for (name, t) in [
            ("scale", self.value(scale).shape()),
            ("shift", self.value(shift).shape()),
            ("running_mean", running_mean.shape()),
            ("running_var", running_var.shape()),
        ] {
            if t != [ch] {
                return Err(NeflError::Dimension(format!(
                    "batchnorm {} must have shape [{}], got {:?}",
                    name, ch, t
                )));
            }
        }
        if mode == Mode::Train && bsz < 2 {
            return Err(NeflError::DegenerateBatch(format!(
                "batchnorm train mode needs a batch of at least 2, got {}",
                bsz
            )));
        }

        let n = (bsz * spatial) as f64;
        let xv = self.value(x).data();
        let stride_c = spatial;
        let per_channel = |c: usize, f: &mut dyn FnMut(usize)| {
            for b in 0..bsz {
                let base = (b * ch + c) * stride_c;
                for s in 0..spatial {
                    f(base + s);
                }
            }
        };

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut acc = 0.0;
                    per_channel(c, &mut |i| acc += xv[i]);
                    let m = acc / n;
                    let mut acc2 = 0.0;
                    per_channel(c, &mut |i| {
                        let d = xv[i] - m;
                        acc2 += d * d;
                    });
                    mean[c] = m;
                    var[c] = acc2 / n;
                }
                // EMA update with the unbiased batch variance.
                let unbias = n / (n - 1.0);
                for c in 0..ch {
                    running_mean.data_mut()[c] =
                        (1.0 - momentum) * running_mean.data()[c] + momentum * mean[c];
                    running_var.data_mut()[c] =
                        (1.0 - momentum) * running_var.data()[c] + momentum * var[c] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
        };

        let mut inv_std = vec![0.0; ch];
        for c in 0..ch {
            inv_std[c] = 1.0 / (var[c] + eps).sqrt();
        }
        let mut xhat = vec![0.0; xv.len()];
        for c in 0..ch {
            per_channel(c, &mut |i| xhat[i] = (xv[i] - mean[c]) * inv_std[c]);
        }
        let sv = self.value(scale).data().to_vec();
        let bv = self.value(shift).data().to_vec();
        let mut out = vec![0.0; xv.len()];
        for c in 0..ch {
            per_channel(c, &mut |i| out[i] = sv[c] * xhat[i] + bv[c]);
        }
        let xhat = Tensor::from_vec(xs.clone(), xhat)?;
        let value = Tensor::from_vec(xs, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm { x, scale, shift, xhat, inv_std, train: mode == Mode::Train },
            false,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::from_vec(self.value(x).shape().to_vec(), out).expect("same shape");
        self.push(value, Op::Relu { x }, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NeflError::Dimension(format!(
                "add expects equal shapes, got {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape().to_vec(), out)?;
        Ok(self.push(value, Op::Add { a, b }, false))
    }

    /// Multiplies every element of `x` by the one-element tensor `s`.
    pub fn scale_by(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(NeflError::Dimension(format!(
                "scale_by expects a one-element scale, got shape {:?}",
                self.value(s).shape()
            )));
        }
        let sv = self.value(s).data()[0];
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| sv * v).collect();
        let value = Tensor::from_vec(self.value(x).shape().to_vec(), out)?;
        Ok(self.push(value, Op::ScaleBy { s, x }, false))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(NeflError::Dimension(format!(
                "global_avg_pool expects [B,C,H,W], got {:?}",
                xs
            )));
        }
        let (bsz, ch, spatial) = (xs[0], xs[1], xs[2] * xs[3]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; bsz * ch];
        for b in 0..bsz {
            for c in 0..ch {
                let base = (b * ch + c) * spatial;
                let mut acc = 0.0;
                for s in 0..spatial {
                    acc += xv[base + s];
                }
                out[b * ch + c] = acc / spatial as f64;
            }
        }
        let value = Tensor::from_vec(vec![bsz, ch], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x }, false))
    }

    /// Mean softmax cross-entropy of logits [B,K] against integer labels.
    /// Stabilized with the log-sum-exp trick; returns a scalar loss node.
    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(NeflError::Dimension(format!(
                "softmax_xent expects logits [B,K] with B == labels.len(), got {:?} and {}",
                ls,
                labels.len()
            )));
        }
        let (bsz, k) = (ls[0], ls[1]);
        if bsz == 0 {
            return Err(NeflError::DegenerateBatch("softmax_xent on an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(NeflError::Index(format!("label {} out of range for {} classes", bad, k)));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; bsz * k];
        let mut loss = 0.0;
        for b in 0..bsz {
            let row = &lv[b * k..(b + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &v in row {
                z += (v - m).exp();
            }
            for (c, &v) in row.iter().enumerate() {
                probs[b * k + c] = (v - m).exp() / z;
            }
            loss -= row[labels[b]] - m - z.ln();
        }
        loss /= bsz as f64;
        let probs = Tensor::from_vec(vec![bsz, k], probs)?;
        let value = Tensor::scalar(loss);
        Ok(self.push(value, Op::SoftmaxXent { logits, labels: labels.to_vec(), probs }, false))
    }

    /// Softmax probabilities saved by a `softmax_xent` node.
    pub fn softmax_probs(&self, id: NodeId) -> Option<&Tensor> {
        match &self.nodes[id.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x }, false)
    }

    /// Reverse pass from a scalar `root`. Visits nodes in exact reverse
    /// creation order; untouched nodes get no gradient entry.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(NeflError::Dimension(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[root.0] = Some(Tensor::scalar(1.0));

        for id in (0..=root.0).rev() {
            let Some(dy) = slots[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    slots[id] = Some(dy);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let (bsz, i) = {
                        let s = self.value(*x).shape();
                        (s[0], s[1])
                    };
                    let o = self.value(*w).shape()[1];
                    let dyv = dy.data();
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let mut dx = vec![0.0; bsz * i];
                    let mut dw = vec![0.0; i * o];
                    let mut db = vec![0.0; o];
                    for r in 0..bsz {
                        for c in 0..o {
                            let g = dyv[r * o + c];
                            db[c] += g;
                            for p in 0..i {
                                dx[r * i + p] += g * wv[p * o + c];
                                dw[p * o + c] += g * xv[r * i + p];
                            }
                        }
                    }
                    self.accum(&mut slots, *x, Tensor::from_vec(vec![bsz, i], dx)?)?;
                    self.accum(&mut slots, *w, Tensor::from_vec(vec![i, o], dw)?)?;
                    self.accum(&mut slots, *b, Tensor::from_vec(vec![o], db)?)?;
                }
                Op::Conv2d { x, k, stride, pad } => {
                    let xs = self.value(*x).shape().to_vec();
                    let ks = self.value(*k).shape().to_vec();
                    let (bsz, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let (f, ksz) = (ks[0], ks[2]);
                    let os = self.value(NodeId(id)).shape().to_vec();
                    let (oh, ow) = (os[2], os[3]);
                    let dyv = dy.data();
                    let xv = self.value(*x).data();
                    let kv = self.value(*k).data();
                    let mut dx = vec![0.0; xv.len()];
                    let mut dk = vec![0.0; kv.len()];
                    for b in 0..bsz {
                        for fo in 0..f {
                            for r in 0..oh {
                                for c in 0..ow {
                                    let g = dyv[((b * f + fo) * oh + r) * ow + c];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        for i in 0..ksz {
                                            let ih = (r * stride + i) as isize - *pad as isize;
                                            if ih < 0 || ih >= h as isize {
                                                continue;
                                            }
                                            for j in 0..ksz {
                                                let iw = (c * stride + j) as isize - *pad as isize;
                                                if iw < 0 || iw >= w as isize {
                                                    continue;
                                                }
                                                let xi = ((b * cin + ci) * h + ih as usize) * w
                                                    + iw as usize;
                                                let ki = ((fo * cin + ci) * ksz + i) * ksz + j;
                                                dx[xi] += g * kv[ki];
                                                dk[ki] += g * xv[xi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accum(&mut slots, *x, Tensor::from_vec(xs, dx)?)?;
                    self.accum(&mut slots, *k, Tensor::from_vec(ks, dk)?)?;
                }
                Op::BatchNorm { x, scale, shift, xhat, inv_std, train } => {
                    let xs = self.value(*x).shape().to_vec();
                    let (bsz, ch) = (xs[0], xs[1]);
                    let spatial: usize = xs[2..].iter().product();
                    let n = (bsz * spatial) as f64;
                    let dyv = dy.data();
                    let xh = xhat.data();
                    let sv = self.value(*scale).data();
                    let mut dscale = vec![0.0; ch];
                    let mut dshift = vec![0.0; ch];
                    let mut dx = vec![0.0; dyv.len()];
                    for c in 0..ch {
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for b in 0..bsz {
                            let base = (b * ch + c) * spatial;
                            for s in 0..spatial {
                                sum_dy += dyv[base + s];
                                sum_dy_xhat += dyv[base + s] * xh[base + s];
                            }
                        }
                        dshift[c] = sum_dy;
                        dscale[c] = sum_dy_xhat;
                        if *train {
                            // d/dx of batch-stat normalization, fused form.
                            let coef = sv[c] * inv_std[c] / n;
                            for b in 0..bsz {
                                let base = (b * ch + c) * spatial;
                                for s in 0..spatial {
                                    dx[base + s] = coef
                                        * (n * dyv[base + s] - sum_dy - xh[base + s] * sum_dy_xhat);
                                }
                            }
                        } else {
                            // Running stats are constants in eval mode.
                            let coef = sv[c] * inv_std[c];
                            for b in 0..bsz {
                                let base = (b * ch + c) * spatial;
                                for s in 0..spatial {
                                    dx[base + s] = coef * dyv[base + s];
                                }
                            }
                        }
                    }
                    self.accum(&mut slots, *x, Tensor::from_vec(xs, dx)?)?;
                    self.accum(&mut slots, *scale, Tensor::from_vec(vec![ch], dscale)?)?;
                    self.accum(&mut slots, *shift, Tensor::from_vec(vec![ch], dshift)?)?;
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).data();
                    let out: Vec<f64> = dy
                        .data()
                        .iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    self.accum(&mut slots, *x, Tensor::from_vec(self.value(*x).shape().to_vec(), out)?)?;
                }
                Op::Add { a, b } => {
                    self.accum(&mut slots, *a, dy.clone())?;
                    self.accum(&mut slots, *b, dy)?;
                }
                Op::ScaleBy { s, x } => {
                    let sv = self.value(*s).data()[0];
                    let xv = self.value(*x).data();
                    let mut ds = 0.0;
                    let mut dx = vec![0.0; xv.len()];
                    for (i, &g) in dy.data().iter().enumerate() {
                        ds += g * xv[i];
                        dx[i] = g * sv;
                    }
                    self.accum(&mut slots, *s, Tensor::scalar(ds))?;
                    self.accum(&mut slots, *x, Tensor::from_vec(self.value(*x).shape().to_vec(), dx)?)?;
                }
                Op::GlobalAvgPool { x } => {
                    let xs = self.value(*x).shape().to_vec();
                    let (bsz, ch, spatial) = (xs[0], xs[1], xs[2] * xs[3]);
                    let dyv = dy.data();
                    let mut dx = vec![0.0; bsz * ch * spatial];
                    for b in 0..bsz {
                        for c in 0..ch {
                            let g = dyv[b * ch + c] / spatial as f64;
                            let base = (b * ch + c) * spatial;
                            for s in 0..spatial {
                                dx[base + s] = g;
                            }
                        }
                    }
                    self.accum(&mut slots, *x, Tensor::from_vec(xs, dx)?)?;
                }
                Op::SoftmaxXent { logits, labels, probs } => {
                    let ls = self.value(*logits).shape().to_vec();
                    let (bsz, k) = (ls[0], ls[1]);
                    let g = dy.data()[0];
                    let pv = probs.data();
                    let mut dl = vec![0.0; bsz * k];
                    for b in 0..bsz {
                        for c in 0..k {
                            let ind = if labels[b] == c { 1.0 } else { 0.0 };
                            dl[b * k + c] = g * (pv[b * k + c] - ind) / bsz as f64;
                        }
                    }
                    self.accum(&mut slots, *logits, Tensor::from_vec(ls, dl)?)?;
                }
                Op::Sum { x } => {
                    let g = dy.data()[0];
                    let t = Tensor::full(self.value(*x).shape(), g);
                    self.accum(&mut slots, *x, t)?;
                }
            }
        }
        Ok(Gradients { slots })
    }

    fn accum(&self, slots: &mut [Option<Tensor>], id: NodeId, delta: Tensor) -> Result<()> {
        debug_assert_eq!(
            self.nodes[id.0].value.shape(),
            delta.shape(),
            "gradient shape must equal the node's value shape"
        );
        match &mut slots[id.0] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    /// True if the node was inserted with [`Tape::param`].
    pub fn is_param(&self, id: NodeId) -> bool {
        self.nodes[id.0].is_param
    }
}

/// One plain SGD update: `param -= lr * grad`, elementwise.
/// No momentum, no weight decay.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(NeflError::Dimension(format!(
            "sgd_step shapes differ: param {:?} vs grad {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(NeflError::Contract(format!("sgd_step needs a finite lr >= 0, got {}", lr)));
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}
