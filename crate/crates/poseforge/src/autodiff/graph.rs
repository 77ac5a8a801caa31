//! Forward-recording computation graph and reverse-mode backward pass.

use rayon::prelude::*;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Probabilities below this are clamped inside the cross-entropy.
pub const CROSS_ENTROPY_CLAMP: f64 = 1e-12;

/// Below this many multiply-accumulates, matmul and conv2d stay
/// single-threaded to dodge rayon overhead. The result is bit-identical
/// either way: each output slot is always reduced sequentially.
const PAR_THRESHOLD: usize = 1 << 15;

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Relu(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddBias { x: NodeId, b: NodeId },
    Matmul { a: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, stride: usize, pad: usize },
    BatchNorm(Box<BatchNormCtx>),
    Softmax(NodeId),
    GlobalMaxPool { x: NodeId, argmax: Vec<usize> },
    MaxPool2d { x: NodeId, argmax: Vec<usize> },
    GlobalAvgPool2d(NodeId),
    Concat { parts: Vec<NodeId> },
    SliceCols { x: NodeId, start: usize, len: usize },
    Reshape(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    Gather { x: NodeId, idx: Vec<usize> },
    CrossEntropy { p: NodeId, targets: Vec<usize> },
    Huber { x: NodeId, delta: f64 },
}

struct BatchNormCtx {
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    /// Normalized input, saved for the backward pass.
    xhat: Tensor,
    /// Per-feature 1/sqrt(var + eps) actually used in the forward pass.
    inv_std: Vec<f64>,
    train: bool,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias { .. } => "add_bias",
            Op::Matmul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm(_) => "batchnorm",
            Op::Softmax(_) => "softmax",
            Op::GlobalMaxPool { .. } => "global_max_pool",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::GlobalAvgPool2d(_) => "global_avg_pool2d",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::Reshape(_) => "reshape",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::Gather { .. } => "gather",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Huber { .. } => "huber",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Per-node gradients produced by [`Graph::backward`]. Nodes the loss does
/// not depend on have no entry, which reads as a zero gradient.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the loss with respect to the node, if any flowed there.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// Append-only computation tape.
///
/// Every method runs its forward computation immediately and panics if the
/// result contains non-finite values or the input shapes do not line up.
/// Append order is a topological order, so the backward pass is one reverse
/// sweep.
pub struct Graph<'s> {
    store: &'s ParamStore,
    train: bool,
    nodes: Vec<Node>,
    bn_updates: Vec<(ParamId, Tensor)>,
}

impl<'s> Graph<'s> {
    /// Opens a tape over `store`. `train` selects batch statistics and
    /// running-average updates inside batchnorm; evaluation mode reads the
    /// stored running statistics and never mutates anything.
    pub fn new(store: &'s ParamStore, train: bool) -> Graph<'s> {
        Graph {
            store,
            train,
            nodes: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn train_mode(&self) -> bool {
        self.train
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        assert!(
            value.all_finite(),
            "{} produced non-finite values",
            op.name()
        );
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf holding `t`.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Leaf holding a copy of the parameter value; gradients accumulate back
    /// into the store via [`Graph::apply_grads`].
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.store.get(id).value.clone();
        self.push(value, Op::Param(id))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::from_vec(
            self.value(x).shape(),
            self.value(x).data().iter().map(|&a| a.max(0.0)).collect(),
        );
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::from_vec(
            self.value(x).shape(),
            self.value(x).data().iter().map(|&a| a.tanh()).collect(),
        );
        self.push(v, Op::Tanh(x))
    }

    fn assert_same_shape(&self, what: &str, a: NodeId, b: NodeId) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{what} needs matching shapes, got {:?} and {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape("add", a, b);
        let v = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect(),
        );
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape("sub", a, b);
        let v = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x - y)
                .collect(),
        );
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape("mul", a, b);
        let v = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x * y)
                .collect(),
        );
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        assert!(c.is_finite(), "scale factor must be finite, got {c}");
        let v = Tensor::from_vec(
            self.value(x).shape(),
            self.value(x).data().iter().map(|&a| a * c).collect(),
        );
        self.push(v, Op::Scale(x, c))
    }

    /// Adds a `[F]` bias row-wise to a `[N, F]` matrix.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        assert!(
            xs.len() == 2 && bs.len() == 1 && bs[0] == xs[1],
            "add_bias needs [N, F] plus [F], got {xs:?} and {bs:?}"
        );
        let (n, f) = (xs[0], xs[1]);
        let mut out = vec![0.0; n * f];
        let xv = self.value(x).data();
        let bv = self.value(b).data();
        for i in 0..n {
            for j in 0..f {
                out[i * f + j] = xv[i * f + j] + bv[j];
            }
        }
        self.push(Tensor::from_vec(&xs, out), Op::AddBias { x, b })
    }

    /// Matrix product of `[N, K]` and `[K, M]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let asp = self.value(a).shape().to_vec();
        let bsp = self.value(b).shape().to_vec();
        assert!(
            asp.len() == 2 && bsp.len() == 2 && asp[1] == bsp[0],
            "matmul needs [N, K] x [K, M], got {asp:?} and {bsp:?}"
        );
        let (n, k, m) = (asp[0], asp[1], bsp[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; n * m];
        let row = |out_row: &mut [f64], i: usize| {
            for kk in 0..k {
                let aik = av[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[kk * m..(kk + 1) * m];
                for (o, &bb) in out_row.iter_mut().zip(brow) {
                    *o += aik * bb;
                }
            }
        };
        if n * k * m >= PAR_THRESHOLD {
            out.par_chunks_mut(m).enumerate().for_each(|(i, o)| row(o, i));
        } else {
            for (i, o) in out.chunks_mut(m).enumerate() {
                row(o, i);
            }
        }
        self.push(Tensor::from_vec(&[n, m], out), Op::Matmul { a, b })
    }

    /// 2D convolution: input `[N, Cin, H, W]`, kernel `[Cout, Cin, KH, KW]`,
    /// zero padding `pad` on all sides, square stride.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> NodeId {
        assert!(stride >= 1, "conv2d stride must be at least 1");
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        assert!(
            xs.len() == 4 && ws.len() == 4 && xs[1] == ws[1],
            "conv2d needs [N, Cin, H, W] with kernel [Cout, Cin, KH, KW], got {xs:?} and {ws:?}"
        );
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        assert!(
            h + 2 * pad >= kh && wd + 2 * pad >= kw,
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            wd + 2 * pad
        );
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; n * cout * ho * wo];
        let plane = |o: &mut [f64], pi: usize| {
            let (ni, co) = (pi / cout, pi % cout);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for u in 0..kh {
                            let iy = (oy * stride + u) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for v in 0..kw {
                                let ix = (ox * stride + v) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += xv[((ni * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * wv[((co * cin + ci) * kh + u) * kw + v];
                            }
                        }
                    }
                    o[oy * wo + ox] = acc;
                }
            }
        };
        if n * cout * ho * wo * cin * kh * kw >= PAR_THRESHOLD {
            out.par_chunks_mut(ho * wo)
                .enumerate()
                .for_each(|(pi, o)| plane(o, pi));
        } else {
            for (pi, o) in out.chunks_mut(ho * wo).enumerate() {
                plane(o, pi);
            }
        }
        self.push(
            Tensor::from_vec(&[n, cout, ho, wo], out),
            Op::Conv2d { x, w, stride, pad },
        )
    }

    /// Batch normalization over feature axis 1 of a `[N, F]` or
    /// `[N, C, H, W]` tensor.
    ///
    /// In train mode statistics come from the batch (which must have at least
    /// two rows) and updates to the running statistics are queued:
    /// `running = momentum * running + (1 - momentum) * batch`, with the
    /// unbiased batch variance. The queue is written to the store by
    /// [`Graph::apply_grads`]. In evaluation mode the stored running
    /// statistics are used and nothing is queued.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: ParamId,
        running_var: ParamId,
        momentum: f64,
        eps: f64,
    ) -> NodeId {
        let xs = self.value(x).shape().to_vec();
        assert!(
            xs.len() == 2 || xs.len() == 4,
            "batchnorm needs [N, F] or [N, C, H, W], got {xs:?}"
        );
        let features = xs[1];
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            assert_eq!(
                self.value(id).shape(),
                &[features],
                "batchnorm {name} must have shape [{features}]"
            );
        }
        let count = self.value(x).numel() / features;
        if self.train {
            assert!(
                xs[0] >= 2,
                "train-mode batchnorm needs a batch of at least 2, got {}",
                xs[0]
            );
        }

        let xv = self.value(x).data();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();

        let (mean, var): (Vec<f64>, Vec<f64>) = if self.train {
            let mut mean = vec![0.0; features];
            let mut var = vec![0.0; features];
            for f in 0..features {
                let mut acc = 0.0;
                for_feature(&xs, f, |i| acc += xv[i]);
                let mu = acc / count as f64;
                let mut acc2 = 0.0;
                for_feature(&xs, f, |i| acc2 += (xv[i] - mu) * (xv[i] - mu));
                mean[f] = mu;
                var[f] = acc2 / count as f64;
            }
            (mean, var)
        } else {
            (
                self.store.get(running_mean).value.data().to_vec(),
                self.store.get(running_var).value.data().to_vec(),
            )
        };
        assert_eq!(mean.len(), features, "running mean length mismatch");
        assert_eq!(var.len(), features, "running var length mismatch");

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for f in 0..features {
            let (mu, is, g, b) = (mean[f], inv_std[f], gv[f], bv[f]);
            for_feature(&xs, f, |i| {
                let xh = (xv[i] - mu) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            });
        }

        if self.train {
            let old_m = self.store.get(running_mean).value.data();
            let old_v = self.store.get(running_var).value.data();
            let bessel = count as f64 / (count as f64 - 1.0);
            let new_m = Tensor::from_vec(
                &[features],
                (0..features)
                    .map(|f| momentum * old_m[f] + (1.0 - momentum) * mean[f])
                    .collect(),
            );
            let new_v = Tensor::from_vec(
                &[features],
                (0..features)
                    .map(|f| momentum * old_v[f] + (1.0 - momentum) * var[f] * bessel)
                    .collect(),
            );
            self.bn_updates.push((running_mean, new_m));
            self.bn_updates.push((running_var, new_v));
        }

        let ctx = BatchNormCtx {
            x,
            gamma,
            beta,
            xhat: Tensor::from_vec(&xs, xhat),
            inv_std,
            train: self.train,
        };
        self.push(Tensor::from_vec(&xs, out), Op::BatchNorm(Box::new(ctx)))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xs = self.value(x).shape().to_vec();
        let l = *xs.last().expect("softmax needs rank >= 1");
        assert!(l > 0, "softmax axis is empty");
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for (row_o, row_x) in out.chunks_mut(l).zip(xv.chunks(l)) {
            let max = row_x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (o, &v) in row_o.iter_mut().zip(row_x) {
                *o = (v - max).exp();
                denom += *o;
            }
            for o in row_o.iter_mut() {
                *o /= denom;
            }
        }
        self.push(Tensor::from_vec(&xs, out), Op::Softmax(x))
    }

    /// Max over the point axis of `[N, P, F]`, returning `[N, F]`. Ties keep
    /// the lowest point index.
    pub fn global_max_pool(&mut self, x: NodeId) -> NodeId {
        let xs = self.value(x).shape().to_vec();
        assert!(xs.len() == 3, "global_max_pool needs [N, P, F], got {xs:?}");
        let (n, p, f) = (xs[0], xs[1], xs[2]);
        assert!(p > 0, "global_max_pool needs at least one point");
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * f];
        let mut argmax = vec![0usize; n * f];
        for i in 0..n {
            for j in 0..f {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0;
                for k in 0..p {
                    let v = xv[(i * p + k) * f + j];
                    if v > best {
                        best = v;
                        best_at = k;
                    }
                }
                out[i * f + j] = best;
                argmax[i * f + j] = (i * p + best_at) * f + j;
            }
        }
        self.push(
            Tensor::from_vec(&[n, f], out),
            Op::GlobalMaxPool { x, argmax },
        )
    }

    /// Square max pooling over `[N, C, H, W]`. Ties keep the first element in
    /// window scan order.
    pub fn max_pool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> NodeId {
        assert!(kernel >= 1 && stride >= 1, "max_pool2d needs kernel, stride >= 1");
        let xs = self.value(x).shape().to_vec();
        assert!(xs.len() == 4, "max_pool2d needs [N, C, H, W], got {xs:?}");
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert!(
            h >= kernel && w >= kernel,
            "max_pool2d kernel {kernel} larger than input {h}x{w}"
        );
        let ho = (h - kernel) / stride + 1;
        let wo = (w - kernel) / stride + 1;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for pi in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0;
                    for u in 0..kernel {
                        for v in 0..kernel {
                            let idx = (pi * h + oy * stride + u) * w + ox * stride + v;
                            if xv[idx] > best {
                                best = xv[idx];
                                best_at = idx;
                            }
                        }
                    }
                    let o = (pi * ho + oy) * wo + ox;
                    out[o] = best;
                    argmax[o] = best_at;
                }
            }
        }
        self.push(
            Tensor::from_vec(&[n, c, ho, wo], out),
            Op::MaxPool2d { x, argmax },
        )
    }

    /// Mean over the spatial axes of `[N, C, H, W]`, returning `[N, C]`.
    pub fn global_avg_pool2d(&mut self, x: NodeId) -> NodeId {
        let xs = self.value(x).shape().to_vec();
        assert!(xs.len() == 4, "global_avg_pool2d needs [N, C, H, W], got {xs:?}");
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let area = (h * w) as f64;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for (pi, o) in out.iter_mut().enumerate() {
            let base = pi * h * w;
            *o = xv[base..base + h * w].iter().sum::<f64>() / area;
        }
        self.push(Tensor::from_vec(&[n, c], out), Op::GlobalAvgPool2d(x))
    }

    /// Concatenates `[N, F_i]` matrices along axis 1.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat needs at least one part");
        let n = self.value(parts[0]).dim(0);
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            assert!(
                s.len() == 2 && s[0] == n,
                "concat parts must share the batch size, got {s:?} vs batch {n}"
            );
            total += s[1];
        }
        let mut out = vec![0.0; n * total];
        let mut offset = 0;
        for &p in parts {
            let f = self.value(p).dim(1);
            let pv = self.value(p).data();
            for i in 0..n {
                out[i * total + offset..i * total + offset + f]
                    .copy_from_slice(&pv[i * f..(i + 1) * f]);
            }
            offset += f;
        }
        self.push(
            Tensor::from_vec(&[n, total], out),
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    /// Columns `[start, start + len)` of a `[N, F]` matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xs = self.value(x).shape().to_vec();
        assert!(
            xs.len() == 2 && start + len <= xs[1] && len > 0,
            "slice_cols [{start}, {}) out of bounds for {xs:?}",
            start + len
        );
        let (n, f) = (xs[0], xs[1]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * len];
        for i in 0..n {
            out[i * len..(i + 1) * len].copy_from_slice(&xv[i * f + start..i * f + start + len]);
        }
        self.push(
            Tensor::from_vec(&[n, len], out),
            Op::SliceCols { x, start, len },
        )
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let v = self.value(x).reshaped(shape);
        self.push(v, Op::Reshape(x))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel();
        assert!(n > 0, "mean of an empty tensor");
        let v = self.value(x).data().iter().sum::<f64>() / n as f64;
        self.push(Tensor::scalar(v), Op::Mean(x))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).data().iter().sum::<f64>();
        self.push(Tensor::scalar(v), Op::Sum(x))
    }

    /// Picks `x[i, idx[i]]` per row of a `[N, L]` matrix, returning `[N]`.
    pub fn gather(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let xs = self.value(x).shape().to_vec();
        assert!(
            xs.len() == 2 && idx.len() == xs[0],
            "gather needs [N, L] with N indices, got {xs:?} and {} indices",
            idx.len()
        );
        let l = xs[1];
        for (i, &j) in idx.iter().enumerate() {
            assert!(j < l, "gather index {j} out of range {l} at row {i}");
        }
        let xv = self.value(x).data();
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| xv[i * l + j]).collect();
        self.push(
            Tensor::from_vec(&[xs[0]], out),
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    /// Per-row negative log likelihood `-ln(max(p[i, t_i], 1e-12))` of
    /// probabilities `[N, L]` against target labels, returning `[N]`.
    pub fn cross_entropy(&mut self, p: NodeId, targets: &[usize]) -> NodeId {
        let ps = self.value(p).shape().to_vec();
        assert!(
            ps.len() == 2 && targets.len() == ps[0],
            "cross_entropy needs [N, L] with N targets, got {ps:?} and {} targets",
            targets.len()
        );
        let l = ps[1];
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < l, "target {t} out of range {l} at row {i}");
        }
        let pv = self.value(p).data();
        let out: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -pv[i * l + t].max(CROSS_ENTROPY_CLAMP).ln())
            .collect();
        self.push(
            Tensor::from_vec(&[ps[0]], out),
            Op::CrossEntropy {
                p,
                targets: targets.to_vec(),
            },
        )
    }

    /// Elementwise Huber penalty: `r^2 / 2` for `|r| <= delta`, else
    /// `delta * (|r| - delta / 2)`.
    pub fn huber(&mut self, x: NodeId, delta: f64) -> NodeId {
        assert!(delta > 0.0, "huber delta must be positive, got {delta}");
        let v = Tensor::from_vec(
            self.value(x).shape(),
            self.value(x)
                .data()
                .iter()
                .map(|&r| {
                    if r.abs() <= delta {
                        0.5 * r * r
                    } else {
                        delta * (r.abs() - 0.5 * delta)
                    }
                })
                .collect(),
        );
        self.push(v, Op::Huber { x, delta })
    }

    /// Reverse sweep from a scalar `loss` node. Returns per-node gradients;
    /// the store is untouched until [`Graph::apply_grads`].
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(
            self.value(loss).numel(),
            1,
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].clone() else { continue };
            match &self.nodes[i].op {
                Op::Leaf | Op::Param(_) => {}
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let g = Tensor::from_vec(
                        self.value(*x).shape(),
                        dy.data()
                            .iter()
                            .zip(xv)
                            .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                            .collect(),
                    );
                    accumulate(&mut grads, *x, g);
                }
                Op::Tanh(x) => {
                    let yv = self.nodes[i].value.data();
                    let g = Tensor::from_vec(
                        self.value(*x).shape(),
                        dy.data()
                            .iter()
                            .zip(yv)
                            .map(|(&d, &y)| d * (1.0 - y * y))
                            .collect(),
                    );
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    accumulate(&mut grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, dy.clone());
                    let neg = Tensor::from_vec(
                        dy.shape(),
                        dy.data().iter().map(|&d| -d).collect(),
                    );
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let ga = Tensor::from_vec(
                        dy.shape(),
                        dy.data().iter().zip(bv).map(|(&d, &v)| d * v).collect(),
                    );
                    let gb = Tensor::from_vec(
                        dy.shape(),
                        dy.data().iter().zip(av).map(|(&d, &v)| d * v).collect(),
                    );
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, c) => {
                    let g = Tensor::from_vec(
                        dy.shape(),
                        dy.data().iter().map(|&d| d * c).collect(),
                    );
                    accumulate(&mut grads, *x, g);
                }
                Op::AddBias { x, b } => {
                    let f = dy.dim(1);
                    let mut db = vec![0.0; f];
                    for row in dy.data().chunks(f) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, dy.clone());
                    accumulate(&mut grads, *b, Tensor::from_vec(&[f], db));
                }
                Op::Matmul { a, b } => {
                    let (n, k) = (self.value(*a).dim(0), self.value(*a).dim(1));
                    let m = self.value(*b).dim(1);
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let dyv = dy.data();

                    let mut da = vec![0.0; n * k];
                    let da_row = |o: &mut [f64], i: usize| {
                        for mm in 0..m {
                            let d = dyv[i * m + mm];
                            if d == 0.0 {
                                continue;
                            }
                            for (kk, oo) in o.iter_mut().enumerate() {
                                *oo += d * bv[kk * m + mm];
                            }
                        }
                    };
                    let mut db = vec![0.0; k * m];
                    let db_row = |o: &mut [f64], kk: usize| {
                        for i in 0..n {
                            let a_ik = av[i * k + kk];
                            if a_ik == 0.0 {
                                continue;
                            }
                            for (mm, oo) in o.iter_mut().enumerate() {
                                *oo += a_ik * dyv[i * m + mm];
                            }
                        }
                    };
                    if n * k * m >= PAR_THRESHOLD {
                        da.par_chunks_mut(k).enumerate().for_each(|(i, o)| da_row(o, i));
                        db.par_chunks_mut(m).enumerate().for_each(|(kk, o)| db_row(o, kk));
                    } else {
                        for (i, o) in da.chunks_mut(k).enumerate() {
                            da_row(o, i);
                        }
                        for (kk, o) in db.chunks_mut(m).enumerate() {
                            db_row(o, kk);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(&[n, k], da));
                    accumulate(&mut grads, *b, Tensor::from_vec(&[k, m], db));
                }
                Op::Conv2d { x, w, stride, pad } => {
                    let (dx, dw) = self.conv2d_backward(*x, *w, *stride, *pad, &dy);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::BatchNorm(ctx) => {
                    let (dx, dgamma, dbeta) = self.batchnorm_backward(ctx, &dy);
                    accumulate(&mut grads, ctx.x, dx);
                    accumulate(&mut grads, ctx.gamma, dgamma);
                    accumulate(&mut grads, ctx.beta, dbeta);
                }
                Op::Softmax(x) => {
                    let yv = self.nodes[i].value.data();
                    let l = *self.nodes[i].value.shape().last().unwrap();
                    let mut dx = vec![0.0; yv.len()];
                    for ((dx_row, y_row), dy_row) in
                        dx.chunks_mut(l).zip(yv.chunks(l)).zip(dy.data().chunks(l))
                    {
                        let dot: f64 = dy_row.iter().zip(y_row).map(|(&d, &y)| d * y).sum();
                        for ((o, &y), &d) in dx_row.iter_mut().zip(y_row).zip(dy_row) {
                            *o = y * (d - dot);
                        }
                    }
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(self.value(*x).shape(), dx),
                    );
                }
                Op::GlobalMaxPool { x, argmax } => {
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    for (o, &src) in dy.data().iter().zip(argmax) {
                        dx[src] += o;
                    }
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(self.value(*x).shape(), dx),
                    );
                }
                Op::MaxPool2d { x, argmax, .. } => {
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    for (o, &src) in dy.data().iter().zip(argmax) {
                        dx[src] += o;
                    }
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(self.value(*x).shape(), dx),
                    );
                }
                Op::GlobalAvgPool2d(x) => {
                    let xs = self.value(*x).shape();
                    let (h, w) = (xs[2], xs[3]);
                    let area = (h * w) as f64;
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    for (pi, &d) in dy.data().iter().enumerate() {
                        let share = d / area;
                        for o in &mut dx[pi * h * w..(pi + 1) * h * w] {
                            *o += share;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(xs, dx));
                }
                Op::Concat { parts } => {
                    let n = dy.dim(0);
                    let total = dy.dim(1);
                    let mut offset = 0;
                    for &p in parts {
                        let f = self.value(p).dim(1);
                        let mut dp = vec![0.0; n * f];
                        for i in 0..n {
                            dp[i * f..(i + 1) * f].copy_from_slice(
                                &dy.data()[i * total + offset..i * total + offset + f],
                            );
                        }
                        accumulate(&mut grads, p, Tensor::from_vec(&[n, f], dp));
                        offset += f;
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let xs = self.value(*x).shape();
                    let (n, f) = (xs[0], xs[1]);
                    let mut dx = vec![0.0; n * f];
                    for i in 0..n {
                        dx[i * f + start..i * f + start + len]
                            .copy_from_slice(&dy.data()[i * len..(i + 1) * len]);
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(xs, dx));
                }
                Op::Reshape(x) => {
                    accumulate(
                        &mut grads,
                        *x,
                        dy.reshaped(self.value(*x).shape()),
                    );
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel() as f64;
                    let share = dy.item() / n;
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(
                            self.value(*x).shape(),
                            vec![share; self.value(*x).numel()],
                        ),
                    );
                }
                Op::Sum(x) => {
                    let share = dy.item();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_vec(
                            self.value(*x).shape(),
                            vec![share; self.value(*x).numel()],
                        ),
                    );
                }
                Op::Gather { x, idx } => {
                    let xs = self.value(*x).shape();
                    let l = xs[1];
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    for (i, (&j, &d)) in idx.iter().zip(dy.data()).enumerate() {
                        dx[i * l + j] += d;
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(xs, dx));
                }
                Op::CrossEntropy { p, targets } => {
                    let ps = self.value(*p).shape();
                    let l = ps[1];
                    let pv = self.value(*p).data();
                    let mut dp = vec![0.0; self.value(*p).numel()];
                    for (i, (&t, &d)) in targets.iter().zip(dy.data()).enumerate() {
                        let prob = pv[i * l + t];
                        // Inside the clamp the loss is flat in p.
                        if prob > CROSS_ENTROPY_CLAMP {
                            dp[i * l + t] = -d / prob;
                        }
                    }
                    accumulate(&mut grads, *p, Tensor::from_vec(ps, dp));
                }
                Op::Huber { x, delta } => {
                    let xv = self.value(*x).data();
                    let g = Tensor::from_vec(
                        self.value(*x).shape(),
                        dy.data()
                            .iter()
                            .zip(xv)
                            .map(|(&d, &r)| d * r.clamp(-delta, *delta))
                            .collect(),
                    );
                    accumulate(&mut grads, *x, g);
                }
            }
        }
        Grads { grads }
    }

    /// Accumulates parameter gradients from `grads` into the store and
    /// applies any queued batchnorm running-statistic updates.
    pub fn apply_grads(&self, grads: &Grads, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = grads.wrt(NodeId(i)) {
                    let dst = store.get_mut(pid);
                    assert_eq!(
                        dst.grad.shape(),
                        g.shape(),
                        "gradient shape mismatch for '{}'",
                        dst.name
                    );
                    for (d, s) in dst.grad.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
            }
        }
        for (pid, value) in &self.bn_updates {
            store.get_mut(*pid).value = value.clone();
        }
    }

    fn conv2d_backward(
        &self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        dy: &Tensor,
    ) -> (Tensor, Tensor) {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let (ho, wo) = (dy.dim(2), dy.dim(3));
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let dyv = dy.data();

        let mut dw = vec![0.0; wv.len()];
        let dw_plane = |o: &mut [f64], co: usize| {
            for ni in 0..n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let d = dyv[((ni * cout + co) * ho + oy) * wo + ox];
                        if d == 0.0 {
                            continue;
                        }
                        for ci in 0..cin {
                            for u in 0..kh {
                                let iy = (oy * stride + u) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for v in 0..kw {
                                    let ix = (ox * stride + v) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    o[(ci * kh + u) * kw + v] += d
                                        * xv[((ni * cin + ci) * h + iy as usize) * wd
                                            + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        };
        let mut dx = vec![0.0; xv.len()];
        let dx_plane = |o: &mut [f64], ni: usize| {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let d = dyv[((ni * cout + co) * ho + oy) * wo + ox];
                        if d == 0.0 {
                            continue;
                        }
                        for ci in 0..cin {
                            for u in 0..kh {
                                let iy = (oy * stride + u) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for v in 0..kw {
                                    let ix = (ox * stride + v) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    o[(ci * h + iy as usize) * wd + ix as usize] +=
                                        d * wv[((co * cin + ci) * kh + u) * kw + v];
                                }
                            }
                        }
                    }
                }
            }
        };
        let work = n * cout * ho * wo * cin * kh * kw;
        if work >= PAR_THRESHOLD {
            dw.par_chunks_mut(cin * kh * kw)
                .enumerate()
                .for_each(|(co, o)| dw_plane(o, co));
            dx.par_chunks_mut(cin * h * wd)
                .enumerate()
                .for_each(|(ni, o)| dx_plane(o, ni));
        } else {
            for (co, o) in dw.chunks_mut(cin * kh * kw).enumerate() {
                dw_plane(o, co);
            }
            for (ni, o) in dx.chunks_mut(cin * h * wd).enumerate() {
                dx_plane(o, ni);
            }
        }
        (Tensor::from_vec(&xs, dx), Tensor::from_vec(&ws, dw))
    }

    fn batchnorm_backward(&self, ctx: &BatchNormCtx, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let xs = self.value(ctx.x).shape().to_vec();
        let features = xs[1];
        let count = (dy.numel() / features) as f64;
        let gv = self.value(ctx.gamma).data();
        let xh = ctx.xhat.data();
        let dyv = dy.data();

        let mut dgamma = vec![0.0; features];
        let mut dbeta = vec![0.0; features];
        let mut dx = vec![0.0; dyv.len()];
        for f in 0..features {
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for_feature(&xs, f, |i| {
                sum_dy += dyv[i];
                sum_dy_xh += dyv[i] * xh[i];
            });
            dgamma[f] = sum_dy_xh;
            dbeta[f] = sum_dy;
            let scale = gv[f] * ctx.inv_std[f];
            if ctx.train {
                let mean_dy = sum_dy / count;
                let mean_dy_xh = sum_dy_xh / count;
                for_feature(&xs, f, |i| {
                    dx[i] = scale * (dyv[i] - mean_dy - xh[i] * mean_dy_xh);
                });
            } else {
                for_feature(&xs, f, |i| {
                    dx[i] = scale * dyv[i];
                });
            }
        }
        (
            Tensor::from_vec(&xs, dx),
            Tensor::from_vec(&[features], dgamma),
            Tensor::from_vec(&[features], dbeta),
        )
    }
}

/// Calls `f` with the flat index of every element belonging to feature `f`
/// (axis 1) of a `[N, F]` or `[N, C, H, W]` tensor.
fn for_feature(shape: &[usize], feature: usize, mut f: impl FnMut(usize)) {
    match shape.len() {
        2 => {
            let (n, fs) = (shape[0], shape[1]);
            for i in 0..n {
                f(i * fs + feature);
            }
        }
        4 => {
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            for i in 0..n {
                let base = (i * c + feature) * h * w;
                for s in 0..h * w {
                    f(base + s);
                }
            }
        }
        _ => panic!("batchnorm supports rank 2 or 4, got {shape:?}"),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            assert_eq!(existing.shape(), g.shape(), "gradient accumulation shape mismatch");
            for (d, s) in existing.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
