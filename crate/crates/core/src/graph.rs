//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its
//! forward value and enough information to run its gradient rule. Nodes
//! only ever reference earlier nodes, so the tape is topologically sorted
//! by construction and the reverse pass is a single backwards sweep.
//!
//! A graph supports exactly one call to [`Graph::backward`]. Build a fresh
//! graph for every forward pass.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Exponential-moving-average statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize, momentum: f64) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum,
        }
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn frozen(value: Tensor) -> Self {
        Self {
            trainable: false,
            ..Self::new(value)
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Standardized input `(x − μ)/σ`.
        xhat: Tensor,
        inv_std: Vec<f64>,
        /// Batch statistics were used (gradient flows through μ and σ).
        train: bool,
    },
    Relu(Var),
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
        eps: f64,
    },
    Reduce {
        x: Var,
        kind: Reduction,
        axes: Vec<usize>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Reshape(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    Pairwise {
        a: Var,
        b: Var,
    },
    Gather {
        x: Var,
        indices: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu(_) => "relu",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Reduce { .. } => "reduce",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::Reshape(_) => "reshape",
            Op::SliceRows { .. } => "slice_rows",
            Op::Pairwise { .. } => "pairwise_distance",
            Op::Gather { .. } => "gather",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Computation record for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
    check_finite: bool,
}

/// Gradients of a scalar loss with respect to the trainable leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects any operation whose output contains NaN or infinity.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Trainable leaf: gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, trainable: bool) -> Result<Var> {
        self.ensure_live()?;
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ensure_live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::StaleRecord)
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        self.ensure_live()?;
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Cross-correlation of an NCHW input with OIHW weights.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("input {xs:?} and weights {ws:?} must both be rank 4"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be ≥ 1".into()));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, i, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c != i {
            return Err(Error::dim(
                "conv2d",
                format!("input channel axis (1) is {c} but weight input axis (1) is {i}"),
            ));
        }
        if kh > h + 2 * padding || kw > wd + 2 * padding {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "kernel {kh}×{kw} (axes 2,3) exceeds padded input {}×{}",
                    h + 2 * padding,
                    wd + 2 * padding
                ),
            ));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (wd + 2 * padding - kw) / stride + 1,
        };
        let y = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data());
        let value = Tensor::new(&[n, o, geom.oh, geom.ow], y)?;
        self.push(value, Op::Conv2d { x, w, geom }, &[x, w])
    }

    /// Per-channel batch normalization of an NCHW tensor.
    ///
    /// In train mode the batch statistics are used and `running` is updated
    /// in place; in eval mode `running` supplies the statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        running: &mut RunningStats,
        eps: f64,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::dim("batch_norm", format!("input {xs:?} is not NCHW")));
        }
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        for (label, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::dim(
                    "batch_norm",
                    format!("{label} has shape {:?}, input has {c} channels", self.shape(v)),
                ));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(Error::dim(
                "batch_norm",
                format!("running statistics sized {} for {c} channels", running.mean.len()),
            ));
        }
        let count = n * plane;
        let train = mode == BnMode::Train;
        if train && count < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_norm in train mode needs at least 2 values per channel, got {count}"
            )));
        }
        let xv = self.value(x).data();
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for s_idx in 0..n {
                    s += xv[(s_idx * c + ch) * plane..][..plane].iter().sum::<f64>();
                }
                let mu = s / count as f64;
                let mut sq = 0.0;
                for s_idx in 0..n {
                    sq += xv[(s_idx * c + ch) * plane..][..plane]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = sq / count as f64;
            }
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut y = vec![0.0; xv.len()];
        for s_idx in 0..n {
            for ch in 0..c {
                let off = (s_idx * c + ch) * plane;
                for k in off..off + plane {
                    let h = (xv[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = h;
                    y[k] = g[ch] * h + b[ch];
                }
            }
        }
        if train {
            let m = running.momentum;
            let unbiased = count as f64 / (count - 1) as f64;
            for ch in 0..c {
                running.mean[ch] = (1.0 - m) * running.mean[ch] + m * mean[ch];
                running.var[ch] = (1.0 - m) * running.var[ch] + m * var[ch] * unbiased;
            }
        }
        let value = Tensor::new(&xs, y)?;
        let xhat = Tensor::new(&xs, xhat)?;
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x), &[x])
    }

    /// Divides each row of an `N×D` tensor by `max(‖row‖₂, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::dim("l2_normalize", format!("expected N×D, got {xs:?}")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(xv.len());
        let mut norms = Vec::with_capacity(xs[0]);
        for i in 0..xs[0] {
            let row = xv.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm.max(eps);
            out.extend(row.iter().map(|v| v / denom));
            norms.push(norm);
        }
        let value = Tensor::new(&xs, out)?;
        self.push(value, Op::L2Normalize { x, norms, eps }, &[x])
    }

    /// Sums or averages over `axes`, removing them from the shape.
    pub fn reduce(&mut self, x: Var, kind: Reduction, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::InvalidAxis {
                axis: bad,
                rank: shape.len(),
            });
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        let reduced: usize = axes.iter().map(|&a| shape[a]).product();
        let map = ReduceMap::new(&shape, &axes);
        let mut out = vec![0.0; out_shape.iter().product()];
        for (i, v) in self.value(x).data().iter().enumerate() {
            out[map.target(i)] += v;
        }
        if kind == Reduction::Mean && reduced > 0 {
            for v in &mut out {
                *v /= reduced as f64;
            }
        }
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::Reduce { x, kind, axes }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(x, Reduction::Sum, &axes)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce(x, Reduction::Mean, &axes)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + offset);
        self.push(value, Op::Offset(a), &[a])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape(x), &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(x).slice_rows(start, end)?;
        self.push(value, Op::SliceRows { x, start }, &[x])
    }

    /// Euclidean distances between the rows of `a` (N×D) and `b` (M×D),
    /// via `max(0, ‖a‖² + ‖b‖² − 2a·b)^½`.
    pub fn pairwise_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = pairwise_distance(self.value(a), self.value(b))?;
        self.push(value, Op::Pairwise { a, b }, &[a, b])
    }

    /// Picks elements of `x` by flat (row-major) index into a vector.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::dim(
                "gather",
                format!("index {bad} out of range for {} elements", xv.len()),
            ));
        }
        let value = Tensor::from_vec(indices.iter().map(|&i| xv.data()[i]).collect());
        self.push(
            value,
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            &[x],
        )
    }

    /// Runs the reverse pass from a scalar `loss`.
    ///
    /// The graph is consumed: later operations or a second backward call
    /// fail with [`Error::StaleRecord`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.ensure_live()?;
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(gy);
                continue;
            }
            for (input, g) in self.input_grads(idx, &gy)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.trainable {
                *g = None;
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.trainable && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, idx: usize, gy: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy.data(),
                    self.needs(*x),
                    self.needs(*w),
                );
                let mut v = Vec::new();
                if let Some(dx) = dx {
                    v.push((*x, Tensor::new(self.shape(*x), dx)?));
                }
                if let Some(dw) = dw {
                    v.push((*w, Tensor::new(self.shape(*w), dw)?));
                }
                v
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = xhat.shape();
                let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let count = (n * plane) as f64;
                let g = self.value(*gamma).data();
                let (dy, xh) = (gy.data(), xhat.data());
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * plane;
                        for k in off..off + plane {
                            dbeta[ch] += dy[k];
                            dgamma[ch] += dy[k] * xh[k];
                        }
                    }
                }
                let mut dx = vec![0.0; dy.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * plane;
                        let scale = g[ch] * inv_std[ch];
                        for k in off..off + plane {
                            dx[k] = if *train {
                                scale * (dy[k] - dbeta[ch] / count - xh[k] * dgamma[ch] / count)
                            } else {
                                scale * dy[k]
                            };
                        }
                    }
                }
                vec![
                    (*x, Tensor::new(shape, dx)?),
                    (*gamma, Tensor::from_vec(dgamma)),
                    (*beta, Tensor::from_vec(dbeta)),
                ]
            }
            Op::Relu(x) => {
                let gx = self
                    .value(*x)
                    .zip_map(gy, |v, g| if v > 0.0 { g } else { 0.0 });
                vec![(*x, gx)]
            }
            Op::L2Normalize { x, norms, eps } => {
                let y = &node.value;
                let d = y.shape()[1];
                let mut gx = vec![0.0; y.len()];
                for (i, &norm) in norms.iter().enumerate() {
                    let yr = y.row(i);
                    let gr = gy.row(i);
                    let out = &mut gx[i * d..(i + 1) * d];
                    if norm > *eps {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for k in 0..d {
                            out[k] = (gr[k] - yr[k] * dot) / norm;
                        }
                    } else {
                        for k in 0..d {
                            out[k] = gr[k] / eps;
                        }
                    }
                }
                vec![(*x, Tensor::new(y.shape(), gx)?)]
            }
            Op::Reduce { x, kind, axes } => {
                let shape = self.shape(*x);
                let map = ReduceMap::new(shape, axes);
                let reduced: usize = axes.iter().map(|&a| shape[a]).product();
                let factor = match kind {
                    Reduction::Sum => 1.0,
                    Reduction::Mean => 1.0 / reduced.max(1) as f64,
                };
                let len: usize = shape.iter().product();
                let gx: Vec<f64> = (0..len).map(|i| gy.data()[map.target(i)] * factor).collect();
                vec![(*x, Tensor::new(shape, gx)?)]
            }
            Op::Add(a, b) => vec![(*a, gy.clone()), (*b, gy.clone())],
            Op::Sub(a, b) => vec![(*a, gy.clone()), (*b, gy.map(|g| -g))],
            Op::Mul(a, b) => {
                let ga = gy.zip_map(self.value(*b), |g, v| g * v);
                let gb = gy.zip_map(self.value(*a), |g, v| g * v);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, f) => vec![(*a, gy.map(|g| g * f))],
            Op::Offset(a) => vec![(*a, gy.clone())],
            Op::Reshape(x) => vec![(*x, gy.clone().reshape(self.shape(*x))?)],
            Op::SliceRows { x, start } => {
                let shape = self.shape(*x);
                let stride: usize = shape[1..].iter().product();
                let mut gx = vec![0.0; shape.iter().product()];
                gx[start * stride..start * stride + gy.len()].copy_from_slice(gy.data());
                vec![(*x, Tensor::new(shape, gx)?)]
            }
            Op::Pairwise { a, b } => {
                let (ga, gb) = pairwise_distance_grad(self.value(*a), self.value(*b), &node.value, gy);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Gather { x, indices } => {
                let shape = self.shape(*x);
                let mut gx = vec![0.0; shape.iter().product()];
                for (&i, g) in indices.iter().zip(gy.data()) {
                    gx[i] += g;
                }
                vec![(*x, Tensor::new(shape, gx)?)]
            }
        };
        Ok(out)
    }
}

/// Maps a flat input index to the flat output index of a reduction.
struct ReduceMap {
    in_strides: Vec<usize>,
    dims: Vec<usize>,
    out_strides: Vec<Option<usize>>,
}

impl ReduceMap {
    fn new(shape: &[usize], axes: &[usize]) -> Self {
        let rank = shape.len();
        let mut in_strides = vec![1; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let mut out_strides = vec![None; rank];
        let mut acc = 1;
        for i in (0..rank).rev() {
            if !axes.contains(&i) {
                out_strides[i] = Some(acc);
                acc *= shape[i];
            }
        }
        Self {
            in_strides,
            dims: shape.to_vec(),
            out_strides,
        }
    }

    fn target(&self, flat: usize) -> usize {
        let mut t = 0;
        for i in 0..self.dims.len() {
            if let Some(s) = self.out_strides[i] {
                t += (flat / self.in_strides[i]) % self.dims[i] * s;
            }
        }
        t
    }
}

/// Distance matrix between the rows of `a` and `b` (no tape).
pub fn pairwise_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::dim(
            "pairwise_distance",
            format!("{:?} vs {:?} (descriptor axis 1 must agree)", a.shape(), b.shape()),
        ));
    }
    let (n, m, d) = (a.shape()[0], b.shape()[0], a.shape()[1]);
    let mut dots = vec![0.0; n * m];
    kernels::gemm(n, d, m, a.data(), false, b.data(), true, 0.0, &mut dots);
    let na: Vec<f64> = (0..n).map(|i| a.row(i).iter().map(|v| v * v).sum()).collect();
    let nb: Vec<f64> = (0..m).map(|j| b.row(j).iter().map(|v| v * v).sum()).collect();
    for i in 0..n {
        for j in 0..m {
            let s = na[i] + nb[j] - 2.0 * dots[i * m + j];
            dots[i * m + j] = s.max(0.0).sqrt();
        }
    }
    Tensor::new(&[n, m], dots)
}

fn pairwise_distance_grad(a: &Tensor, b: &Tensor, dist: &Tensor, gy: &Tensor) -> (Tensor, Tensor) {
    let (n, m, d) = (a.shape()[0], b.shape()[0], a.shape()[1]);
    // coef_ij = g_ij / d_ij; zero distance takes the zero subgradient.
    let coef: Vec<f64> = dist
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&dv, &g)| if dv > 0.0 { g / dv } else { 0.0 })
        .collect();
    let mut ga = vec![0.0; n * d];
    kernels::gemm(n, m, d, &coef, false, b.data(), false, 0.0, &mut ga);
    for i in 0..n {
        let rs: f64 = coef[i * m..(i + 1) * m].iter().sum();
        for k in 0..d {
            ga[i * d + k] = a.data()[i * d + k] * rs - ga[i * d + k];
        }
    }
    let mut gb = vec![0.0; m * d];
    kernels::gemm(m, n, d, &coef, true, a.data(), false, 0.0, &mut gb);
    for j in 0..m {
        let cs: f64 = (0..n).map(|i| coef[i * m + j]).sum();
        for k in 0..d {
            gb[j * d + k] = b.data()[j * d + k] * cs - gb[j * d + k];
        }
    }
    (
        Tensor::new(a.shape(), ga).expect("shape preserved"),
        Tensor::new(b.shape(), gb).expect("shape preserved"),
    )
}
