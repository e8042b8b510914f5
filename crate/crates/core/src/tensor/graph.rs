//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] owns every intermediate value of one forward evaluation. Nodes
//! are appended in execution order, so the node list is already a
//! topological order and [`Graph::backward`] walks it in reverse.
//!
//! Parameters live outside the graph in a [`ParamStore`]; [`Graph::param`]
//! copies a parameter in once per graph and remembers the node, so a
//! parameter used by several sub-networks accumulates a single gradient.

use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, ConvGeometry, Mat};
use super::params::{ParamId, ParamStore};
use super::value::Tensor;
use crate::error::{shape_err, Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Selu,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Ln,
    Abs,
    Exp,
}

/// Every differentiable operation kind the engine records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Neg,
    Scale,
    AddScalar,
    BiasAdd,
    Linear,
    BatchMatMul,
    Conv2d,
    DepthwiseConv2d,
    PointwiseConv2d,
    BatchNorm,
    LayerNorm,
    Selu,
    Sigmoid,
    Relu,
    LeakyRelu,
    Tanh,
    Ln,
    Abs,
    Exp,
    Clamp,
    Softmax,
    MaskedSoftmax,
    LogSoftmax,
    Sum,
    Mean,
    Gather,
    Reshape,
    AvgPool,
    Grl,
}

impl OpKind {
    pub const ALL: [OpKind; 32] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Neg,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::BiasAdd,
        OpKind::Linear,
        OpKind::BatchMatMul,
        OpKind::Conv2d,
        OpKind::DepthwiseConv2d,
        OpKind::PointwiseConv2d,
        OpKind::BatchNorm,
        OpKind::LayerNorm,
        OpKind::Selu,
        OpKind::Sigmoid,
        OpKind::Relu,
        OpKind::LeakyRelu,
        OpKind::Tanh,
        OpKind::Ln,
        OpKind::Abs,
        OpKind::Exp,
        OpKind::Clamp,
        OpKind::Softmax,
        OpKind::MaskedSoftmax,
        OpKind::LogSoftmax,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Gather,
        OpKind::Reshape,
        OpKind::AvgPool,
        OpKind::Grl,
    ];
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Variable,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    BiasAdd { x: Var, bias: Var, channels: usize, inner: usize },
    Linear { x: Var, w: Var, rows: usize, fan_in: usize, fan_out: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Conv2d { x: Var, w: Var, bias: Option<Var>, geo: ConvGeometry },
    Norm(Box<NormRecord>),
    Unary(Var, Unary),
    Clamp(Var, f64, f64),
    Softmax { x: Var, inv_temp: f64, width: usize },
    MaskedSoftmax { x: Var, width: usize },
    LogSoftmax { x: Var, width: usize },
    Sum(Var),
    Mean(Var),
    Gather { x: Var, index: Rc<Vec<usize>> },
    Reshape(Var),
    AvgPool { x: Var, channels_total: usize, h: usize, w: usize, oh: usize, ow: usize },
    Grl(Var, f64),
}

#[derive(Clone, Debug)]
struct NormRecord {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    channels: usize,
    inner: usize,
    /// Batch statistics participate in the gradient (BN training mode, LN always).
    batch_stats: bool,
    layer_norm: bool,
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var_unbiased: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    bn_updates: Vec<BnUpdate>,
}

fn unary_forward(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Selu => {
            if x > 0.0 {
                SELU_LAMBDA * x
            } else {
                SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
            }
        }
        Unary::Sigmoid => {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        }
        Unary::Relu => x.max(0.0),
        Unary::LeakyRelu(s) => {
            if x > 0.0 {
                x
            } else {
                s * x
            }
        }
        Unary::Tanh => x.tanh(),
        Unary::Ln => x.ln(),
        Unary::Abs => x.abs(),
        Unary::Exp => x.exp(),
    }
}

fn unary_derivative(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Selu => {
            if x > 0.0 {
                SELU_LAMBDA
            } else {
                SELU_LAMBDA * SELU_ALPHA * x.exp()
            }
        }
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::LeakyRelu(s) => {
            if x > 0.0 {
                1.0
            } else {
                s
            }
        }
        Unary::Tanh => 1.0 - y * y,
        Unary::Ln => 1.0 / x,
        // Subgradient at 0 is 0.
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Exp => y,
    }
}

/// Scalar SELU with the standard self-normalising constants.
pub fn selu(x: f64) -> f64 {
    unary_forward(Unary::Selu, x)
}

pub fn sigmoid(x: f64) -> f64 {
    unary_forward(Unary::Sigmoid, x)
}

fn softmax_row(src: &[f64], scale: f64, dst: &mut [f64]) {
    let max = src.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s * scale - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Kind of the operation that produced `v`; `None` for leaves.
    pub fn kind_of(&self, v: Var) -> Option<OpKind> {
        Some(match &self.nodes[v.0].op {
            Op::Input | Op::Variable | Op::Param => return None,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Neg(_) => OpKind::Neg,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::BiasAdd { .. } => OpKind::BiasAdd,
            Op::Linear { .. } => OpKind::Linear,
            Op::BatchMatMul { .. } => OpKind::BatchMatMul,
            Op::Conv2d { geo, .. } => {
                if geo.groups > 1 && geo.groups == geo.in_channels {
                    OpKind::DepthwiseConv2d
                } else if geo.kernel == 1 {
                    OpKind::PointwiseConv2d
                } else {
                    OpKind::Conv2d
                }
            }
            Op::Norm(rec) => {
                if rec.layer_norm {
                    OpKind::LayerNorm
                } else {
                    OpKind::BatchNorm
                }
            }
            Op::Unary(_, u) => match u {
                Unary::Selu => OpKind::Selu,
                Unary::Sigmoid => OpKind::Sigmoid,
                Unary::Relu => OpKind::Relu,
                Unary::LeakyRelu(_) => OpKind::LeakyRelu,
                Unary::Tanh => OpKind::Tanh,
                Unary::Ln => OpKind::Ln,
                Unary::Abs => OpKind::Abs,
                Unary::Exp => OpKind::Exp,
            },
            Op::Clamp(..) => OpKind::Clamp,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::MaskedSoftmax { .. } => OpKind::MaskedSoftmax,
            Op::LogSoftmax { .. } => OpKind::LogSoftmax,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Gather { .. } => OpKind::Gather,
            Op::Reshape(_) => OpKind::Reshape,
            Op::AvgPool { .. } => OpKind::AvgPool,
            Op::Grl(..) => OpKind::Grl,
        })
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, what: &str) -> Result<Var> {
        value.ensure_finite(what)?;
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Input, false, "input")
    }

    /// Leaf that records its gradient.
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Variable, true, "variable")
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_nodes.get(&id) {
            return Ok(v);
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable, &p.name)?;
        self.param_nodes.insert(id, v);
        Ok(v)
    }

    /// Node bound to parameter `id`, if this graph has read it.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.param_nodes.get(&id).copied()
    }

    /// Copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.nodes[v.0].value.clone();
        self.input(t)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Add(a, b), ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Sub(a, b), ng, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Mul(a, b), ng, "mul")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|v| -v);
        let ng = self.ng(a);
        self.push(t, Op::Neg(a), ng, "neg")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a).map(|v| v * factor);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, factor), ng, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a).map(|v| v + c);
        let ng = self.ng(a);
        self.push(t, Op::AddScalar(a), ng, "add_scalar")
    }

    /// Adds `bias[c]` along `axis` (channel axis 1 for maps, last axis for rows).
    pub fn bias_add(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.value(bias).numel() != shape[axis] {
            return shape_err("bias_add", format!("x {shape:?} axis {axis} bias {:?}", self.shape(bias)));
        }
        let channels = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b[(i / inner) % channels];
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(out, Op::BiasAdd { x, bias, channels, inner }, ng, "bias_add")
    }

    /// `x[.., in] · w[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return shape_err("linear", format!("x {xs:?} w {ws:?}"));
        }
        let (fan_in, fan_out) = (ws[0], ws[1]);
        let rows = self.value(x).numel() / fan_in;
        let mut out = vec![0.0; rows * fan_out];
        kernels::gemm(
            rows,
            fan_in,
            fan_out,
            1.0,
            Mat::row_major(self.value(x).data(), fan_in),
            Mat::row_major(self.value(w).data(), fan_out),
            0.0,
            &mut out,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = fan_out;
        let ng = self.ng(x) || self.ng(w);
        self.push(Tensor::new(&shape, out)?, Op::Linear { x, w, rows, fan_in, fan_out }, ng, "linear")
    }

    /// Batched matrix product over all leading axes: `a[.., m, k] · b[.., k, n]`,
    /// or `a · bᵀ` with `b[.., n, k]` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() < 2 || bs.len() != as_.len() || as_[..as_.len() - 2] != bs[..bs.len() - 2] {
            return shape_err("batch_matmul", format!("{as_:?} vs {bs:?}"));
        }
        let r = as_.len();
        let (m, k) = (as_[r - 2], as_[r - 1]);
        let (kb, n) = if trans_b { (bs[r - 1], bs[r - 2]) } else { (bs[r - 2], bs[r - 1]) };
        if k != kb {
            return shape_err("batch_matmul", format!("inner dims {as_:?} vs {bs:?} (trans_b={trans_b})"));
        }
        let batch: usize = as_[..r - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        for i in 0..batch {
            let bm = &bd[i * k * n..(i + 1) * k * n];
            let bview = if trans_b { Mat::transposed(bm, k) } else { Mat::row_major(bm, n) };
            kernels::gemm(
                m,
                k,
                n,
                1.0,
                Mat::row_major(&ad[i * m * k..(i + 1) * m * k], k),
                bview,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let mut shape = as_;
        shape[r - 1] = n;
        let ng = self.ng(a) || self.ng(b);
        self.push(
            Tensor::new(&shape, out)?,
            Op::BatchMatMul { a, b, batch, m, k, n, trans_b },
            ng,
            "batch_matmul",
        )
    }

    /// 2-D convolution of `x[B, Cin, H, W]` with `w[Cout, Cin/groups, K, K]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] || groups == 0 || stride == 0 {
            return shape_err("conv2d", format!("x {xs:?} w {ws:?}"));
        }
        if !xs[1].is_multiple_of(groups) || !ws[0].is_multiple_of(groups) || ws[1] != xs[1] / groups {
            return shape_err("conv2d", format!("channels x {xs:?} w {ws:?} groups {groups}"));
        }
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return shape_err("conv2d", format!("kernel {} larger than padded input {xs:?}", ws[2]));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != ws[0] {
                return shape_err("conv2d", format!("bias {:?} for {} outputs", self.shape(b), ws[0]));
            }
        }
        let geo = ConvGeometry {
            batch: xs[0],
            in_channels: xs[1],
            out_channels: ws[0],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
            pad,
            groups,
        };
        let out = kernels::conv2d_forward(
            &geo,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let shape = [geo.batch, geo.out_channels, geo.out_height(), geo.out_width()];
        let ng = self.ng(x) || self.ng(w) || bias.is_some_and(|b| self.ng(b));
        self.push(Tensor::new(&shape, out)?, Op::Conv2d { x, w, bias, geo }, ng, "conv2d")
    }

    /// Batch normalisation over every axis except `axis`.
    ///
    /// With `running = None` the batch statistics are used and the node
    /// differentiates through them; the running-average update is queued in
    /// [`Graph::bn_updates`]. With `running = Some((mean, var))` the stored
    /// statistics are constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        running: Option<(&[f64], &[f64])>,
        update_ids: Option<(ParamId, ParamId)>,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err("batch_norm", format!("axis {axis} for {shape:?}"));
        }
        let channels = shape[axis];
        if self.value(gamma).numel() != channels || self.value(beta).numel() != channels {
            return shape_err("batch_norm", format!("affine params for {channels} channels"));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = self.value(x).data();
        let count = xd.len() / channels;
        let (mean, var) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for (i, &v) in xd.iter().enumerate() {
                    mean[(i / inner) % channels] += v;
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for (i, &v) in xd.iter().enumerate() {
                    let c = (i / inner) % channels;
                    var[c] += (v - mean[c]) * (v - mean[c]);
                }
                var.iter_mut().for_each(|s| *s /= count as f64);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (i, &v) in xd.iter().enumerate() {
            let c = (i / inner) % channels;
            xhat[i] = (v - mean[c]) * inv_std[c];
            out[i] = g[c] * xhat[i] + b[c];
        }
        let batch_stats = running.is_none();
        if batch_stats {
            if let Some((rm, rv)) = update_ids {
                let unbiased = if count > 1 { count as f64 / (count as f64 - 1.0) } else { 1.0 };
                self.bn_updates.push(BnUpdate {
                    running_mean: rm,
                    running_var: rv,
                    batch_mean: mean,
                    batch_var_unbiased: var.iter().map(|v| v * unbiased).collect(),
                });
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let rec = NormRecord { x, gamma, beta, xhat, inv_std, channels, inner, batch_stats, layer_norm: false };
        self.push(Tensor::new(&shape, out)?, Op::Norm(Box::new(rec)), ng, "batch_norm")
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap_or(&0);
        if self.value(gamma).numel() != width || self.value(beta).numel() != width {
            return shape_err("layer_norm", format!("affine params for width {width}"));
        }
        let xd = self.value(x).data();
        let rows = xd.len() / width;
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            inv_std[r] = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..width {
                let i = r * width + j;
                xhat[i] = (row[j] - mean) * inv_std[r];
                out[i] = g[j] * xhat[i] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let rec = NormRecord { x, gamma, beta, xhat, inv_std, channels: width, inner: 1, batch_stats: true, layer_norm: true };
        self.push(Tensor::new(&shape, out)?, Op::Norm(Box::new(rec)), ng, "layer_norm")
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Result<Var> {
        let t = self.value(x).map(|v| unary_forward(kind, v));
        let ng = self.ng(x);
        self.push(t, Op::Unary(x, kind), ng, "unary")
    }

    pub fn selu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Selu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Ln)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v.clamp(lo, hi));
        let ng = self.ng(x);
        self.push(t, Op::Clamp(x, lo, hi), ng, "clamp")
    }

    /// Row-wise `softmax(x / temperature)` over the last axis.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Config(format!("softmax temperature must be > 0, got {temperature}")));
        }
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap();
        let inv_temp = 1.0 / temperature;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for (s, d) in src.chunks(width).zip(out.chunks_mut(width)) {
            softmax_row(s, inv_temp, d);
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&shape, out)?, Op::Softmax { x, inv_temp, width }, ng, "softmax")
    }

    /// Row-wise softmax restricted to `mask`; masked-out entries are exactly 0.
    /// Every row must keep at least one entry.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<Vec<bool>>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap();
        let src = self.value(x).data();
        if mask.len() != src.len() {
            return shape_err("masked_softmax", format!("mask of {} for {shape:?}", mask.len()));
        }
        let mut out = vec![0.0; src.len()];
        for (r, (s, d)) in src.chunks(width).zip(out.chunks_mut(width)).enumerate() {
            let m = &mask[r * width..(r + 1) * width];
            let max = s
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .fold(f64::NEG_INFINITY, |acc, (&v, _)| acc.max(v));
            if max == f64::NEG_INFINITY {
                return shape_err("masked_softmax", format!("row {r} has no selected entries"));
            }
            let mut total = 0.0;
            for j in 0..width {
                if m[j] {
                    d[j] = (s[j] - max).exp();
                    total += d[j];
                }
            }
            for j in 0..width {
                if m[j] {
                    d[j] /= total;
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&shape, out)?, Op::MaskedSoftmax { x, width }, ng, "masked_softmax")
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for (s, d) in src.chunks(width).zip(out.chunks_mut(width)) {
            let max = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, &v) in d.iter_mut().zip(s) {
                *o = v - lse;
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(&shape, out)?, Op::LogSoftmax { x, width }, ng, "log_softmax")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(t, Op::Sum(x), ng, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).mean());
        let ng = self.ng(x);
        self.push(t, Op::Mean(x), ng, "mean")
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`. Covers transposes,
    /// permutations, patch unfold/fold and nearest upsampling.
    pub fn gather(&mut self, x: Var, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return shape_err("gather", format!("index {bad} out of {}", src.len()));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let t = Tensor::new(shape, data)?;
        let ng = self.ng(x);
        self.push(t, Op::Gather { x, index }, ng, "gather")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        self.push(t, Op::Reshape(x), ng, "reshape")
    }

    /// Adaptive average pooling of `x[B, C, H, W]` to `[B, C, oh, ow]`.
    pub fn avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || oh == 0 || ow == 0 || oh > s[2] || ow > s[3] {
            return shape_err("avg_pool", format!("{s:?} -> {oh}x{ow}"));
        }
        let (h, w) = (s[2], s[3]);
        let channels_total = s[0] * s[1];
        let src = self.value(x).data();
        let mut out = vec![0.0; channels_total * oh * ow];
        for c in 0..channels_total {
            let plane = &src[c * h * w..(c + 1) * h * w];
            for by in 0..oh {
                let (y0, y1) = pool_bounds(by, h, oh);
                for bx in 0..ow {
                    let (x0, x1) = pool_bounds(bx, w, ow);
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        acc += plane[yy * w + x0..yy * w + x1].iter().sum::<f64>();
                    }
                    out[(c * oh + by) * ow + bx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            Tensor::new(&[s[0], s[1], oh, ow], out)?,
            Op::AvgPool { x, channels_total, h, w, oh, ow },
            ng,
            "avg_pool",
        )
    }

    /// Gradient reversal: identity forward, `-weight · g` backward.
    pub fn grl(&mut self, x: Var, weight: f64) -> Result<Var> {
        let t = self.value(x).clone();
        let ng = self.ng(x);
        self.push(t, Op::Grl(x, weight), ng, "grl")
    }

    /// Gradients of the single-element `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn acc_vec(&self, grads: &mut [Option<Tensor>], v: Var, data: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let t = Tensor::new(self.shape(v), data).expect("gradient shape");
        self.acc(grads, v, t);
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Variable | Op::Param => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    self.acc_vec(grads, *a, gd.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.ng(*b) {
                    self.acc_vec(grads, *b, gd.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::Neg(a) => self.acc(grads, *a, g.map(|v| -v)),
            Op::Scale(a, f) => self.acc(grads, *a, g.map(|v| v * f)),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::BiasAdd { x, bias, channels, inner } => {
                self.acc(grads, *x, g.clone());
                if self.ng(*bias) {
                    let mut db = vec![0.0; *channels];
                    for (k, v) in gd.iter().enumerate() {
                        db[(k / inner) % channels] += v;
                    }
                    self.acc_vec(grads, *bias, db);
                }
            }
            Op::Linear { x, w, rows, fan_in, fan_out } => {
                let (rows, fan_in, fan_out) = (*rows, *fan_in, *fan_out);
                if self.ng(*x) {
                    let mut dx = vec![0.0; rows * fan_in];
                    kernels::gemm(
                        rows,
                        fan_out,
                        fan_in,
                        1.0,
                        Mat::row_major(gd, fan_out),
                        Mat::transposed(self.value(*w).data(), fan_out),
                        0.0,
                        &mut dx,
                    );
                    self.acc_vec(grads, *x, dx);
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0; fan_in * fan_out];
                    kernels::gemm(
                        fan_in,
                        rows,
                        fan_out,
                        1.0,
                        Mat::transposed(self.value(*x).data(), fan_in),
                        Mat::row_major(gd, fan_out),
                        0.0,
                        &mut dw,
                    );
                    self.acc_vec(grads, *w, dw);
                }
            }
            Op::BatchMatMul { a, b, batch, m, k, n, trans_b } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if self.ng(*a) {
                    let mut da = vec![0.0; batch * m * k];
                    for t in 0..batch {
                        let bm = &bd[t * k * n..(t + 1) * k * n];
                        // dA = dC · Bᵀ  (B is k×n), or dC · B when B is stored n×k.
                        let bview = if *trans_b { Mat::row_major(bm, k) } else { Mat::transposed(bm, n) };
                        kernels::gemm(
                            m,
                            n,
                            k,
                            1.0,
                            Mat::row_major(&gd[t * m * n..(t + 1) * m * n], n),
                            bview,
                            0.0,
                            &mut da[t * m * k..(t + 1) * m * k],
                        );
                    }
                    self.acc_vec(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; batch * k * n];
                    for t in 0..batch {
                        let am = &ad[t * m * k..(t + 1) * m * k];
                        let gm = &gd[t * m * n..(t + 1) * m * n];
                        let dst = &mut db[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            // dB (n×k) = dCᵀ · A
                            kernels::gemm(n, m, k, 1.0, Mat::transposed(gm, n), Mat::row_major(am, k), 0.0, dst);
                        } else {
                            // dB (k×n) = Aᵀ · dC
                            kernels::gemm(k, m, n, 1.0, Mat::transposed(am, k), Mat::row_major(gm, n), 0.0, dst);
                        }
                    }
                    self.acc_vec(grads, *b, db);
                }
            }
            Op::Conv2d { x, w, bias, geo } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    geo,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    self.ng(*x),
                );
                if self.ng(*x) {
                    self.acc_vec(grads, *x, dx);
                }
                self.acc_vec(grads, *w, dw);
                if let Some(b) = bias {
                    self.acc_vec(grads, *b, db);
                }
            }
            Op::Norm(rec) => self.norm_backward(rec, gd, grads),
            Op::Unary(x, kind) => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let dx = gd
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(g, (&xx, &yy))| g * unary_derivative(*kind, xx, yy))
                    .collect();
                self.acc_vec(grads, *x, dx);
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| if v >= *lo && v <= *hi { *g } else { 0.0 })
                    .collect();
                self.acc_vec(grads, *x, dx);
            }
            Op::Softmax { x, inv_temp, width } => {
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(*width).zip(gd.chunks(*width)).zip(dx.chunks_mut(*width)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..*width {
                        dr[j] = yr[j] * (gr[j] - dot) * inv_temp;
                    }
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::MaskedSoftmax { x, width, .. } => {
                // Masked entries have y = 0, so the softmax Jacobian already zeroes them.
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(*width).zip(gd.chunks(*width)).zip(dx.chunks_mut(*width)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..*width {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::LogSoftmax { x, width } => {
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(*width).zip(gd.chunks(*width)).zip(dx.chunks_mut(*width)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..*width {
                        dr[j] = gr[j] - yr[j].exp() * total;
                    }
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.acc_vec(grads, *x, vec![gd[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.acc_vec(grads, *x, vec![gd[0] / n as f64; n]);
            }
            Op::Gather { x, index } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (g, &src) in gd.iter().zip(index.iter()) {
                    dx[src] += g;
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::Reshape(x) => self.acc_vec(grads, *x, gd.to_vec()),
            Op::AvgPool { x, channels_total, h, w, oh, ow } => {
                let (h, w, oh, ow) = (*h, *w, *oh, *ow);
                let mut dx = vec![0.0; channels_total * h * w];
                for c in 0..*channels_total {
                    for by in 0..oh {
                        let (y0, y1) = pool_bounds(by, h, oh);
                        for bx in 0..ow {
                            let (x0, x1) = pool_bounds(bx, w, ow);
                            let share = gd[(c * oh + by) * ow + bx] / ((y1 - y0) * (x1 - x0)) as f64;
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    dx[c * h * w + yy * w + xx] += share;
                                }
                            }
                        }
                    }
                }
                self.acc_vec(grads, *x, dx);
            }
            Op::Grl(x, weight) => self.acc(grads, *x, g.map(|v| -weight * v)),
        }
    }

    fn norm_backward(&self, rec: &NormRecord, gd: &[f64], grads: &mut [Option<Tensor>]) {
        let gamma = self.value(rec.gamma).data();
        let (channels, inner) = (rec.channels, rec.inner);
        // Group index: channel for BN, row for LN. Affine index: always channel.
        let group_of = |i: usize| -> usize {
            if rec.layer_norm {
                i / channels
            } else {
                (i / inner) % channels
            }
        };
        let affine_of = |i: usize| -> usize { (i / inner) % channels };
        let groups = rec.inv_std.len();
        let count = (gd.len() / groups) as f64;

        if self.ng(rec.gamma) || self.ng(rec.beta) {
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            for (i, &g) in gd.iter().enumerate() {
                let c = affine_of(i);
                dgamma[c] += g * rec.xhat[i];
                dbeta[c] += g;
            }
            self.acc_vec(grads, rec.gamma, dgamma);
            self.acc_vec(grads, rec.beta, dbeta);
        }
        if !self.ng(rec.x) {
            return;
        }
        let mut dx = vec![0.0; gd.len()];
        if rec.batch_stats {
            let mut sum_dxhat = vec![0.0; groups];
            let mut sum_dxhat_xhat = vec![0.0; groups];
            for (i, &g) in gd.iter().enumerate() {
                let grp = group_of(i);
                let dxh = g * gamma[affine_of(i)];
                sum_dxhat[grp] += dxh;
                sum_dxhat_xhat[grp] += dxh * rec.xhat[i];
            }
            for (i, &g) in gd.iter().enumerate() {
                let grp = group_of(i);
                let dxh = g * gamma[affine_of(i)];
                dx[i] = rec.inv_std[grp] / count
                    * (count * dxh - sum_dxhat[grp] - rec.xhat[i] * sum_dxhat_xhat[grp]);
            }
        } else {
            for (i, &g) in gd.iter().enumerate() {
                let c = affine_of(i);
                dx[i] = g * gamma[c] * rec.inv_std[c];
            }
        }
        self.acc_vec(grads, rec.x, dx);
    }
}

fn pool_bounds(bin: usize, size: usize, bins: usize) -> (usize, usize) {
    let start = bin * size / bins;
    let end = ((bin + 1) * size).div_ceil(bins);
    (start, end)
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `v` when it is not reachable.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, graph: &Graph, store: &mut ParamStore) {
        for (&id, &v) in &graph.param_nodes {
            if let Some(g) = self.get(v) {
                store.accumulate_grad(id, g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selu_fixed_point_and_constants() {
        assert_eq!(selu(0.0), 0.0);
        assert!((selu(1.0) - 1.0507).abs() < 1e-4);
        assert!((selu(-1e3) + SELU_LAMBDA * SELU_ALPHA).abs() < 1e-12);
    }

    #[test]
    fn softmax_uniform_and_temperature() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 3])).unwrap();
        let y = g.softmax(x, 0.7).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x2 = g.input(Tensor::from_slice(&[1, 2], &[1.0, 0.0]).unwrap()).unwrap();
        let y2 = g.softmax(x2, 0.5).unwrap();
        // softmax([2, 0]) = [e²/(e²+1), 1/(e²+1)]
        let e2 = 2f64.exp();
        assert!((g.value(y2).data()[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((g.value(y2).data()[0] - 0.8808).abs() < 1e-4);
        assert!((g.value(y2).data()[1] - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn backward_square_sum() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_slice(&[3], &[1.0, 2.0, 3.0]).unwrap()).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(&g, x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unreachable_input_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap()).unwrap();
        let y = g.variable(Tensor::from_slice(&[2], &[3.0, 4.0]).unwrap()).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.wrt(&g, x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn mean_l1_gradient_is_signed_reciprocal() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_slice(&[4], &[0.5, -1.0, 2.0, 0.1]).unwrap()).unwrap();
        let c = g.input(Tensor::from_slice(&[4], &[0.0, 0.0, 3.0, 0.0]).unwrap()).unwrap();
        let d = g.sub(x, c).unwrap();
        let a = g.abs(d).unwrap();
        let loss = g.mean(a).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(&g, x).data(), &[0.25, -0.25, -0.25, 0.25]);
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 3 * 5 * 4).map(|v| v as f64 * 0.1 - 3.0).collect();
        let x = g.input(Tensor::new(&[2, 3, 5, 4], data.clone()).unwrap()).unwrap();
        // 3 input channels -> 3 outputs, identity on the channel diagonal.
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let wv = g.input(Tensor::new(&[3, 3, 1, 1], w).unwrap()).unwrap();
        let y = g.conv2d(x, wv, None, 1, 0, 1).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut g = Graph::new();
        assert!(matches!(
            g.input(Tensor::from_slice(&[1], &[f64::NAN]).unwrap()),
            Err(Error::NonFinite(_))
        ));
        let x = g.input(Tensor::from_slice(&[1], &[0.0]).unwrap()).unwrap();
        assert!(matches!(g.ln(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn shape_mismatch_is_descriptive() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.input(Tensor::zeros(&[3, 2])).unwrap();
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn grl_forward_is_bit_identical() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_slice(&[3], &[0.1, -2.5, 1e-300]).unwrap()).unwrap();
        let y = g.grl(x, 0.5).unwrap();
        assert_eq!(g.value(x), g.value(y));
    }

    #[test]
    fn param_nodes_are_shared() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_slice(&[1], &[3.0]).unwrap());
        let mut g = Graph::new();
        let a = g.param(&store, id).unwrap();
        let b = g.param(&store, id).unwrap();
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        grads.accumulate_into(&g, &mut store);
        assert_eq!(store.get(id).grad.data(), &[6.0]);
        grads.accumulate_into(&g, &mut store);
        assert_eq!(store.get(id).grad.data(), &[12.0]);
        store.zero_grad();
        assert_eq!(store.get(id).grad.data(), &[0.0]);
    }
}
