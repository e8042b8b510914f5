use crate::error::Result;
use crate::rng::LabRng;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Standard deviation of the truncated-normal weight initialiser.
pub const INIT_STD: f64 = 0.02;

/// Batch-norm behaviour: batch statistics (and queued running-average
/// updates) while training, stored running averages at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv {
    /// Square kernel with "same" zero padding (`kernel / 2`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        bias: bool,
        rng: &mut LabRng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.w"),
            Tensor::trunc_normal(&[out_ch, in_ch / groups, kernel, kernel], INIT_STD, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[out_ch])));
        Self { weight, bias, stride, pad: kernel / 2, groups }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let b = self.bias.map(|b| g.param(store, b)).transpose()?;
        g.conv2d(x, w, b, self.stride, self.pad, self.groups)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Channel axis of the normalised tensor.
    pub axis: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, axis: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], 1.0)),
            axis,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma)?;
        let beta = g.param(store, self.beta)?;
        match mode {
            Mode::Train => g.batch_norm(
                x,
                gamma,
                beta,
                self.axis,
                None,
                Some((self.running_mean, self.running_var)),
            ),
            Mode::Eval => {
                let mean = store.get(self.running_mean).value.data().to_vec();
                let var = store.get(self.running_var).value.data().to_vec();
                g.batch_norm(x, gamma, beta, self.axis, Some((&mean, &var)), None)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut LabRng) -> Self {
        let weight = store.add(format!("{name}.w"), Tensor::trunc_normal(&[fan_in, fan_out], INIT_STD, rng));
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let y = g.linear(x, w)?;
        match self.bias {
            Some(b) => {
                let bv = g.param(store, b)?;
                let axis = g.shape(y).len() - 1;
                g.bias_add(y, bv, axis)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[width], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma)?;
        let beta = g.param(store, self.beta)?;
        g.layer_norm(x, gamma, beta)
    }
}

/// Per-sample, per-channel normalisation of `[B, C, H, W]` without affine
/// parameters; always uses the statistics of the sample itself.
pub fn instance_norm(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let planes = s[0] * s[1];
    let flat = g.reshape(x, &[1, planes, s[2], s[3]])?;
    let ones = g.input(Tensor::full(&[planes], 1.0))?;
    let zeros = g.input(Tensor::zeros(&[planes]))?;
    let y = g.batch_norm(flat, ones, zeros, 1, None, None)?;
    g.reshape(y, &s)
}

/// Sets every trainable entry under `prefix` to zero.
pub fn zero_params(store: &mut ParamStore, prefix: &str) {
    for id in store.trainable_with_prefix(prefix) {
        store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}
