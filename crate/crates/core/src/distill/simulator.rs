//! Gradient simulator, the frozen Φ embedder, the simulation loss, and EMA
//! smoothing of teacher gradients.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, Linear, Mode};
use crate::rng::LabRng;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Predicts an `N × N` attention-gradient map per head from token features:
/// `Z = BN(pointwise(depthwise(X_conv)))`, `∇_sim = SELU(Z Zᵀ)`.
#[derive(Clone, Debug)]
pub struct GradSimulator {
    pub dim: usize,
    pub heads: usize,
    depthwise: Conv,
    pointwise: Conv,
    bn: BatchNorm,
}

impl GradSimulator {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut LabRng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("simulator dim {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            dim,
            heads,
            depthwise: Conv::new(store, &format!("{name}.dw"), dim, dim, 3, 1, dim, false, rng),
            pointwise: Conv::new(store, &format!("{name}.pw"), dim, dim, 1, 1, 1, false, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), dim, 1),
        })
    }

    /// Tokens `[S, N, D]` on a `grid_h × grid_w` patch grid -> `[S, H, N, N]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: Var,
        grid: (usize, usize),
        mode: Mode,
    ) -> Result<Var> {
        let s = g.shape(tokens).to_vec();
        if s.len() != 3 || s[2] != self.dim || s[1] != grid.0 * grid.1 {
            return Err(Error::Shape {
                op: "simulate_gradient",
                detail: format!("tokens {s:?} on a {}x{} grid with dim {}", grid.0, grid.1, self.dim),
            });
        }
        let (seqs, n, d) = (s[0], s[1], s[2]);
        let dh = d / self.heads;
        let x = g.transpose_last(tokens)?;
        let x = g.reshape(x, &[seqs, d, grid.0, grid.1])?;
        let z = self.depthwise.forward(g, store, x)?;
        let z = self.pointwise.forward(g, store, z)?;
        let z = self.bn.forward(g, store, z, mode)?;
        let z = g.reshape(z, &[seqs, d, n])?;
        let z = g.transpose_last(z)?;
        let z = g.reshape(z, &[seqs, n, self.heads, dh])?;
        let z = g.permute(z, &[0, 2, 1, 3])?;
        let corr = g.batch_matmul(z, z, true)?;
        g.selu(corr)
    }
}

/// Output length of [`PhiEmbed`].
pub const EMBED_DIM: usize = 128;
const POOL: usize = 8;
const PHI_CHANNELS: usize = 2;

/// Frozen random map from an `N × N` gradient map to a 128-vector: adaptive
/// average pooling to 8×8, a 3×3 convolution to two channels, SELU, and a
/// linear projection. Its weights are buffers and never trained.
#[derive(Clone, Debug)]
pub struct PhiEmbed {
    conv: Conv,
    proj: Linear,
}

impl PhiEmbed {
    pub fn new(store: &mut ParamStore, name: &str, rng: &mut LabRng) -> Self {
        let conv = Conv::new(store, &format!("{name}.conv"), 1, PHI_CHANNELS, 3, 1, 1, false, rng);
        let fan_in = PHI_CHANNELS * POOL * POOL;
        let proj = Linear::new(store, &format!("{name}.proj"), fan_in, EMBED_DIM, false, rng);
        // Unit-scale weights so embeddings are not vanishingly small.
        for id in [conv.weight, proj.weight] {
            let p = store.get_mut(id);
            let fan = p.value.numel() / p.value.shape()[0];
            let scale = if id == conv.weight { 1.0 / 3.0 } else { 1.0 / (fan as f64).sqrt() } / crate::nn::INIT_STD;
            p.value.data_mut().iter_mut().for_each(|v| *v *= scale);
            p.trainable = false;
        }
        Self { conv, proj }
    }

    /// `[M, N, N]` maps -> `[M, 128]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, maps: Var) -> Result<Var> {
        let s = g.shape(maps).to_vec();
        if s.len() != 3 || s[1] != s[2] {
            return Err(Error::Shape { op: "embed_grad", detail: format!("expected [M, N, N], got {s:?}") });
        }
        let (m, n) = (s[0], s[1]);
        let mut x = g.reshape(maps, &[m, 1, n, n])?;
        if n < POOL {
            x = g.upsample_nearest(x, POOL.div_ceil(n))?;
        }
        let x = g.avg_pool(x, POOL, POOL)?;
        let x = self.conv.forward(g, store, x)?;
        let x = g.selu(x)?;
        let x = g.reshape(x, &[m, PHI_CHANNELS * POOL * POOL])?;
        self.proj.forward(g, store, x)
    }
}

/// Mean over (sequence, head) of `‖Φ(∇_sim[s, h]) − Φ(target[s])‖²`.
/// `sim` is `[S, H, N, N]`; `target` is `[S, N, N]` and carries no gradient.
pub fn grad_sim_loss(g: &mut Graph, store: &ParamStore, phi: &PhiEmbed, sim: Var, target: &Tensor) -> Result<Var> {
    let s = g.shape(sim).to_vec();
    let t = target.shape();
    if s.len() != 4 || t.len() != 3 || t[0] != s[0] || t[1] != s[2] || t[2] != s[3] {
        return Err(Error::Shape { op: "grad_sim_loss", detail: format!("sim {s:?} vs target {t:?}") });
    }
    let (seqs, heads, n) = (s[0], s[1], s[2]);
    let plane = n * n;
    let mut tiled = Vec::with_capacity(seqs * heads * plane);
    for chunk in target.data().chunks(plane) {
        for _ in 0..heads {
            tiled.extend_from_slice(chunk);
        }
    }
    let tv = g.input(Tensor::new(&[seqs * heads, n, n], tiled)?)?;
    let sv = g.reshape(sim, &[seqs * heads, n, n])?;
    let es = phi.forward(g, store, sv)?;
    let et = phi.forward(g, store, tv)?;
    let diff = g.sub(es, et)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq)?;
    g.scale(total, 1.0 / (seqs * heads) as f64)
}

/// `α·prev + (1−α)·new`.
pub fn ema_smooth(prev: &[f64], new: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("EMA factor must lie in [0, 1), got {alpha}")));
    }
    if prev.len() != new.len() {
        return Err(Error::Shape { op: "ema_smooth", detail: format!("{} vs {}", prev.len(), new.len()) });
    }
    Ok(prev.iter().zip(new).map(|(p, n)| alpha * p + (1.0 - alpha) * n).collect())
}

/// Per-sample smoothed teacher gradients, seeded by the first observation.
#[derive(Clone, Debug, Default)]
pub struct EmaBank {
    alpha: f64,
    slots: HashMap<usize, Vec<f64>>,
}

impl EmaBank {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("EMA factor must lie in [0, 1), got {alpha}")));
        }
        Ok(Self { alpha, slots: HashMap::new() })
    }

    /// Folds `grad` into the slot for `sample` and returns the smoothed value.
    pub fn update(&mut self, sample: usize, grad: &[f64]) -> Result<&[f64]> {
        let next = match self.slots.get(&sample) {
            Some(prev) => ema_smooth(prev, grad, self.alpha)?,
            None => grad.to_vec(),
        };
        let slot = self.slots.entry(sample).or_default();
        *slot = next;
        Ok(slot)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SELU_LAMBDA;

    fn sim_setup(dim: usize, heads: usize) -> (ParamStore, GradSimulator) {
        let mut store = ParamStore::new();
        let sim = GradSimulator::new(&mut store, "sim", dim, heads, &mut LabRng::new(4)).unwrap();
        (store, sim)
    }

    #[test]
    fn simulator_shape_and_symmetry() {
        let (store, sim) = sim_setup(8, 2);
        let mut g = Graph::new();
        let x = g.input(Tensor::trunc_normal(&[2, 16, 8], 1.0, &mut LabRng::new(5))).unwrap();
        let out = sim.forward(&mut g, &store, x, (4, 4), Mode::Train).unwrap();
        assert_eq!(g.shape(out), &[2, 2, 16, 16]);
        let v = g.value(out).data();
        for m in 0..4 {
            for i in 0..16 {
                for j in 0..16 {
                    assert!((v[m * 256 + i * 16 + j] - v[m * 256 + j * 16 + i]).abs() < 1e-12);
                }
            }
        }
        assert!(GradSimulator::new(&mut ParamStore::new(), "s", 8, 3, &mut LabRng::new(0)).is_err());
    }

    #[test]
    fn zero_features_give_zero_map() {
        let (mut store, sim) = sim_setup(4, 2);
        crate::nn::zero_params(&mut store, "sim");
        let mut g = Graph::new();
        let x = g.input(Tensor::trunc_normal(&[1, 4, 4], 1.0, &mut LabRng::new(1))).unwrap();
        let out = sim.forward(&mut g, &store, x, (2, 2), Mode::Eval).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthonormal_rows_give_scaled_identity() {
        let mut g = Graph::new();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let z = g.input(Tensor::new(&[1, 3, 3], eye).unwrap()).unwrap();
        let c = g.batch_matmul(z, z, true).unwrap();
        let s = g.selu(c).unwrap();
        for (k, &v) in g.value(s).data().iter().enumerate() {
            let expect = if k % 4 == 0 { SELU_LAMBDA } else { 0.0 };
            assert!((v - expect).abs() < 1e-15);
        }
        assert!((SELU_LAMBDA - 1.0507).abs() < 1e-4);
    }

    #[test]
    fn phi_length_and_zero_weights() {
        let mut store = ParamStore::new();
        let phi = PhiEmbed::new(&mut store, "phi", &mut LabRng::new(2));
        assert_eq!(store.trainable_count(), 0);
        for n in [1, 5, 16, 64] {
            let mut g = Graph::new();
            let m = g.input(Tensor::trunc_normal(&[3, n, n], 1.0, &mut LabRng::new(n as u64))).unwrap();
            let e = phi.forward(&mut g, &store, m).unwrap();
            assert_eq!(g.shape(e), &[3, EMBED_DIM]);
        }
        let mut zeroed = store.clone();
        for id in zeroed.ids().collect::<Vec<_>>() {
            zeroed.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let m = g.input(Tensor::full(&[1, 8, 8], 3.0)).unwrap();
        let e = phi.forward(&mut g, &zeroed, m).unwrap();
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_sim_loss_matches_direct_embedding_distance() {
        let mut store = ParamStore::new();
        let phi = PhiEmbed::new(&mut store, "phi", &mut LabRng::new(3));
        let mut rng = LabRng::new(9);
        let sim = Tensor::trunc_normal(&[2, 2, 8, 8], 1.0, &mut rng);
        let target = Tensor::trunc_normal(&[2, 8, 8], 1.0, &mut rng);
        let mut g = Graph::new();
        let sv = g.input(sim.clone()).unwrap();
        let loss = grad_sim_loss(&mut g, &store, &phi, sv, &target).unwrap();

        let mut direct = 0.0;
        for s in 0..2 {
            for h in 0..2 {
                let mut g2 = Graph::new();
                let a = g2.input(Tensor::new(&[1, 8, 8], sim.data()[(s * 2 + h) * 64..(s * 2 + h + 1) * 64].to_vec()).unwrap()).unwrap();
                let b = g2.input(Tensor::new(&[1, 8, 8], target.data()[s * 64..(s + 1) * 64].to_vec()).unwrap()).unwrap();
                let ea = phi.forward(&mut g2, &store, a).unwrap();
                let eb = phi.forward(&mut g2, &store, b).unwrap();
                direct += g2.value(ea).data().iter().zip(g2.value(eb).data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            }
        }
        assert!((g.value(loss).item() - direct / 4.0).abs() < 1e-10);

        let mut g = Graph::new();
        let same = Tensor::new(&[2, 1, 8, 8], target.data().to_vec()).unwrap();
        let sv = g.input(same).unwrap();
        let zero = grad_sim_loss(&mut g, &store, &phi, sv, &target).unwrap();
        assert_eq!(g.value(zero).item(), 0.0);
    }

    #[test]
    fn ema_examples() {
        assert_eq!(ema_smooth(&[5.0], &[2.0], 0.0).unwrap(), vec![2.0]);
        assert!((ema_smooth(&[0.0], &[1.0], 0.9).unwrap()[0] - 0.1).abs() < 1e-15);
        assert!(ema_smooth(&[0.0], &[1.0], 1.0).is_err());
        let mut bank = EmaBank::new(0.9).unwrap();
        assert_eq!(bank.update(3, &[4.0]).unwrap(), &[4.0]);
        assert!((bank.update(3, &[0.0]).unwrap()[0] - 3.6).abs() < 1e-12);
    }
}
