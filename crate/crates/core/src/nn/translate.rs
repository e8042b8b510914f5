//! Translation networks: shared encoder, private mappers, patch
//! discriminator and the domain classifier.

use crate::error::{Error, Result};
use crate::nn::grl::Grl;
use crate::nn::layers::{instance_norm, Conv, Linear};
use crate::rng::LabRng;
use crate::tensor::{Graph, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TranslatorCfg {
    pub image_channels: usize,
    /// Width after the first stride-2 stage.
    pub base: usize,
    /// Width of the encoder output `E(x)`.
    pub feature: usize,
    /// Private residual blocks per mapper.
    pub private_blocks: usize,
}

impl Default for TranslatorCfg {
    fn default() -> Self {
        Self { image_channels: 1, base: 8, feature: 16, private_blocks: 2 }
    }
}

/// Two 3×3 convolutions, each instance-normalised, with a ReLU in between,
/// added back onto the input.
#[derive(Clone, Debug)]
pub struct ResBlock {
    first: Conv,
    second: Conv,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut LabRng) -> Self {
        Self {
            first: Conv::new(store, &format!("{name}.c1"), channels, channels, 3, 1, 1, true, rng),
            second: Conv::new(store, &format!("{name}.c2"), channels, channels, 3, 1, 1, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.first.forward(g, store, x)?;
        let h = instance_norm(g, h)?;
        let h = g.relu(h)?;
        let h = self.second.forward(g, store, h)?;
        let h = instance_norm(g, h)?;
        g.add(x, h)
    }
}

/// Shared encoder: two instance-normalised stride-2 stages and one residual
/// block, `side -> side/4`.
#[derive(Clone, Debug)]
pub struct Mafe {
    down1: Conv,
    down2: Conv,
    trunk: ResBlock,
}

impl Mafe {
    pub fn new(store: &mut ParamStore, cfg: &TranslatorCfg, rng: &mut LabRng) -> Self {
        Self {
            down1: Conv::new(store, "mafe.down1", cfg.image_channels, cfg.base, 3, 2, 1, true, rng),
            down2: Conv::new(store, "mafe.down2", cfg.base, cfg.feature, 3, 2, 1, true, rng),
            trunk: ResBlock::new(store, "mafe.trunk", cfg.feature, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || !s[2].is_multiple_of(4) || !s[3].is_multiple_of(4) {
            return Err(Error::Shape { op: "mafe", detail: format!("image sides must be multiples of 4, got {s:?}") });
        }
        let h = self.down1.forward(g, store, x)?;
        let h = instance_norm(g, h)?;
        let h = g.relu(h)?;
        let h = self.down2.forward(g, store, h)?;
        let h = instance_norm(g, h)?;
        let h = g.relu(h)?;
        self.trunk.forward(g, store, h)
    }
}

/// Private decoder of one translation direction, `side/4 -> side`, output in (0, 1).
#[derive(Clone, Debug)]
pub struct Mapper {
    blocks: Vec<ResBlock>,
    up1: Conv,
    up2: Conv,
}

impl Mapper {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &TranslatorCfg, rng: &mut LabRng) -> Self {
        let blocks = (0..cfg.private_blocks)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), cfg.feature, rng))
            .collect();
        Self {
            blocks,
            up1: Conv::new(store, &format!("{name}.up1"), cfg.feature, cfg.base, 3, 1, 1, true, rng),
            up2: Conv::new(store, &format!("{name}.up2"), cfg.base, cfg.image_channels, 3, 1, 1, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let mut h = features;
        for b in &self.blocks {
            h = b.forward(g, store, h)?;
        }
        let h = g.upsample_nearest(h, 2)?;
        let h = self.up1.forward(g, store, h)?;
        let h = instance_norm(g, h)?;
        let h = g.relu(h)?;
        let h = g.upsample_nearest(h, 2)?;
        let h = self.up2.forward(g, store, h)?;
        g.sigmoid(h)
    }
}

/// Three stride-2 stages with leaky ReLU (the last two instance-normalised), then a 1×1 projection and sigmoid:
/// a `side/8 × side/8` map of realness probabilities.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    stages: [Conv; 3],
    head: Conv,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl PatchDiscriminator {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &TranslatorCfg, rng: &mut LabRng) -> Self {
        let (c, b) = (cfg.image_channels, cfg.base);
        Self {
            stages: [
                Conv::new(store, &format!("{name}.s1"), c, b, 3, 2, 1, true, rng),
                Conv::new(store, &format!("{name}.s2"), b, 2 * b, 3, 2, 1, true, rng),
                Conv::new(store, &format!("{name}.s3"), 2 * b, 4 * b, 3, 2, 1, true, rng),
            ],
            head: Conv::new(store, &format!("{name}.head"), 4 * b, 1, 1, 1, 1, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, s) in self.stages.iter().enumerate() {
            h = s.forward(g, store, h)?;
            if i > 0 {
                h = instance_norm(g, h)?;
            }
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let h = self.head.forward(g, store, h)?;
        g.sigmoid(h)
    }
}

/// `σ(Wᵀ E(x) + z)` behind a gradient reversal layer; returns `[B, 1]`.
#[derive(Clone, Debug)]
pub struct DomainClassifier {
    linear: Linear,
    fan_in: usize,
}

impl DomainClassifier {
    pub fn new(store: &mut ParamStore, fan_in: usize, rng: &mut LabRng) -> Self {
        Self { linear: Linear::new(store, "cls", fan_in, 1, true, rng), fan_in }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: Var, grl: &Grl) -> Result<Var> {
        let batch = g.shape(features)[0];
        let rev = grl.apply(g, features)?;
        let flat = g.reshape(rev, &[batch, self.fan_in])?;
        let logit = self.linear.forward(g, store, flat)?;
        g.sigmoid(logit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::zero_params;
    use crate::tensor::Tensor;

    #[test]
    fn discriminator_shapes_and_zero_weights() {
        let cfg = TranslatorCfg::default();
        let mut store = ParamStore::new();
        let mut rng = LabRng::new(1);
        let d = PatchDiscriminator::new(&mut store, "dy", &cfg, &mut rng);
        let x = Tensor::uniform(&[2, 1, 32, 32], 0.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let xv = g.input(x.clone()).unwrap();
        let out = d.forward(&mut g, &store, xv).unwrap();
        assert_eq!(g.shape(out), &[2, 1, 4, 4]);
        assert!(g.value(out).data().iter().all(|&p| p > 0.0 && p < 1.0));

        zero_params(&mut store, "dy");
        let mut g = Graph::new();
        let xv = g.input(x).unwrap();
        let out = d.forward(&mut g, &store, xv).unwrap();
        assert!(g.value(out).data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn generator_round_trip_shape() {
        let cfg = TranslatorCfg::default();
        let mut store = ParamStore::new();
        let mut rng = LabRng::new(2);
        let e = Mafe::new(&mut store, &cfg, &mut rng);
        let m = Mapper::new(&mut store, "g", &cfg, &mut rng);
        let mut g = Graph::new();
        let x = g.input(Tensor::uniform(&[3, 1, 32, 32], 0.0, 1.0, &mut rng)).unwrap();
        let f = e.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(f), &[3, 16, 8, 8]);
        let y = m.forward(&mut g, &store, f).unwrap();
        assert_eq!(g.shape(y), &[3, 1, 32, 32]);
        let bad = g.input(Tensor::zeros(&[1, 1, 30, 30])).unwrap();
        assert!(e.forward(&mut g, &store, bad).is_err());
    }
}
