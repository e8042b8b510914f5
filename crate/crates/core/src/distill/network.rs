//! Teacher and student screening networks.
//!
//! Both share one layout: a stride-2 convolutional stem, one MobileViT-style
//! block, global average pooling and a linear classifier. The teacher always
//! uses dense attention. The student is narrower and, in the sparse variant,
//! restricts each query to the keys chosen from its own gradient simulator.

use super::simulator::GradSimulator;
use super::sparse::{importance_fusion, select_topk, KRule, TopKSets};
use crate::error::{Error, Result};
use crate::nn::{AttentionVariant, BatchNorm, BlockTrace, Conv, Linear, MobileVitBlock, MobileVitCfg, Mode};
use crate::par::{try_map_range, Execution};
use crate::rng::LabRng;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetCfg {
    pub side: usize,
    pub image_channels: usize,
    pub channels: usize,
    pub hidden: usize,
    pub heads: usize,
    pub patch: usize,
    pub mlp_ratio: usize,
    pub classes: usize,
}

impl NetCfg {
    pub fn teacher(side: usize) -> Self {
        Self { side, image_channels: 1, channels: 16, hidden: 64, heads: 4, patch: 2, mlp_ratio: 2, classes: 2 }
    }

    pub fn student(side: usize) -> Self {
        Self { side, image_channels: 1, channels: 8, hidden: 16, heads: 2, patch: 2, mlp_ratio: 2, classes: 2 }
    }

    /// Side of the feature map entering the block.
    pub fn feature_side(&self) -> usize {
        self.side / 2
    }

    pub fn grid(&self) -> (usize, usize) {
        let g = self.feature_side() / self.patch;
        (g, g)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn block(&self, variant: AttentionVariant) -> MobileVitCfg {
        MobileVitCfg {
            channels: self.channels,
            patch: self.patch,
            hidden: self.hidden,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            variant,
        }
    }

    pub fn validate(&self, variant: AttentionVariant, k: Option<usize>) -> Result<()> {
        if !self.side.is_multiple_of(2) {
            return Err(Error::Config(format!("side must be even, got {}", self.side)));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let f = self.feature_side();
        self.block(variant).validate(f, f, k)
    }
}

#[derive(Clone, Debug)]
pub struct ScreeningNet {
    pub cfg: NetCfg,
    stem: Conv,
    stem_bn: BatchNorm,
    pub block: MobileVitBlock,
    head: Linear,
}

impl ScreeningNet {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: NetCfg, variant: AttentionVariant, rng: &mut LabRng) -> Result<Self> {
        cfg.validate(variant, None)?;
        Ok(Self {
            cfg,
            stem: Conv::new(store, &format!("{prefix}.stem"), cfg.image_channels, cfg.channels, 3, 2, 1, false, rng),
            stem_bn: BatchNorm::new(store, &format!("{prefix}.stem_bn"), cfg.channels, 1),
            block: MobileVitBlock::new(store, &format!("{prefix}.block"), cfg.block(variant), rng),
            head: Linear::new(store, &format!("{prefix}.head"), cfg.channels, cfg.classes, true, rng),
        })
    }

    pub fn stem(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != self.cfg.image_channels || s[2] != self.cfg.side || s[3] != self.cfg.side {
            return Err(Error::Shape {
                op: "screening_net",
                detail: format!("expected [B, {}, {}, {}], got {s:?}", self.cfg.image_channels, self.cfg.side, self.cfg.side),
            });
        }
        let h = self.stem.forward(g, store, x)?;
        let h = self.stem_bn.forward(g, store, h, mode)?;
        g.selu(h)
    }

    pub fn classify(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        let batch = g.shape(features)[0];
        let pooled = g.avg_pool(features, 1, 1)?;
        let flat = g.reshape(pooled, &[batch, self.cfg.channels])?;
        self.head.forward(g, store, flat)
    }
}

/// Dense-attention teacher with its own parameter store.
#[derive(Clone, Debug)]
pub struct Teacher {
    pub store: ParamStore,
    pub net: ScreeningNet,
}

pub struct TeacherTrace {
    pub logits: Var,
    pub block: BlockTrace,
}

impl Teacher {
    pub fn new(cfg: NetCfg, rng: &mut LabRng) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = ScreeningNet::new(&mut store, "teacher", cfg, AttentionVariant::Dense, rng)?;
        Ok(Self { store, net })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mode: Mode) -> Result<TeacherTrace> {
        let h = self.net.stem(g, &self.store, x, mode)?;
        let block = self.net.block.forward(g, &self.store, h, None, mode)?;
        let logits = self.net.classify(g, &self.store, block.out)?;
        Ok(TeacherTrace { logits, block })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsityCfg {
    pub k_rule: KRule,
    pub tau: f64,
    pub alpha_fuse: f64,
}

impl Default for SparsityCfg {
    fn default() -> Self {
        Self { k_rule: KRule::default(), tau: super::sparse::DEFAULT_TAU, alpha_fuse: super::sparse::DEFAULT_FUSION_ALPHA }
    }
}

/// Student network plus its gradient simulator. Parameters live in the
/// caller's store under the `student.` and `sim.` prefixes.
#[derive(Clone, Debug)]
pub struct Student {
    pub net: ScreeningNet,
    pub sim: GradSimulator,
    pub variant: AttentionVariant,
    pub sparsity: SparsityCfg,
}

pub struct StudentTrace {
    pub logits: Var,
    /// Simulated gradient map `[B·P², H, N, N]`, when computed.
    pub sim: Option<Var>,
    pub sets: Option<TopKSets>,
    pub block: BlockTrace,
}

impl Student {
    pub fn new(
        store: &mut ParamStore,
        cfg: NetCfg,
        variant: AttentionVariant,
        sparsity: SparsityCfg,
        rng: &mut LabRng,
    ) -> Result<Self> {
        if !(sparsity.tau > 0.0) || !(0.0..=1.0).contains(&sparsity.alpha_fuse) {
            return Err(Error::Config(format!(
                "need tau > 0 and alpha_fuse in [0, 1], got tau = {}, alpha_fuse = {}",
                sparsity.tau, sparsity.alpha_fuse
            )));
        }
        let net = ScreeningNet::new(store, "student", cfg, variant, rng)?;
        let sim = GradSimulator::new(store, "sim", cfg.hidden, cfg.heads, rng)?;
        Ok(Self { net, sim, variant, sparsity })
    }

    pub fn k(&self) -> usize {
        match self.variant {
            AttentionVariant::Dense => self.net.cfg.tokens(),
            AttentionVariant::Sparse => self.sparsity.k_rule.resolve(self.net.cfg.tokens()),
        }
    }

    /// `with_sim` forces the simulator to run for the dense variant too (its
    /// output is needed for the simulation loss during training).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode, with_sim: bool) -> Result<StudentTrace> {
        let h = self.net.stem(g, store, x, mode)?;
        let (tokens, layout) = self.net.block.local_tokens(g, store, h, mode)?;
        let sparse = self.variant == AttentionVariant::Sparse;
        let sim = if sparse || with_sim {
            Some(self.sim.forward(g, store, tokens, self.net.cfg.grid(), mode)?)
        } else {
            None
        };
        let sets = match (sparse, sim) {
            (true, Some(s)) => {
                let n = self.net.cfg.tokens();
                let flat = g.value(s).clone().reshape(&[g.value(s).numel() / n, n])?;
                let fused = importance_fusion(&flat, self.sparsity.tau, self.sparsity.alpha_fuse)?;
                Some(select_topk(&fused, self.k())?)
            }
            _ => None,
        };
        let block = self.net.block.global_and_fuse(g, store, h, tokens, layout, sets.as_ref(), mode)?;
        let logits = self.net.classify(g, store, block.out)?;
        Ok(StudentTrace { logits, sim, sets, block })
    }

    /// Positive-class probabilities in inference mode. Touches only the
    /// student's own parameters; batches of `chunk` images run in parallel.
    pub fn predict(&self, store: &ParamStore, images: &Tensor, chunk: usize, exec: Execution) -> Result<Vec<f64>> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::Shape { op: "predict", detail: format!("expected [B, C, H, W], got {s:?}") });
        }
        let n = s[0];
        let chunk = chunk.max(1);
        let per = images.numel() / n.max(1);
        let parts = try_map_range(exec, n.div_ceil(chunk), |c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(n);
            let mut shape = s.to_vec();
            shape[0] = hi - lo;
            let x = Tensor::new(&shape, images.data()[lo * per..hi * per].to_vec())?;
            let mut g = Graph::new();
            let xv = g.input(x)?;
            let trace = self.forward(&mut g, store, xv, Mode::Eval, false)?;
            Ok(positive_probability(g.value(trace.logits)))
        })?;
        Ok(parts.into_iter().flatten().collect())
    }
}

/// Softmax probability of class 1 per row of `[B, C]` logits.
pub fn positive_probability(logits: &Tensor) -> Vec<f64> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            (row[1] - max).exp() / z
        })
        .collect()
}
