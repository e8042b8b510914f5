//! MobileViT-style hybrid block: local convolution, patch-wise transformer,
//! fold back, residual fuse.
//!
//! Tokens follow the MobileViT layout: a `[B, d, H, W]` map is unfolded into
//! `B·P²` sequences (one per sample and intra-patch pixel position) of
//! `N = HW/P²` tokens. Attention runs independently on each sequence.

use crate::distill::sparse::{dense_attention, sparse_attention, TopKSets};
use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm, Conv, LayerNorm, Linear, Mode};
use crate::rng::LabRng;
use crate::tensor::{Graph, ParamStore, PatchLayout, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionVariant {
    Dense,
    Sparse,
}

impl AttentionVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionVariant::Dense => "dense",
            AttentionVariant::Sparse => "sparse",
        }
    }
}

impl std::fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(AttentionVariant::Dense),
            "sparse" => Ok(AttentionVariant::Sparse),
            other => Err(Error::Config(format!("attention must be dense or sparse, got {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MobileVitCfg {
    pub channels: usize,
    pub patch: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub variant: AttentionVariant,
}

impl MobileVitCfg {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn tokens(&self, height: usize, width: usize) -> usize {
        (height / self.patch) * (width / self.patch)
    }

    /// Checks the block invariants for an `height × width` input and an
    /// optional sparse key budget `k`.
    pub fn validate(&self, height: usize, width: usize, k: Option<usize>) -> Result<()> {
        if self.patch == 0 || !height.is_multiple_of(self.patch) || !width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "feature map {height}x{width} is not divisible into {p}x{p} patches",
                p = self.patch
            )));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden dim {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.variant == AttentionVariant::Sparse {
            let n = self.tokens(height, width);
            if let Some(k) = k {
                if n < k {
                    return Err(Error::Config(format!("sparse attention needs N >= k, got N = {n}, k = {k}")));
                }
            }
        }
        Ok(())
    }
}

/// Intermediate handles exposed for distillation.
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    pub out: Var,
    /// Unfolded tokens `[B·P², N, d]` before the transformer.
    pub tokens: Var,
    /// Attention weights `[B·P², heads, N, N]` of the first (only) layer.
    pub attention: Var,
    pub layout: PatchLayout,
}

#[derive(Clone, Debug)]
pub struct MobileVitBlock {
    pub cfg: MobileVitCfg,
    local: Conv,
    local_bn: BatchNorm,
    to_hidden: Conv,
    ln_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    proj: Linear,
    ln_mlp: LayerNorm,
    mlp_in: Linear,
    mlp_out: Linear,
    from_hidden: Conv,
    fuse_bn: BatchNorm,
}

impl MobileVitBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: MobileVitCfg, rng: &mut LabRng) -> Self {
        let (c, d) = (cfg.channels, cfg.hidden);
        Self {
            cfg,
            local: Conv::new(store, &format!("{name}.local"), c, c, 3, 1, 1, false, rng),
            local_bn: BatchNorm::new(store, &format!("{name}.local_bn"), c, 1),
            to_hidden: Conv::new(store, &format!("{name}.to_hidden"), c, d, 1, 1, 1, false, rng),
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d),
            query: Linear::new(store, &format!("{name}.q"), d, d, false, rng),
            key: Linear::new(store, &format!("{name}.k"), d, d, false, rng),
            value: Linear::new(store, &format!("{name}.v"), d, d, false, rng),
            proj: Linear::new(store, &format!("{name}.proj"), d, d, true, rng),
            ln_mlp: LayerNorm::new(store, &format!("{name}.ln_mlp"), d),
            mlp_in: Linear::new(store, &format!("{name}.mlp_in"), d, d * cfg.mlp_ratio, true, rng),
            mlp_out: Linear::new(store, &format!("{name}.mlp_out"), d * cfg.mlp_ratio, d, true, rng),
            from_hidden: Conv::new(store, &format!("{name}.from_hidden"), d, c, 1, 1, 1, false, rng),
            fuse_bn: BatchNorm::new(store, &format!("{name}.fuse_bn"), c, 1),
        }
    }

    /// Local convolution and unfold: `[B, C, H, W] -> [B·P², N, d]`.
    pub fn local_tokens(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: Mode) -> Result<(Var, PatchLayout)> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.cfg.channels {
            return Err(Error::Shape {
                op: "mobilevit",
                detail: format!("expected [B, {}, H, W], got {s:?}", self.cfg.channels),
            });
        }
        self.cfg.validate(s[2], s[3], None)?;
        let h = self.local.forward(g, store, x)?;
        let h = self.local_bn.forward(g, store, h, mode)?;
        let h = g.selu(h)?;
        let h = self.to_hidden.forward(g, store, h)?;
        g.unfold_patches(h, self.cfg.patch)
    }

    fn split_heads(&self, g: &mut Graph, t: Var) -> Result<Var> {
        let s = g.shape(t).to_vec();
        let (heads, dh) = (self.cfg.heads, self.cfg.head_dim());
        let r = g.reshape(t, &[s[0], s[1], heads, dh])?;
        g.permute(r, &[0, 2, 1, 3])
    }

    /// Transformer layer over the tokens, fold, and residual fuse with `x`.
    /// `mask` is required for the sparse variant and must hold one key set
    /// per (sequence, head, query).
    #[allow(clippy::too_many_arguments)]
    pub fn global_and_fuse(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        tokens: Var,
        layout: PatchLayout,
        mask: Option<&TopKSets>,
        mode: Mode,
    ) -> Result<BlockTrace> {
        let (seqs, n, d) = (layout.sequences(), layout.tokens(), self.cfg.hidden);
        let normed = self.ln_attn.forward(g, store, tokens)?;
        let q = self.query.forward(g, store, normed)?;
        let q = g.scale(q, 1.0 / (self.cfg.head_dim() as f64).sqrt())?;
        let k = self.key.forward(g, store, normed)?;
        let v = self.value.forward(g, store, normed)?;
        let (q, k, v) = (self.split_heads(g, q)?, self.split_heads(g, k)?, self.split_heads(g, v)?);
        let (mixed, attention) = match self.cfg.variant {
            AttentionVariant::Dense => dense_attention(g, q, k, v)?,
            AttentionVariant::Sparse => {
                let sets = mask.ok_or_else(|| Error::Config("sparse block called without a key mask".into()))?;
                if sets.rows() != seqs * self.cfg.heads * n || sets.width() != n {
                    return Err(Error::Config(format!(
                        "key mask has {} rows of width {}, block needs {} rows of width {n}",
                        sets.rows(),
                        sets.width(),
                        seqs * self.cfg.heads * n
                    )));
                }
                sparse_attention(g, q, k, v, sets)?
            }
        };
        let merged = g.permute(mixed, &[0, 2, 1, 3])?;
        let merged = g.reshape(merged, &[seqs, n, d])?;
        let attn_out = self.proj.forward(g, store, merged)?;
        let t = g.add(tokens, attn_out)?;

        let normed = self.ln_mlp.forward(g, store, t)?;
        let hmid = self.mlp_in.forward(g, store, normed)?;
        let hmid = g.selu(hmid)?;
        let mlp = self.mlp_out.forward(g, store, hmid)?;
        let t = g.add(t, mlp)?;

        let folded = g.fold_patches(t, layout, d)?;
        let back = self.from_hidden.forward(g, store, folded)?;
        let back = self.fuse_bn.forward(g, store, back, mode)?;
        let out = g.add(x, back)?;
        Ok(BlockTrace { out, tokens, attention, layout })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mask: Option<&TopKSets>,
        mode: Mode,
    ) -> Result<BlockTrace> {
        let (tokens, layout) = self.local_tokens(g, store, x, mode)?;
        self.global_and_fuse(g, store, x, tokens, layout, mask, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::zero_params;
    use crate::tensor::Tensor;

    fn block(variant: AttentionVariant, cfg: MobileVitCfg, seed: u64) -> (ParamStore, MobileVitBlock) {
        let mut store = ParamStore::new();
        let b = MobileVitBlock::new(&mut store, "b", MobileVitCfg { variant, ..cfg }, &mut LabRng::new(seed));
        // Larger weights so attention is far from uniform.
        for id in store.trainable_with_prefix("b.") {
            store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v *= 20.0);
        }
        (store, b)
    }

    #[test]
    fn sparse_with_every_key_matches_dense() {
        let mut rng = LabRng::new(11);
        for case in 0..20u64 {
            let patch = 1 + rng.index(2);
            let heads = 1 + rng.index(2);
            let cfg = MobileVitCfg {
                channels: 1 + rng.index(3),
                patch,
                hidden: heads * (1 + rng.index(3)),
                heads,
                mlp_ratio: 1 + rng.index(2),
                variant: AttentionVariant::Dense,
            };
            let (h, w) = (patch * (1 + rng.index(3)), patch * (1 + rng.index(3)));
            let batch = 1 + rng.index(2);
            let x = Tensor::uniform(&[batch, cfg.channels, h, w], -1.0, 1.0, &mut rng);

            let (ds, db) = block(AttentionVariant::Dense, cfg, case);
            let mut g = Graph::new();
            let xv = g.input(x.clone()).unwrap();
            let dense = db.forward(&mut g, &ds, xv, None, Mode::Train).unwrap();
            let dense = g.value(dense.out).clone();

            let (ss, sb) = block(AttentionVariant::Sparse, cfg, case);
            let n = cfg.tokens(h, w);
            let sets = TopKSets::full(batch * patch * patch * heads * n, n);
            let mut g = Graph::new();
            let xv = g.input(x).unwrap();
            let sparse = sb.forward(&mut g, &ss, xv, Some(&sets), Mode::Train).unwrap();
            let diff = g.value(sparse.out).max_abs_diff(&dense);
            assert!(diff <= 1e-10, "case {case}: {diff}");
        }
    }

    #[test]
    fn zero_weights_pass_input_through() {
        let cfg = MobileVitCfg { channels: 2, patch: 2, hidden: 4, heads: 2, mlp_ratio: 2, variant: AttentionVariant::Dense };
        let (mut store, b) = block(AttentionVariant::Dense, cfg, 1);
        zero_params(&mut store, "b.");
        let x = Tensor::uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut LabRng::new(2));
        let mut g = Graph::new();
        let xv = g.input(x.clone()).unwrap();
        let tr = b.forward(&mut g, &store, xv, None, Mode::Eval).unwrap();
        assert_eq!(g.value(tr.out), &x);
        assert_eq!(g.shape(tr.attention), &[8, 2, 4, 4]);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let cfg = MobileVitCfg { channels: 2, patch: 2, hidden: 6, heads: 4, mlp_ratio: 2, variant: AttentionVariant::Sparse };
        assert!(cfg.validate(4, 4, None).is_err());
        let cfg = MobileVitCfg { hidden: 8, ..cfg };
        assert!(cfg.validate(6, 5, None).is_err());
        assert!(cfg.validate(4, 4, Some(5)).is_err());
        assert!(cfg.validate(4, 4, Some(4)).is_ok());

        let (store, b) = block(AttentionVariant::Sparse, cfg, 3);
        let mut g = Graph::new();
        let xv = g.input(Tensor::zeros(&[1, 2, 4, 4])).unwrap();
        assert!(b.forward(&mut g, &store, xv, None, Mode::Train).is_err());
        assert_eq!("dense".parse::<AttentionVariant>().unwrap(), AttentionVariant::Dense);
        assert!("both".parse::<AttentionVariant>().is_err());
    }
}
