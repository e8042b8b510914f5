//! Analytic multiply-add counts for one image through a screening network.

use super::network::NetCfg;
use crate::nn::AttentionVariant;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopReport {
    pub stem: u64,
    pub local: u64,
    /// Score and value-mixing products only.
    pub attention: u64,
    /// Q/K/V and output projections.
    pub projections: u64,
    pub mlp: u64,
    pub head: u64,
    pub simulator: u64,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.stem + self.local + self.attention + self.projections + self.mlp + self.head + self.simulator
    }
}

pub fn matmul_flops(m: usize, n: usize, p: usize) -> u64 {
    (m * n * p) as u64
}

/// Multiply-adds per sample. `k` is the number of keys per query in the
/// sparse variant and is ignored for dense attention.
pub fn flops_estimate(cfg: &NetCfg, variant: AttentionVariant, k: usize, with_simulator: bool) -> FlopReport {
    let f = cfg.feature_side();
    let pixels = f * f;
    let (c, d, n) = (cfg.channels, cfg.hidden, cfg.tokens());
    // Every feature-map pixel is one token in some sequence.
    let t = pixels;
    let keys = match variant {
        AttentionVariant::Dense => n,
        AttentionVariant::Sparse => k.clamp(1, n),
    };
    let simulator = if with_simulator {
        // depthwise 3x3, pointwise, then Z·Zᵀ over each sequence
        matmul_flops(t, d, 9) + matmul_flops(t, d, d) + matmul_flops(t, n, d)
    } else {
        0
    };
    FlopReport {
        stem: matmul_flops(pixels, c, cfg.image_channels * 9),
        local: matmul_flops(pixels, c, c * 9) + matmul_flops(pixels, d, c),
        attention: 2 * matmul_flops(t, keys, d),
        projections: 4 * matmul_flops(t, d, d),
        mlp: 2 * matmul_flops(t, d, d * cfg.mlp_ratio),
        head: matmul_flops(pixels, c, d) + matmul_flops(1, cfg.classes, c),
        simulator,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_ratio_is_k_over_n() {
        let cfg = NetCfg::student(32);
        let dense = flops_estimate(&cfg, AttentionVariant::Dense, 0, false);
        let sparse = flops_estimate(&cfg, AttentionVariant::Sparse, 2, true);
        assert_eq!(dense.attention * 2, sparse.attention * cfg.tokens() as u64);
        assert!(sparse.total() < dense.total());
        assert_eq!(dense.stem, sparse.stem);
    }

    #[test]
    fn hand_counted_stem() {
        let cfg = NetCfg::student(32);
        let r = flops_estimate(&cfg, AttentionVariant::Dense, 0, false);
        assert_eq!(r.stem, 16 * 16 * 8 * 9);
        assert_eq!(r.attention, 2 * 256 * 64 * 16);
    }
}
