//! Index maps for [`Graph::gather`](super::Graph::gather): permutations,
//! patch unfold/fold and nearest-neighbour upsampling.

use std::rc::Rc;

use super::graph::{Graph, Var};
use crate::error::{shape_err, Result};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Source index for every element of `shape` permuted by `perm`
/// (output axis `i` is input axis `perm[i]`).
pub fn permute_index(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let n: usize = shape.iter().product();
    let mut index = Vec::with_capacity(n);
    let mut coord = vec![0usize; out_shape.len()];
    for _ in 0..n {
        index.push(coord.iter().zip(perm).map(|(&c, &p)| c * in_strides[p]).sum());
        for ax in (0..coord.len()).rev() {
            coord[ax] += 1;
            if coord[ax] < out_shape[ax] {
                break;
            }
            coord[ax] = 0;
        }
    }
    (index, out_shape)
}

/// Patch layout shared by unfold and fold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl PatchLayout {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
            return shape_err("unfold", format!("{height}x{width} map is not divisible into {patch}x{patch} patches"));
        }
        Ok(Self { batch, channels, height, width, patch })
    }

    /// Number of patches (tokens) per sequence.
    pub fn tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Number of sequences: one per sample and intra-patch pixel position.
    pub fn sequences(&self) -> usize {
        self.batch * self.patch * self.patch
    }

    fn image_offset(&self, seq: usize, token: usize, c: usize) -> usize {
        let p2 = self.patch * self.patch;
        let (b, pos) = (seq / p2, seq % p2);
        let (pi, pj) = (pos / self.patch, pos % self.patch);
        let gw = self.width / self.patch;
        let (hp, wp) = (token / gw, token % gw);
        ((b * self.channels + c) * self.height + hp * self.patch + pi) * self.width + wp * self.patch + pj
    }

    /// `[B, C, H, W] -> [B·P², N, C]` source indices.
    pub fn unfold_index(&self) -> Vec<usize> {
        let (s, n, c) = (self.sequences(), self.tokens(), self.channels);
        let mut idx = Vec::with_capacity(s * n * c);
        for seq in 0..s {
            for tok in 0..n {
                for ch in 0..c {
                    idx.push(self.image_offset(seq, tok, ch));
                }
            }
        }
        idx
    }

    /// `[B·P², N, C] -> [B, C, H, W]` source indices.
    pub fn fold_index(&self) -> Vec<usize> {
        let unfold = self.unfold_index();
        let mut idx = vec![0; unfold.len()];
        for (tok_pos, &img_pos) in unfold.iter().enumerate() {
            idx[img_pos] = tok_pos;
        }
        idx
    }
}

impl Graph {
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", format!("{perm:?} for {shape:?}"));
        }
        let (index, out_shape) = permute_index(&shape, perm);
        self.gather(x, Rc::new(index), &out_shape)
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return shape_err("transpose", format!("{:?}", self.shape(x)));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(x, &perm)
    }

    pub fn unfold_patches(&mut self, x: Var, patch: usize) -> Result<(Var, PatchLayout)> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return shape_err("unfold", format!("expected [B, C, H, W], got {s:?}"));
        }
        let layout = PatchLayout::new(s[0], s[1], s[2], s[3], patch)?;
        let out_shape = [layout.sequences(), layout.tokens(), layout.channels];
        let v = self.gather(x, Rc::new(layout.unfold_index()), &out_shape)?;
        Ok((v, layout))
    }

    pub fn fold_patches(&mut self, tokens: Var, layout: PatchLayout, channels: usize) -> Result<Var> {
        let layout = PatchLayout { channels, ..layout };
        let expect = [layout.sequences(), layout.tokens(), channels];
        if self.shape(tokens) != expect {
            return shape_err("fold", format!("expected {expect:?}, got {:?}", self.shape(tokens)));
        }
        let out_shape = [layout.batch, channels, layout.height, layout.width];
        self.gather(tokens, Rc::new(layout.fold_index()), &out_shape)
    }

    /// Nearest-neighbour upsampling of `[B, C, H, W]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || factor == 0 {
            return shape_err("upsample", format!("{s:?} x{factor}"));
        }
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let mut idx = Vec::with_capacity(s[0] * s[1] * oh * ow);
        for plane in 0..s[0] * s[1] {
            for y in 0..oh {
                for xx in 0..ow {
                    idx.push((plane * h + y / factor) * w + xx / factor);
                }
            }
        }
        self.gather(x, Rc::new(idx), &[s[0], s[1], oh, ow])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn fold_inverts_unfold() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 3 * 20 * 20).map(|v| v as f64).collect();
        let x = g.input(Tensor::new(&[2, 3, 20, 20], data).unwrap()).unwrap();
        let (tok, layout) = g.unfold_patches(x, 2).unwrap();
        assert_eq!(layout.tokens(), 100);
        assert_eq!(g.shape(tok), &[8, 100, 3]);
        let back = g.fold_patches(tok, layout, 3).unwrap();
        assert_eq!(g.value(back), g.value(x));
    }

    #[test]
    fn unfold_rejects_ragged_maps() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[1, 1, 5, 4])).unwrap();
        assert!(g.unfold_patches(x, 2).is_err());
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap()).unwrap();
        let t = g.transpose_last(x).unwrap();
        assert_eq!(g.shape(t), &[3, 2]);
        assert_eq!(g.value(t).data(), &[1., 4., 2., 5., 3., 6.]);
    }
}
