//! Importance fusion, top-k key selection and masked attention.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_FUSION_ALPHA: f64 = 0.7;

/// How many keys each query keeps, as a function of the token count `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KRule {
    /// `k = N` (dense).
    Full,
    /// `k = ⌊N/10⌋`.
    Div10,
    /// `k = ⌊N/25⌋`.
    #[default]
    Div25,
    /// `k = ⌊N/50⌋`.
    Div50,
}

impl KRule {
    /// Unclamped rule value; may be 0 for small `N`.
    pub fn raw(self, n: usize) -> usize {
        match self {
            KRule::Full => n,
            KRule::Div10 => n / 10,
            KRule::Div25 => n / 25,
            KRule::Div50 => n / 50,
        }
    }

    /// Rule value clamped to `[1, N]`.
    pub fn resolve(self, n: usize) -> usize {
        let k = self.raw(n);
        if k == 0 {
            log::warn!("k-rule {self} gives k = 0 for N = {n}; using k = 1");
            1
        } else {
            k.min(n)
        }
    }
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KRule::Full => "n",
            KRule::Div10 => "n10",
            KRule::Div25 => "n25",
            KRule::Div50 => "n50",
        })
    }
}

impl FromStr for KRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" | "full" => Ok(KRule::Full),
            "n10" => Ok(KRule::Div10),
            "n25" => Ok(KRule::Div25),
            "n50" => Ok(KRule::Div50),
            other => Err(Error::Config(format!("k_rule must be one of n, n10, n25, n50; got {other:?}"))),
        }
    }
}

/// Row-wise `α·softmax(s/τ) + (1-α)·(1 - softmax(-s/τ))` over the last axis.
pub fn importance_fusion(sim: &Tensor, tau: f64, alpha: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("fusion alpha must lie in [0, 1], got {alpha}")));
    }
    let width = *sim.shape().last().ok_or_else(|| Error::Shape { op: "fusion", detail: "scalar input".into() })?;
    let mut out = vec![0.0; sim.numel()];
    let mut pos = vec![0.0; width];
    let mut neg = vec![0.0; width];
    for (row, dst) in sim.data().chunks(width).zip(out.chunks_mut(width)) {
        softmax_into(row, 1.0 / tau, &mut pos);
        softmax_into(row, -1.0 / tau, &mut neg);
        for j in 0..width {
            dst[j] = alpha * pos[j] + (1.0 - alpha) * (1.0 - neg[j]);
        }
    }
    Tensor::new(sim.shape(), out)
}

fn softmax_into(row: &[f64], scale: f64, dst: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
    let mut total = 0.0;
    for (d, &v) in dst.iter_mut().zip(row) {
        *d = (v * scale - max).exp();
        total += *d;
    }
    dst.iter_mut().for_each(|d| *d /= total);
}

/// Per-row key index sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopKSets {
    rows: usize,
    width: usize,
    k: usize,
    indices: Vec<usize>,
}

impl TopKSets {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.indices[r * self.k..(r + 1) * self.k]
    }

    /// Full selection: every key kept for every row.
    pub fn full(rows: usize, width: usize) -> Self {
        let indices = (0..rows).flat_map(|_| 0..width).collect();
        Self { rows, width, k: width, indices }
    }

    /// Dense boolean mask in row-major `rows × width` order.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.rows * self.width];
        for r in 0..self.rows {
            for &j in self.row(r) {
                m[r * self.width + j] = true;
            }
        }
        m
    }
}

/// Keeps the `k` highest-importance keys per row (last axis). Ties go to the
/// lower index. `k` is clamped to `[1, width]`.
pub fn select_topk(importance: &Tensor, k: usize) -> Result<TopKSets> {
    let width = *importance.shape().last().ok_or_else(|| Error::Shape { op: "select_topk", detail: "scalar input".into() })?;
    let k = if k == 0 {
        log::warn!("top-k with k = 0; using k = 1");
        1
    } else {
        k.min(width)
    };
    let rows = importance.numel() / width;
    let mut indices = Vec::with_capacity(rows * k);
    let mut order: Vec<usize> = Vec::with_capacity(width);
    for row in importance.data().chunks(width) {
        order.clear();
        order.extend(0..width);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let start = indices.len();
        indices.extend_from_slice(&order[..k]);
        indices[start..].sort_unstable();
    }
    Ok(TopKSets { rows, width, k, indices })
}

/// Attention restricted to the selected keys:
/// `A_s(i, j) = exp(q_i·k_j) / Σ_{l∈T_i} exp(q_i·k_l)` for `j ∈ T_i`, else 0;
/// returns `(A_s · V, A_s)`. `q`, `k`, `v` are `[.., N, d]`.
pub fn sparse_attention(g: &mut Graph, q: Var, k: Var, v: Var, sets: &TopKSets) -> Result<(Var, Var)> {
    let scores = g.batch_matmul(q, k, true)?;
    let expect = g.value(scores).numel();
    if sets.rows * sets.width != expect {
        return shape_err(
            "sparse_attention",
            format!("{} sets of width {} for scores {:?}", sets.rows, sets.width, g.shape(scores)),
        );
    }
    let a = g.masked_softmax(scores, Rc::new(sets.mask()))?;
    let out = g.batch_matmul(a, v, false)?;
    Ok((out, a))
}

/// Plain softmax attention, `(softmax(q·kᵀ) · V, A)`.
pub fn dense_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let scores = g.batch_matmul(q, k, true)?;
    let a = g.softmax(scores, 1.0)?;
    let out = g.batch_matmul(a, v, false)?;
    Ok((out, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_rules_at_paper_token_count() {
        assert_eq!(KRule::Div25.resolve(400), 16);
        assert_eq!(KRule::Div50.resolve(400), 8);
        assert_eq!(KRule::Div10.resolve(400), 40);
        assert_eq!(KRule::Full.resolve(400), 400);
        assert_eq!(KRule::Div25.raw(16), 0);
        assert_eq!(KRule::Div25.resolve(16), 1);
        assert_eq!("n50".parse::<KRule>().unwrap(), KRule::Div50);
        assert!("n7".parse::<KRule>().is_err());
    }

    #[test]
    fn fusion_two_element_row() {
        let t = Tensor::from_slice(&[1, 2], &[1.0, -1.0]).unwrap();
        let f = importance_fusion(&t, 0.5, 0.7).unwrap();
        // Two entries: 1 - P_neg equals P_pos = softmax([2, -2]).
        let p0 = 1.0 / (1.0 + (-4f64).exp());
        assert!((f.data()[0] - p0).abs() < 1e-12);
        assert!((f.data()[0] - 0.9820).abs() < 1e-4);
        assert!((f.data()[1] - 0.0180).abs() < 1e-4);
    }

    #[test]
    fn fusion_boundary_alpha_one_is_positive_softmax() {
        let row = [0.3, -1.2, 2.0, 0.0];
        let t = Tensor::from_slice(&[1, 4], &row).unwrap();
        let f = importance_fusion(&t, 0.5, 1.0).unwrap();
        let mut p = [0.0; 4];
        softmax_into(&row, 2.0, &mut p);
        assert_eq!(f.data(), &p);
    }

    #[test]
    fn uniform_row_stays_uniform() {
        let t = Tensor::full(&[2, 5], 0.37);
        let f = importance_fusion(&t, 0.5, 0.7).unwrap();
        for &v in f.data() {
            assert!((v - f.data()[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn topk_picks_largest_with_low_index_ties() {
        let t = Tensor::from_slice(&[1, 3], &[0.1, 0.9, 0.9]).unwrap();
        assert_eq!(select_topk(&t, 2).unwrap().row(0), &[1, 2]);
        assert_eq!(select_topk(&t, 1).unwrap().row(0), &[1]);
        let tie = Tensor::from_slice(&[1, 4], &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(select_topk(&tie, 2).unwrap().row(0), &[0, 1]);
        assert_eq!(select_topk(&tie, 0).unwrap().k(), 1);
        assert_eq!(select_topk(&tie, 9).unwrap().k(), 4);
    }

    #[test]
    fn sparse_attention_closed_forms() {
        let mut g = Graph::new();
        // q·kᵀ row = [2, 1, 0] using one-dimensional tokens.
        let q = g.input(Tensor::from_slice(&[1, 1, 1], &[1.0]).unwrap()).unwrap();
        let k = g.input(Tensor::from_slice(&[1, 3, 1], &[2.0, 1.0, 0.0]).unwrap()).unwrap();
        let v = g.input(Tensor::from_slice(&[1, 3, 1], &[1.0, 2.0, 3.0]).unwrap()).unwrap();
        let sets = select_topk(&Tensor::from_slice(&[1, 3], &[5.0, 4.0, 0.0]).unwrap(), 2).unwrap();
        let (_, a) = sparse_attention(&mut g, q, k, v, &sets).unwrap();
        let row = g.value(a).data();
        assert!((row[0] - 0.7311).abs() < 1e-4 && (row[1] - 0.2689).abs() < 1e-4);
        assert_eq!(row[2], 0.0);

        let single = select_topk(&Tensor::from_slice(&[1, 3], &[1.0, 0.0, 0.0]).unwrap(), 1).unwrap();
        let (_, a1) = sparse_attention(&mut g, q, k, v, &single).unwrap();
        assert_eq!(g.value(a1).data(), &[1.0, 0.0, 0.0]);
    }
}
