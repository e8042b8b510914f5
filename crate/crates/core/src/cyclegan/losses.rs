//! Component losses of the structure-guided translation objective.
//!
//! Everything here works on graph nodes that already hold network outputs
//! (discriminator probabilities, translated images, encoder features), so
//! each loss can be checked against hand-computed values.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

pub const DEFAULT_LAMBDA: f64 = 10.0;
pub const DEFAULT_MU: f64 = 5.0;

/// Counts probabilities that fell outside `[EPS, 1 - EPS]` and were clamped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClampCounter {
    pub clamped: u64,
}

impl ClampCounter {
    fn safe_ln(&mut self, g: &mut Graph, p: Var, complement: bool) -> Result<Var> {
        let hits = g.value(p).data().iter().filter(|&&v| !(PROB_EPS..=1.0 - PROB_EPS).contains(&v)).count();
        if hits > 0 {
            self.clamped += hits as u64;
            log::warn!("{hits} probabilities clamped before log");
        }
        let c = g.clamp(p, PROB_EPS, 1.0 - PROB_EPS)?;
        let arg = if complement {
            let n = g.neg(c)?;
            g.add_scalar(n, 1.0)?
        } else {
            c
        };
        g.ln(arg)
    }

    /// `mean(ln p)`.
    pub fn mean_ln(&mut self, g: &mut Graph, p: Var) -> Result<Var> {
        let l = self.safe_ln(g, p, false)?;
        g.mean(l)
    }

    /// `mean(ln(1 - p))`.
    pub fn mean_ln_complement(&mut self, g: &mut Graph, p: Var) -> Result<Var> {
        let l = self.safe_ln(g, p, true)?;
        g.mean(l)
    }
}

/// `E[ln D(real)] + E[ln(1 - D(fake))]` from discriminator outputs.
pub fn adv_loss(g: &mut Graph, d_real: Var, d_fake: Var, counter: &mut ClampCounter) -> Result<Var> {
    let a = counter.mean_ln(g, d_real)?;
    let b = counter.mean_ln_complement(g, d_fake)?;
    g.add(a, b)
}

/// How the generators are pushed by the adversarial term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GenAdversarial {
    /// Minimise `-E[ln D(G(x))]`.
    #[default]
    NonSaturating,
    /// Minimise `E[ln(1 - D(G(x)))]`, the minimax form.
    Minimax,
}

impl GenAdversarial {
    pub fn as_str(self) -> &'static str {
        match self {
            GenAdversarial::NonSaturating => "non-saturating",
            GenAdversarial::Minimax => "minimax",
        }
    }
}

impl fmt::Display for GenAdversarial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenAdversarial {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-saturating" => Ok(GenAdversarial::NonSaturating),
            "minimax" => Ok(GenAdversarial::Minimax),
            other => Err(Error::Config(format!("unknown generator adversarial form '{other}'"))),
        }
    }
}

/// Generator-side adversarial objective on `D(fake)`.
pub fn generator_adv_term(g: &mut Graph, d_fake: Var, form: GenAdversarial, counter: &mut ClampCounter) -> Result<Var> {
    match form {
        GenAdversarial::NonSaturating => {
            let l = counter.mean_ln(g, d_fake)?;
            g.neg(l)
        }
        GenAdversarial::Minimax => counter.mean_ln_complement(g, d_fake),
    }
}

/// Mean absolute difference over batch and elements.
pub fn l1_mean(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    g.mean(d)
}

/// `mean|F(G(x)) - x| + mean|G(F(y)) - y|`.
pub fn cycle_loss(g: &mut Graph, x: Var, fgx: Var, y: Var, gfy: Var) -> Result<Var> {
    let a = l1_mean(g, fgx, x)?;
    let b = l1_mean(g, gfy, y)?;
    g.add(a, b)
}

/// `mean|E(F(G(x))) - E(x)| + mean|E(G(F(û))) - E(û)|`.
pub fn maf_loss(g: &mut Graph, e_fgx: Var, e_x: Var, e_gfu: Var, e_u: Var) -> Result<Var> {
    let a = l1_mean(g, e_fgx, e_x)?;
    let b = l1_mean(g, e_gfu, e_u)?;
    g.add(a, b)
}

/// Binary cross-entropy with per-domain averaging: domain X has label 0 and
/// domain Y label 1, and each domain's term is divided by its own count.
pub fn domain_loss(g: &mut Graph, p_x: Var, p_y: Var, counter: &mut ClampCounter) -> Result<Var> {
    let a = counter.mean_ln_complement(g, p_x)?;
    let b = counter.mean_ln(g, p_y)?;
    let s = g.add(a, b)?;
    g.neg(s)
}

/// `mean|G(y) - y| + mean|F(x) - x|`.
pub fn identity_loss(g: &mut Graph, y: Var, gy: Var, x: Var, fx: Var) -> Result<Var> {
    if g.shape(x)[1] != g.shape(y)[1] {
        return Err(Error::Shape {
            op: "identity_loss",
            detail: format!("channel mismatch {:?} vs {:?}", g.shape(x), g.shape(y)),
        });
    }
    let a = l1_mean(g, gy, y)?;
    let b = l1_mean(g, fx, x)?;
    g.add(a, b)
}

/// Which published grouping of the loss weights to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Weighting {
    /// `adv + adv + λ(cyc + maf) + μ(d + id)`.
    #[default]
    Grouped,
    /// `adv + adv + λ·cyc + μ·id + maf + μ·d`.
    Listed,
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Grouped => "grouped",
            Weighting::Listed => "listed",
        }
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grouped" => Ok(Weighting::Grouped),
            "listed" => Ok(Weighting::Listed),
            other => Err(Error::Config(format!("unknown loss weighting '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: f64,
    pub weighting: Weighting,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, mu: DEFAULT_MU, weighting: Weighting::Grouped }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.mu >= 0.0 && self.lambda.is_finite() && self.mu.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got λ={} μ={}", self.lambda, self.mu)));
        }
        Ok(())
    }

    /// Coefficients for (adv_g, adv_f, cyc, maf, dom, id).
    pub fn coefficients(&self) -> [f64; 6] {
        let (l, m) = (self.lambda, self.mu);
        match self.weighting {
            Weighting::Grouped => [1.0, 1.0, l, l, m, m],
            Weighting::Listed => [1.0, 1.0, l, 1.0, m, m],
        }
    }
}

/// Loss components of one batch, in history-column order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Components {
    pub adv_g: f64,
    pub adv_f: f64,
    pub cyc: f64,
    pub maf: f64,
    pub dom: f64,
    pub id: f64,
}

impl Components {
    pub fn as_array(&self) -> [f64; 6] {
        [self.adv_g, self.adv_f, self.cyc, self.maf, self.dom, self.id]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { adv_g: a[0], adv_f: a[1], cyc: a[2], maf: a[3], dom: a[4], id: a[5] }
    }
}

/// Weighted total of the six components.
pub fn total_generator_loss(c: &Components, w: &LossWeights) -> f64 {
    c.as_array().iter().zip(w.coefficients()).map(|(v, k)| v * k).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn leaf(g: &mut Graph, shape: &[usize], data: &[f64]) -> Var {
        g.variable(Tensor::new(shape, data.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn adversarial_at_half() {
        let mut g = Graph::new();
        let mut c = ClampCounter::default();
        let r = leaf(&mut g, &[2, 1], &[0.5, 0.5]);
        let f = leaf(&mut g, &[3, 1], &[0.5, 0.5, 0.5]);
        let l = adv_loss(&mut g, r, f, &mut c).unwrap();
        assert!((g.value(l).item() - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(c.clamped, 0);
    }

    #[test]
    fn adversarial_optimum_and_clamping() {
        let mut g = Graph::new();
        let mut c = ClampCounter::default();
        let r = leaf(&mut g, &[1], &[1.0]);
        let f = leaf(&mut g, &[1], &[0.0]);
        let l = adv_loss(&mut g, r, f, &mut c).unwrap();
        let v = g.value(l).item();
        assert!(v < 0.0 && v > -1e-6);
        assert_eq!(c.clamped, 2);
    }

    #[test]
    fn cycle_hand_example() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 1, 1, 2], &[1.0, 2.0]);
        let fgx = leaf(&mut g, &[1, 1, 1, 2], &[0.0, 1.0]);
        let y = leaf(&mut g, &[1, 1, 1, 2], &[0.3, 0.4]);
        let l = cycle_loss(&mut g, x, fgx, y, y).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
    }

    #[test]
    fn domain_loss_examples() {
        let mut c = ClampCounter::default();
        // two X samples classified perfectly, one Y sample at 0.5
        let mut g = Graph::new();
        let px = leaf(&mut g, &[2, 1], &[0.0, 0.0]);
        let py = leaf(&mut g, &[1, 1], &[0.5]);
        let l = domain_loss(&mut g, px, py, &mut c).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-6);

        let mut g = Graph::new();
        let px = leaf(&mut g, &[3, 1], &[0.5; 3]);
        let py = leaf(&mut g, &[5, 1], &[0.5; 5]);
        let l = domain_loss(&mut g, px, py, &mut c).unwrap();
        assert!((g.value(l).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_unit_shift() {
        let mut g = Graph::new();
        let y = leaf(&mut g, &[1, 1, 2, 2], &[1.0; 4]);
        let gy = leaf(&mut g, &[1, 1, 2, 2], &[2.0; 4]);
        let x = leaf(&mut g, &[1, 1, 2, 2], &[0.0; 4]);
        let l = identity_loss(&mut g, y, gy, x, x).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let x3 = leaf(&mut g, &[1, 3, 2, 2], &[0.0; 12]);
        assert!(identity_loss(&mut g, y, gy, x3, x3).is_err());
    }

    #[test]
    fn weighted_total() {
        let c = Components { adv_g: -1.0, adv_f: -1.0, cyc: 0.2, maf: 0.1, dom: 0.05, id: 0.3 };
        assert!((total_generator_loss(&c, &LossWeights::default()) - 2.75).abs() < 1e-12);
        let plain = LossWeights { lambda: 0.0, mu: 0.0, weighting: Weighting::Grouped };
        assert_eq!(total_generator_loss(&c, &plain), -2.0);
        let listed = LossWeights { weighting: Weighting::Listed, ..LossWeights::default() };
        assert!((total_generator_loss(&c, &listed) - (-2.0 + 2.0 + 0.1 + 0.25 + 1.5)).abs() < 1e-12);
    }
}
