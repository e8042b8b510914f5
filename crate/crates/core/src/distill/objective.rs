//! Classification, distillation and the progressive-decoupling schedule.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_DISTILL_TEMPERATURE: f64 = 2.0;
pub const DEFAULT_EMA_ALPHA: f64 = 0.9;

/// Shape of the grad-sim weight `λ(t)` over training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LambdaSchedule {
    /// `max(0, 1 − t/T)`.
    #[default]
    Linear,
    /// `(1 + cos(π·min(t/T, 1))) / 2`.
    Cosine,
    /// Always 0: the simulator gets no teacher supervision.
    Off,
}

impl LambdaSchedule {
    pub fn weight(self, t: f64, total: f64) -> Result<f64> {
        if !(total > 0.0) || !(t >= 0.0) {
            return Err(Error::Config(format!("schedule needs t >= 0 and T > 0, got t = {t}, T = {total}")));
        }
        let frac = (t / total).min(1.0);
        Ok(match self {
            LambdaSchedule::Linear => (1.0 - frac).max(0.0),
            LambdaSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
            LambdaSchedule::Off => 0.0,
        })
    }
}

impl fmt::Display for LambdaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LambdaSchedule::Linear => "linear",
            LambdaSchedule::Cosine => "cosine",
            LambdaSchedule::Off => "off",
        })
    }
}

impl FromStr for LambdaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LambdaSchedule::Linear),
            "cosine" => Ok(LambdaSchedule::Cosine),
            "off" => Ok(LambdaSchedule::Off),
            other => Err(Error::Config(format!("lambda_schedule must be linear, cosine or off; got {other:?}"))),
        }
    }
}

/// `L_cls + L_distill + λ·L_grad-sim` on plain numbers.
pub fn total_objective(cls: f64, distill: f64, grad_sim: f64, lambda: f64) -> f64 {
    cls + distill + lambda * grad_sim
}

/// Mean negative log-likelihood of integer labels under `[B, C]` logits.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[u8]) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&l| l as usize >= s[1]) {
        return Err(Error::Shape { op: "cross_entropy", detail: format!("logits {s:?} vs {} labels", labels.len()) });
    }
    let logp = g.log_softmax(logits)?;
    let idx: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| i * s[1] + l as usize).collect();
    let picked = g.gather(logp, Rc::new(idx), &[labels.len()])?;
    let m = g.mean(picked)?;
    g.neg(m)
}

/// `KL(softmax(t/T) ‖ softmax(s/T))` averaged over the batch, with the teacher
/// logits `t` held constant.
pub fn distill_kl(g: &mut Graph, student: Var, teacher: &Tensor, temperature: f64) -> Result<Var> {
    let s = g.shape(student).to_vec();
    if s.len() != 2 || teacher.shape() != s.as_slice() {
        return Err(Error::Shape { op: "distill_kl", detail: format!("student {s:?} vs teacher {:?}", teacher.shape()) });
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("distillation temperature must be > 0, got {temperature}")));
    }
    let (batch, classes) = (s[0], s[1]);
    let mut pt = Vec::with_capacity(batch * classes);
    let mut entropy_term = 0.0;
    for row in teacher.data().chunks(classes) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
        let z: f64 = row.iter().map(|&v| (v / temperature - max).exp()).sum();
        for &v in row {
            let logp = v / temperature - max - z.ln();
            entropy_term += logp.exp() * logp;
            pt.push(logp.exp());
        }
    }
    let scaled = g.scale(student, 1.0 / temperature)?;
    let logq = g.log_softmax(scaled)?;
    let ptv = g.input(Tensor::new(&s, pt)?)?;
    let cross = g.mul(ptv, logq)?;
    let cross = g.sum(cross)?;
    let cross = g.scale(cross, -1.0 / batch as f64)?;
    g.add_scalar(cross, entropy_term / batch as f64)
}
