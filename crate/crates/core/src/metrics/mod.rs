//! Classification metrics, bootstrap intervals, checkpoint selection and
//! screening indicators.

mod bootstrap;
mod classify;
mod screening;

pub use bootstrap::{bootstrap_ci, percentile, BootstrapReport, MetricSummary, DEFAULT_RESAMPLES};
pub use classify::{confusion_metrics, roc_auc, Confusion, Metric, PredictionSet, DEFAULT_THRESHOLD};
pub use screening::{screening_indicators, ScreeningProfile};

use crate::error::{Error, Result};

/// Sensitivity above which selection switches from sensitivity to specificity.
pub const SENSITIVITY_GATE: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub epoch: usize,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Among candidates with sensitivity >= 0.95 the most specific wins;
/// otherwise the most sensitive. Ties go to the later epoch.
pub fn checkpoint_select(candidates: &[Candidate]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Data("no checkpoint candidates".into()));
    }
    let gated: Vec<&Candidate> = candidates.iter().filter(|c| c.sensitivity >= SENSITIVITY_GATE).collect();
    let best = if gated.is_empty() {
        candidates.iter().fold(None::<&Candidate>, |best, c| match best {
            Some(b) if b.sensitivity > c.sensitivity || (b.sensitivity == c.sensitivity && b.epoch > c.epoch) => Some(b),
            _ => Some(c),
        })
    } else {
        gated.into_iter().fold(None::<&Candidate>, |best, c| match best {
            Some(b) if b.specificity > c.specificity || (b.specificity == c.specificity && b.epoch > c.epoch) => Some(b),
            _ => Some(c),
        })
    };
    Ok(best.expect("non-empty").epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(epoch: usize, sensitivity: f64, specificity: f64) -> Candidate {
        Candidate { epoch, sensitivity, specificity }
    }

    #[test]
    fn dual_threshold_rule() {
        assert_eq!(checkpoint_select(&[c(1, 0.94, 0.99), c(2, 0.96, 0.90), c(3, 0.97, 0.95)]).unwrap(), 3);
        assert_eq!(checkpoint_select(&[c(1, 0.80, 0.99), c(2, 0.90, 0.50), c(3, 0.85, 0.95)]).unwrap(), 2);
        assert_eq!(checkpoint_select(&[c(4, 0.1, 0.1)]).unwrap(), 4);
        assert_eq!(checkpoint_select(&[c(1, 0.96, 0.9), c(2, 0.99, 0.9)]).unwrap(), 2);
        assert!(checkpoint_select(&[]).is_err());
    }
}
