use crate::error::{Error, Result};

/// Sensitivity, specificity and prevalence with the population-level
/// indicators derived from them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreeningProfile {
    pub se: f64,
    pub sp: f64,
    pub p: f64,
    /// `Se / (1 − Sp)`; infinite when `Sp = 1`.
    pub lr_plus: f64,
    /// `P·Se + (1 − P)(1 − Sp)`.
    pub rate: f64,
    /// `P·Se / rate`; `None` when nobody screens positive.
    pub ppv: Option<f64>,
    /// `(1 − P)Sp / ((1 − P)Sp + P(1 − Se))`; `None` when nobody screens negative.
    pub npv: Option<f64>,
    /// `1 / (P·Se)`; infinite when `P·Se = 0`.
    pub nns: f64,
}

impl ScreeningProfile {
    pub fn lr_plus_infinite(&self) -> bool {
        self.lr_plus.is_infinite()
    }

    pub fn nns_infinite(&self) -> bool {
        self.nns.is_infinite()
    }

    /// NNS rounded to the nearest whole person.
    pub fn nns_rounded(&self) -> Option<u64> {
        (!self.nns_infinite()).then(|| self.nns.round() as u64)
    }
}

pub fn screening_indicators(se: f64, sp: f64, p: f64) -> Result<ScreeningProfile> {
    for (name, v) in [("sensitivity", se), ("specificity", sp), ("prevalence", p)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let true_pos = p * se;
    let false_pos = (1.0 - p) * (1.0 - sp);
    let true_neg = (1.0 - p) * sp;
    let false_neg = p * (1.0 - se);
    let rate = true_pos + false_pos;
    Ok(ScreeningProfile {
        se,
        sp,
        p,
        lr_plus: if sp == 1.0 { f64::INFINITY } else { se / (1.0 - sp) },
        rate,
        ppv: (rate > 0.0).then(|| true_pos / rate),
        npv: (true_neg + false_neg > 0.0).then(|| true_neg / (true_neg + false_neg)),
        nns: if true_pos == 0.0 { f64::INFINITY } else { 1.0 / true_pos },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_test() {
        let s = screening_indicators(1.0, 1.0, 0.3).unwrap();
        assert!(s.lr_plus_infinite());
        assert_eq!(s.ppv, Some(1.0));
        assert_eq!(s.npv, Some(1.0));
    }

    #[test]
    fn zero_prevalence_flags_nns() {
        let s = screening_indicators(0.995, 0.9722, 0.0).unwrap();
        assert!(s.nns_infinite());
        assert_eq!(s.nns_rounded(), None);
        assert_eq!(s.ppv, Some(0.0));
        assert!(screening_indicators(1.2, 0.5, 0.1).is_err());
    }

    #[test]
    fn identities_hold() {
        let s = screening_indicators(0.9, 0.8, 0.25).unwrap();
        assert!((s.ppv.unwrap() * s.rate - 0.25 * 0.9).abs() < 1e-15);
        assert!((s.rate - (0.25 * 0.9 + 0.75 * 0.2)).abs() < 1e-15);
    }
}
