use super::classify::{auc_of, confusion_of, Metric, PredictionSet};
use crate::error::{Error, Result};
use crate::par::{map_range, Execution};
use crate::rng::LabRng;

pub const DEFAULT_RESAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Resamples in which the metric was defined.
    pub draws: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapReport {
    pub resamples: usize,
    pub seed: u64,
    pub rows: Vec<MetricSummary>,
    /// Resamples that lacked one class and so contributed no AUC.
    pub auc_skipped: usize,
}

impl BootstrapReport {
    pub fn get(&self, m: Metric) -> Option<&MetricSummary> {
        self.rows.iter().find(|r| r.metric == m)
    }
}

/// Non-parametric bootstrap with 2.5/97.5 percentile intervals. Resample `i`
/// draws from its own stream seeded with `seed + i`, so the report does not
/// depend on how resamples are spread over workers.
pub fn bootstrap_ci(p: &PredictionSet, resamples: usize, seed: u64, exec: Execution) -> Result<BootstrapReport> {
    if resamples == 0 {
        return Err(Error::Config("bootstrap needs at least one resample".into()));
    }
    if p.is_empty() {
        return Err(Error::Data("empty prediction set".into()));
    }
    let n = p.len();
    let draws: Vec<[Option<f64>; 6]> = map_range(exec, resamples, |i| {
        let mut rng = LabRng::new(seed.wrapping_add(i as u64));
        let idx: Vec<usize> = (0..n).map(|_| rng.index(n)).collect();
        let scores: Vec<f64> = idx.iter().map(|&k| p.scores[k]).collect();
        let labels: Vec<u8> = idx.iter().map(|&k| p.labels[k]).collect();
        let c = confusion_of(scores.iter().copied().zip(labels.iter().copied()), p.threshold).expect("non-empty resample");
        let mut row = [None; 6];
        for (slot, m) in row.iter_mut().zip(Metric::ALL) {
            *slot = match m {
                Metric::Auc => auc_of(&scores, &labels),
                other => c.get(other),
            };
        }
        row
    });
    let mut rows = Vec::with_capacity(6);
    let mut auc_skipped = 0;
    for (j, m) in Metric::ALL.into_iter().enumerate() {
        let mut vals: Vec<f64> = draws.iter().filter_map(|d| d[j]).collect();
        if m == Metric::Auc {
            auc_skipped = resamples - vals.len();
        }
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(f64::total_cmp);
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(MetricSummary {
            metric: m,
            mean,
            sd,
            ci_lo: percentile(&vals, 0.025),
            ci_hi: percentile(&vals, 0.975),
            draws: vals.len(),
        });
    }
    Ok(BootstrapReport { resamples, seed, rows, auc_skipped })
}

/// Linear-interpolation percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_have_degenerate_intervals() {
        let p = PredictionSet::new(vec![0.9, 0.8, 0.1, 0.2], vec![1, 1, 0, 0]).unwrap();
        let r = bootstrap_ci(&p, 500, 3, Execution::Sequential).unwrap();
        for row in &r.rows {
            assert_eq!((row.ci_lo, row.ci_hi), (1.0, 1.0), "{}", row.metric);
        }
    }

    #[test]
    fn parallel_and_sequential_reports_agree() {
        let p = PredictionSet::new(vec![0.9, 0.4, 0.6, 0.2, 0.7, 0.3], vec![1, 1, 0, 0, 1, 0]).unwrap();
        let a = bootstrap_ci(&p, 300, 11, Execution::Sequential).unwrap();
        let b = bootstrap_ci(&p, 300, 11, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.auc_skipped > 0);
        assert!(bootstrap_ci(&p, 0, 11, Execution::Sequential).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[0.0, 1.0, 2.0, 3.0, 4.0], 0.5), 2.0);
        assert!((percentile(&[0.0, 10.0], 0.025) - 0.25).abs() < 1e-12);
    }
}
