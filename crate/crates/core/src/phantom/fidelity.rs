use super::{BACKGROUND, BAND};
use crate::error::{Error, Result};

const BINS: usize = 256;

/// Otsu threshold over values in `[0, 1]`. Returns `None` when no split
/// separates the histogram (a constant image).
pub fn otsu_threshold(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut hist = [0usize; BINS];
    let mut total = 0usize;
    for v in values {
        let b = ((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
        hist[b] += 1;
        total += 1;
    }
    let centre = |b: usize| (b as f64 + 0.5) / BINS as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &c)| c as f64 * centre(b)).sum();
    let (mut w0, mut sum0) = (0usize, 0.0);
    let mut best: Option<(f64, usize)> = None;
    for (b, &count) in hist.iter().enumerate().take(BINS - 1) {
        w0 += count;
        sum0 += count as f64 * centre(b);
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1).powi(2);
        if between > 0.0 && best.is_none_or(|(v, _)| between > v) {
            best = Some((between, b));
        }
    }
    best.map(|(_, b)| (b + 1) as f64 / BINS as f64)
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Dice between the source junction band and the dark Otsu class of `image`,
/// both restricted to the phantom's tissue support.
pub fn structure_fidelity(image: &[f64], mask: &[u8]) -> Result<f64> {
    if image.len() != mask.len() {
        return Err(Error::Data(format!("image of {} pixels vs mask of {}", image.len(), mask.len())));
    }
    let band: Vec<bool> = mask.iter().map(|&m| m == BAND).collect();
    if !band.iter().any(|&b| b) {
        return Err(Error::Data("source mask has no junction band".into()));
    }
    let support = || image.iter().zip(mask).filter(|(_, &m)| m != BACKGROUND).map(|(&v, _)| v);
    let dark: Vec<bool> = match otsu_threshold(support()) {
        Some(t) => image.iter().zip(mask).map(|(&v, &m)| m != BACKGROUND && v < t).collect(),
        None => vec![false; image.len()],
    };
    Ok(dice(&band, &dark))
}

#[cfg(test)]
mod tests {
    use super::super::{gen_phantom, Modality};
    use super::*;

    #[test]
    fn otsu_splits_two_levels() {
        let vals = [0.1, 0.1, 0.1, 0.9, 0.9];
        let t = otsu_threshold(vals).unwrap();
        assert!(t > 0.1 && t <= 0.9, "{t}");
        assert_eq!(otsu_threshold([0.4; 10]), None);
    }

    #[test]
    fn dice_basics() {
        let a = [true, true, false, false];
        let b = [true, false, true, false];
        assert_eq!(dice(&a, &b), 0.5);
        assert_eq!(dice(&a, &b), dice(&b, &a));
        assert_eq!(dice(&a, &a), 1.0);
    }

    #[test]
    fn self_render_scores_high_and_constant_scores_zero() {
        for seed in 0..20 {
            let p = gen_phantom(seed, 32, seed % 2 == 1).unwrap();
            for m in [Modality::Mri, Modality::Us] {
                let d = structure_fidelity(p.render(m), &p.mask).unwrap();
                assert!(d >= 0.9, "seed {seed} {m:?}: {d}");
            }
            assert_eq!(structure_fidelity(&vec![0.5; 1024], &p.mask).unwrap(), 0.0);
        }
        assert!(structure_fidelity(&[0.0; 4], &[0; 4]).is_err());
    }
}
