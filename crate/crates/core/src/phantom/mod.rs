//! Two-modality phantoms with a layered anatomy and a binary invasion label.
//!
//! Each phantom is a set of nested elliptical layers: an outer wall, a thin
//! dark junction band, and an inner cavity. An invaded phantom has a radial
//! sector of the band replaced by wall tissue, so the cavity touches the wall.
//! The MRI-style render is piecewise smooth with faint noise; the US-style
//! render carries multiplicative speckle and depth attenuation.

mod dataset;
mod fidelity;

pub use dataset::{gen_dataset, ImageSet, Modality, PhantomRecord, Split, SplitPlan};
pub use fidelity::{dice, otsu_threshold, structure_fidelity};

use crate::error::{Error, Result};
use crate::rng::LabRng;

pub const BACKGROUND: u8 = 0;
pub const WALL: u8 = 1;
pub const BAND: u8 = 2;
pub const CAVITY: u8 = 3;

const CAVITY_RHO: f64 = 0.5;
const BAND_RHO: f64 = 0.75;
const WALL_RHO: f64 = 1.3;

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub seed: u64,
    pub side: usize,
    pub label: u8,
    /// Row-major layer map with values in {BACKGROUND, WALL, BAND, CAVITY}.
    pub mask: Vec<u8>,
    pub mri: Vec<f64>,
    pub us: Vec<f64>,
}

impl Phantom {
    pub fn render(&self, modality: Modality) -> &[f64] {
        match modality {
            Modality::Mri => &self.mri,
            Modality::Us => &self.us,
        }
    }

    pub fn band_mask(&self) -> Vec<bool> {
        self.mask.iter().map(|&m| m == BAND).collect()
    }

    pub fn support_mask(&self) -> Vec<bool> {
        self.mask.iter().map(|&m| m != BACKGROUND).collect()
    }
}

/// Builds the phantom for `seed`. `side` must be at least 16 and even.
pub fn gen_phantom(seed: u64, side: usize, invasion: bool) -> Result<Phantom> {
    if side < 16 || !side.is_multiple_of(2) {
        return Err(Error::Config(format!("phantom side must be an even number >= 16, got {side}")));
    }
    let mut rng = LabRng::new(seed);
    let s = side as f64;
    let half = s / 2.0;
    let cx = half - 0.5 + rng.uniform_range(-0.05, 0.05) * s;
    let cy = half - 0.5 + rng.uniform_range(-0.05, 0.05) * s;
    let ax = s * rng.uniform_range(0.28, 0.34);
    let ay = s * rng.uniform_range(0.28, 0.34);
    let gap_angle = rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI);
    let gap_half_width = rng.uniform_range(0.35, 0.6);

    let mut mask = vec![BACKGROUND; side * side];
    for y in 0..side {
        for x in 0..side {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let rho = ((dx / ax).powi(2) + (dy / ay).powi(2)).sqrt();
            let layer = if rho < CAVITY_RHO {
                CAVITY
            } else if rho < BAND_RHO {
                let off = angle_diff(dy.atan2(dx), gap_angle);
                if invasion && off.abs() < gap_half_width {
                    WALL
                } else {
                    BAND
                }
            } else if rho < WALL_RHO {
                WALL
            } else {
                BACKGROUND
            };
            mask[y * side + x] = layer;
        }
    }

    let mri = render_mri(&mask, side, &mut rng.fork(1));
    let us = render_us(&mask, side, &mut rng.fork(2));
    Ok(Phantom { seed, side, label: invasion as u8, mask, mri, us })
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let d = (a - b).rem_euclid(tau);
    if d > tau / 2.0 {
        d - tau
    } else {
        d
    }
}

fn render_mri(mask: &[u8], side: usize, rng: &mut LabRng) -> Vec<f64> {
    let base: Vec<f64> = mask
        .iter()
        .map(|&m| match m {
            WALL => 0.75,
            BAND => 0.08,
            CAVITY => 0.55,
            _ => 0.1,
        })
        .collect();
    let mut img = gaussian_blur(&base, side, 0.5);
    for v in &mut img {
        *v = (*v + 0.02 * rng.normal()).clamp(0.0, 1.0);
    }
    img
}

fn render_us(mask: &[u8], side: usize, rng: &mut LabRng) -> Vec<f64> {
    let noise: Vec<f64> = (0..side * side).map(|_| rng.normal()).collect();
    let speckle = gaussian_blur(&noise, side, 0.7);
    let mut img = Vec::with_capacity(side * side);
    for (i, &m) in mask.iter().enumerate() {
        let echo = match m {
            WALL => 0.62,
            BAND => 0.03,
            CAVITY => 0.88,
            _ => 0.05,
        };
        let depth = (-0.4 * (i / side) as f64 / side as f64).exp();
        img.push((echo * depth * (1.0 + 0.35 * speckle[i])).clamp(0.0, 1.0));
    }
    img
}

/// Separable Gaussian blur with edge clamping.
fn gaussian_blur(src: &[f64], side: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |v: isize| v.clamp(0, side as isize - 1) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..side {
        for x in 0..side {
            tmp[y * side + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * src[y * side + clamp(x as isize + k as isize - radius)])
                .sum();
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(y as isize + k as isize - radius) * side + x])
                .sum();
        }
    }
    out
}

/// Whether the cavity reaches non-band tissue through a 4-connected path
/// that avoids the band. This is the labelling rule read straight off the mask.
pub fn band_is_broken(mask: &[u8], side: usize) -> bool {
    let mut seen = vec![false; mask.len()];
    let mut stack: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] == CAVITY).collect();
    stack.iter().for_each(|&i| seen[i] = true);
    while let Some(i) = stack.pop() {
        if mask[i] == WALL || mask[i] == BACKGROUND {
            return true;
        }
        let (y, x) = (i / side, i % side);
        let mut push = |j: usize| {
            if !seen[j] && mask[j] != BAND {
                seen[j] = true;
                stack.push(j);
            }
        };
        if x > 0 {
            push(i - 1);
        }
        if x + 1 < side {
            push(i + 1);
        }
        if y > 0 {
            push(i - side);
        }
        if y + 1 < side {
            push(i + side);
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_phantom(11, 32, true).unwrap(), gen_phantom(11, 32, true).unwrap());
        assert_ne!(gen_phantom(11, 32, true).unwrap().us, gen_phantom(12, 32, true).unwrap().us);
    }

    #[test]
    fn label_matches_topology() {
        for seed in 0..200 {
            for invasion in [false, true] {
                let p = gen_phantom(seed, 32, invasion).unwrap();
                assert_eq!(band_is_broken(&p.mask, 32), invasion, "seed {seed}");
            }
        }
    }

    #[test]
    fn renders_in_unit_range() {
        let p = gen_phantom(3, 32, false).unwrap();
        assert!(p.mri.iter().chain(&p.us).all(|v| (0.0..=1.0).contains(v)));
        assert!(gen_phantom(3, 15, false).is_err());
    }

    #[test]
    fn modalities_have_distinct_means() {
        let (mut m, mut u) = (0.0, 0.0);
        for seed in 0..100 {
            let p = gen_phantom(seed, 32, seed % 2 == 0).unwrap();
            m += p.mri.iter().sum::<f64>() / p.mri.len() as f64;
            u += p.us.iter().sum::<f64>() / p.us.len() as f64;
        }
        assert!((m - u).abs() / 100.0 > 0.02, "mri {m} us {u}");
    }
}
