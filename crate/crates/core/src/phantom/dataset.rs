use std::fmt;
use std::str::FromStr;

use super::gen_phantom;
use crate::error::{Error, Result};
use crate::par::{try_map_range, Execution};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Mri,
    Us,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Mri => "mri",
            Modality::Us => "us",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mri" => Ok(Modality::Mri),
            "us" => Ok(Modality::Us),
            other => Err(Error::Format(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhantomRecord {
    pub seed: u64,
    pub label: u8,
    pub split: Split,
}

/// Seed and label assignment for every phantom of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub side: usize,
    pub records: Vec<PhantomRecord>,
}

impl SplitPlan {
    pub fn split(&self, split: Split) -> Vec<PhantomRecord> {
        self.records.iter().copied().filter(|r| r.split == split).collect()
    }
}

const INDEX_BITS: u32 = 21;
const MAX_MASTER_SEED: u64 = 1 << 40;

/// Per-phantom seed: master, split, class and index packed into disjoint bit
/// fields, so no two (split, class, index) triples ever share a seed.
fn phantom_seed(master: u64, split: Split, class: u8, index: usize) -> u64 {
    (master << 24) | ((split as u64) << 22) | ((class as u64) << INDEX_BITS) | index as u64
}

/// Balanced 8:1:1 split of `n_per_class` phantoms per class. Records within a
/// split alternate between classes.
pub fn gen_dataset(n_per_class: usize, seed: u64, side: usize) -> Result<SplitPlan> {
    if n_per_class < 10 {
        return Err(Error::Config(format!("n_per_class must be >= 10, got {n_per_class}")));
    }
    if n_per_class >= 1 << INDEX_BITS {
        return Err(Error::Config(format!("n_per_class must be < {}, got {n_per_class}", 1u64 << INDEX_BITS)));
    }
    if seed >= MAX_MASTER_SEED {
        return Err(Error::Config(format!("dataset seed must be < 2^40, got {seed}")));
    }
    if side < 16 || !side.is_multiple_of(2) {
        return Err(Error::Config(format!("side must be an even number >= 16, got {side}")));
    }
    let train = n_per_class * 8 / 10;
    let val = n_per_class / 10;
    let counts = [train, val, n_per_class - train - val];
    let mut records = Vec::with_capacity(2 * n_per_class);
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for i in 0..count {
            for class in [0u8, 1] {
                records.push(PhantomRecord { seed: phantom_seed(seed, split, class, i), label: class, split });
            }
        }
    }
    Ok(SplitPlan { side, records })
}

/// Single-channel images with labels, layer masks and source seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub side: usize,
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub masks: Vec<u8>,
    pub seeds: Vec<u64>,
}

impl ImageSet {
    pub fn from_parts(side: usize, images: Vec<f64>, labels: Vec<u8>, masks: Vec<u8>, seeds: Vec<u64>) -> Result<Self> {
        let n = labels.len();
        let px = side * side;
        if images.len() != n * px || masks.len() != n * px || seeds.len() != n {
            return Err(Error::Data(format!(
                "image set of {n} labels has {} pixels, {} mask entries and {} seeds at side {side}",
                images.len(),
                masks.len(),
                seeds.len()
            )));
        }
        Ok(Self { side, images, labels, masks, seeds })
    }

    /// Renders the given phantoms in one modality.
    pub fn render(records: &[PhantomRecord], side: usize, modality: Modality, exec: Execution) -> Result<Self> {
        let phantoms = try_map_range(exec, records.len(), |i| gen_phantom(records[i].seed, side, records[i].label == 1))?;
        let mut set = Self { side, images: Vec::new(), labels: Vec::new(), masks: Vec::new(), seeds: Vec::new() };
        for p in phantoms {
            set.images.extend_from_slice(p.render(modality));
            set.masks.extend_from_slice(&p.mask);
            set.labels.push(p.label);
            set.seeds.push(p.seed);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let px = self.side * self.side;
        &self.images[i * px..(i + 1) * px]
    }

    pub fn mask(&self, i: usize) -> &[u8] {
        let px = self.side * self.side;
        &self.masks[i * px..(i + 1) * px]
    }

    /// `[len(idx), 1, side, side]` batch.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.side * self.side);
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(&[idx.len(), 1, self.side, self.side], data).expect("batch shape")
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self { side: self.side, images: Vec::new(), labels: Vec::new(), masks: Vec::new(), seeds: Vec::new() };
        for &i in idx {
            out.images.extend_from_slice(self.image(i));
            out.masks.extend_from_slice(self.mask(i));
            out.labels.push(self.labels[i]);
            out.seeds.push(self.seeds[i]);
        }
        out
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn counts_and_disjoint_seeds() {
        let plan = gen_dataset(100, 7, 32).unwrap();
        let sizes: Vec<usize> = Split::ALL.iter().map(|&s| plan.split(s).len()).collect();
        assert_eq!(sizes, vec![160, 20, 20]);
        let seeds: Vec<HashSet<u64>> =
            Split::ALL.iter().map(|&s| plan.split(s).iter().map(|r| r.seed).collect()).collect();
        assert!(seeds[0].is_disjoint(&seeds[1]) && seeds[0].is_disjoint(&seeds[2]) && seeds[1].is_disjoint(&seeds[2]));
        for s in [Split::Val, Split::Test] {
            let recs = plan.split(s);
            assert_eq!(recs.iter().filter(|r| r.label == 1).count() * 2, recs.len());
        }
        assert!(gen_dataset(9, 7, 32).is_err());
    }

    #[test]
    fn parallel_render_matches_sequential() {
        let plan = gen_dataset(10, 1, 32).unwrap();
        let recs = plan.split(Split::Train);
        let a = ImageSet::render(&recs, 32, Modality::Us, Execution::Sequential).unwrap();
        let b = ImageSet::render(&recs, 32, Modality::Us, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.batch(&[0, 3]).shape(), &[2, 1, 32, 32]);
    }
}
