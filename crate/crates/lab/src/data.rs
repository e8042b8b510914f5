//! Phantom datasets on disk: `index.csv` plus one `.phnt` file per render.

use std::fs;
use std::path::{Path, PathBuf};

use lab_core::io::PhantomFile;
use lab_core::par::{try_map_range, Execution};
use lab_core::phantom::{gen_phantom, ImageSet, Modality, Split, SplitPlan};

use crate::exit::CliError;

pub const INDEX_FILE: &str = "index.csv";
pub const INDEX_HEADER: [&str; 4] = ["path", "split", "label", "seed"];
pub const MODALITIES: [Modality; 2] = [Modality::Mri, Modality::Us];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexRow {
    pub path: String,
    pub split: Split,
    pub label: u8,
    pub seed: u64,
}

impl IndexRow {
    fn modality(&self) -> Option<Modality> {
        self.path.split('/').nth(1)?.parse().ok()
    }
}

pub fn image_path(split: Split, modality: Modality, n: usize) -> String {
    format!("{split}/{modality}/{n:05}.phnt")
}

/// Renders every phantom of `plan` in both modalities under `dir`.
pub fn write_dataset(dir: &Path, plan: &SplitPlan, exec: Execution) -> Result<Vec<IndexRow>, CliError> {
    let mut rows = Vec::new();
    for split in Split::ALL {
        let records = plan.split(split);
        for modality in MODALITIES {
            fs::create_dir_all(dir.join(split.as_str()).join(modality.as_str()))?;
            let set = ImageSet::render(&records, plan.side, modality, exec)?;
            for i in 0..set.len() {
                let path = image_path(split, modality, i);
                let file = PhantomFile { side: set.side, label: set.labels[i], pixels: set.image(i).to_vec() };
                file.save(&dir.join(&path))?;
                rows.push(IndexRow { path, split, label: set.labels[i], seed: set.seeds[i] });
            }
        }
    }
    let mut w = csv::Writer::from_path(dir.join(INDEX_FILE))?;
    w.write_record(INDEX_HEADER)?;
    for r in &rows {
        w.write_record([r.path.clone(), r.split.to_string(), r.label.to_string(), r.seed.to_string()])?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexRow>, CliError> {
    let path = dir.join(INDEX_FILE);
    if !path.is_file() {
        return Err(CliError::missing(format!("dataset index {} not found", path.display())));
    }
    let mut r = csv::Reader::from_path(&path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != INDEX_HEADER {
        return Err(CliError::missing(format!("{}: header must be {}", path.display(), INDEX_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| CliError::data(format!("{} row {}: bad {what}", path.display(), n + 1));
        let split: Split = rec[1].parse().map_err(|_| bad("split"))?;
        let label: u8 = rec[2].parse().ok().filter(|&l| l <= 1).ok_or_else(|| bad("label"))?;
        let seed: u64 = rec[3].parse().map_err(|_| bad("seed"))?;
        rows.push(IndexRow { path: rec[0].to_string(), split, label, seed });
    }
    Ok(rows)
}

/// Loads one split in one modality. Masks are regenerated from the seeds and
/// every file's side and label must agree with the index.
pub fn load_split(dir: &Path, split: Split, modality: Modality, side: usize, exec: Execution) -> Result<ImageSet, CliError> {
    let rows: Vec<IndexRow> =
        read_index(dir)?.into_iter().filter(|r| r.split == split && r.modality() == Some(modality)).collect();
    if rows.is_empty() {
        return Err(CliError::missing(format!("no {split} images of modality {modality} in {}", dir.display())));
    }
    let loaded = try_map_range(exec, rows.len(), |i| {
        let row = &rows[i];
        let file = PhantomFile::load(&dir.join(&row.path))?;
        let phantom = gen_phantom(row.seed, side, row.label == 1)?;
        Ok((file, phantom))
    })
    .map_err(|e| {
        let e = CliError::from(e);
        CliError::new(e.code, format!("{}: {}", dir.display(), e.message))
    })?;
    let mut images = Vec::with_capacity(rows.len() * side * side);
    let (mut labels, mut masks, mut seeds) = (Vec::new(), Vec::new(), Vec::new());
    for (row, (file, phantom)) in rows.iter().zip(loaded) {
        if file.side != side {
            return Err(CliError::config(format!("side: dataset images are {}, config says {side}", file.side)));
        }
        if file.label != row.label || phantom.label != row.label {
            return Err(CliError::data(format!("{}: label disagrees with index", row.path)));
        }
        images.extend(file.pixels);
        masks.extend_from_slice(&phantom.mask);
        labels.push(row.label);
        seeds.push(row.seed);
    }
    Ok(ImageSet::from_parts(side, images, labels, masks, seeds)?)
}

pub fn dataset_dir(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_dir() {
        Ok(path)
    } else {
        Err(CliError::missing(format!("dataset directory {} not found", path.display())))
    }
}
