//! Datasets: in-memory sample sets, file formats (IDX, UCR TSV), the image
//! augmentation pipeline, synthetic generators and k-fold splitting.

pub mod augment;
pub mod idx;
pub mod split;
pub mod synth;
pub mod ucr;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{invalid, Error, Result};
use crate::layers::{Targets, Task};
use crate::tensor::{Prng, Tensor};

pub use augment::{augment, AugmentConfig};
pub use idx::{read_idx, write_idx, IdxData, IdxPayload};
pub use split::{stratified_kfold, Fold};
pub use synth::{gen_oriented_bars, gen_shapes_seg, gen_synth_timeseries, rotate_bars_90};
pub use ucr::{parse_ucr, read_ucr_pair, read_ucr_tsv, write_ucr_tsv, TimeSeriesDataset};

/// A labelled sample set: inputs `[N, ...]`, one class label per sample and,
/// for segmentation, one label map of `H·W` entries per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub masks: Option<Vec<usize>>,
    pub num_classes: usize,
}

/// Images `[N, C, H, W]` with values in `[0, 1]`.
pub type ImageDataset = Samples;

impl Samples {
    pub fn new(inputs: Tensor, labels: Vec<usize>, masks: Option<Vec<usize>>, num_classes: usize) -> Result<Self> {
        let s = Self { inputs, labels, masks, num_classes };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.inputs.dim(0);
        if self.labels.len() != n {
            return invalid(format!("{} labels for {n} samples", self.labels.len()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return invalid(format!("label {bad} out of range for {} classes", self.num_classes));
        }
        if let Some(m) = &self.masks {
            if self.inputs.rank() != 4 || m.len() != n * self.pixels_per_sample() {
                return invalid(format!("{} mask entries do not match inputs {:?}", m.len(), self.inputs.shape()));
            }
            if let Some(&bad) = m.iter().find(|&&l| l >= self.num_classes) {
                return invalid(format!("mask label {bad} out of range for {} classes", self.num_classes));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample (inputs without the leading axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// `H·W` for image inputs.
    pub fn pixels_per_sample(&self) -> usize {
        let s = self.inputs.shape();
        if s.len() == 4 {
            s[2] * s[3]
        } else {
            0
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Samples> {
        let inputs = self.inputs.select(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let masks = self.masks.as_ref().map(|m| {
            let p = self.pixels_per_sample();
            indices.iter().flat_map(|&i| m[i * p..(i + 1) * p].iter().copied()).collect()
        });
        Ok(Samples { inputs, labels, masks, num_classes: self.num_classes })
    }

    pub fn targets(&self, task: Task) -> Result<Targets<'_>> {
        match task {
            Task::Segment => match &self.masks {
                Some(m) => Ok(Targets::Pixels(m)),
                None => invalid("segment task needs masks"),
            },
            _ => Ok(Targets::Classes(&self.labels)),
        }
    }

    /// Applies [`augment`] to every image (and mask) in place.
    pub fn augment(&mut self, cfg: &AugmentConfig, rng: &mut Prng) -> Result<()> {
        if self.inputs.rank() != 4 {
            return Ok(());
        }
        let s = self.inputs.shape().to_vec();
        let per = s[1] * s[2] * s[3];
        let p = self.pixels_per_sample();
        for i in 0..s[0] {
            let img = Tensor::new(s[1..].to_vec(), self.inputs.data()[i * per..(i + 1) * per].to_vec())?;
            let mask = self.masks.as_ref().map(|m| &m[i * p..(i + 1) * p]);
            let (out, out_mask) = augment(&img, mask, cfg, rng)?;
            self.inputs.data_mut()[i * per..(i + 1) * per].copy_from_slice(out.data());
            if let (Some(m), Some(om)) = (self.masks.as_mut(), out_mask) {
                m[i * p..(i + 1) * p].copy_from_slice(&om);
            }
        }
        Ok(())
    }
}

/// Which of the two on-disk dataset layouts a directory uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetLayout {
    /// `train-images.idx`, `train-labels.idx`, optional `train-masks.idx`, same for `test-`.
    Idx,
    /// `<NAME>_TRAIN.tsv` and `<NAME>_TEST.tsv`.
    Ucr { train: PathBuf, test: PathBuf },
}

pub fn detect_layout(dir: &Path) -> Result<DatasetLayout> {
    if dir.join("train-images.idx").is_file() {
        return Ok(DatasetLayout::Idx);
    }
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Validation(format!("cannot read dataset directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with("_TRAIN.tsv"))
        .collect();
    names.sort();
    if let Some(train) = names.into_iter().next() {
        let test = PathBuf::from(train.to_string_lossy().replace("_TRAIN.tsv", "_TEST.tsv"));
        if test.is_file() {
            return Ok(DatasetLayout::Ucr { train, test });
        }
        return invalid(format!("{} has no matching _TEST.tsv", train.display()));
    }
    invalid(format!("{} holds neither train-images.idx nor a *_TRAIN.tsv file", dir.display()))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    match read_idx(path)?.payload {
        IdxPayload::U8(v) => Ok(v.into_iter().map(usize::from).collect()),
        IdxPayload::F32(_) => Err(Error::Format(format!("{}: labels must be unsigned bytes", path.display()))),
    }
}

fn load_idx_split(dir: &Path, split: &str, need_masks: bool) -> Result<Samples> {
    let images = read_idx(&dir.join(format!("{split}-images.idx")))?;
    let mut tensor = images.to_tensor()?;
    if tensor.rank() == 3 {
        let s = tensor.shape().to_vec();
        tensor = tensor.reshape(&[s[0], 1, s[1], s[2]])?;
    }
    if tensor.rank() != 4 {
        return Err(Error::Format(format!("{split}-images.idx must be 3-D or 4-D, got {:?}", tensor.shape())));
    }
    let labels = read_labels(&dir.join(format!("{split}-labels.idx")))?;
    let mask_path = dir.join(format!("{split}-masks.idx"));
    let masks = if !need_masks {
        None
    } else if mask_path.is_file() {
        Some(read_labels(&mask_path)?)
    } else {
        return invalid(format!("segment task needs {}", mask_path.display()));
    };
    let max = labels.iter().chain(masks.iter().flatten()).copied().max().unwrap_or(0);
    Samples::new(tensor, labels, masks, max + 1)
}

/// Loads the train and test splits of a dataset directory. Class counts
/// are taken from `manifest.json` when present, else inferred.
pub fn load_dataset(dir: &Path, task: Task) -> Result<(Samples, Samples)> {
    let (mut train, mut test) = match detect_layout(dir)? {
        DatasetLayout::Idx => {
            (load_idx_split(dir, "train", task == Task::Segment)?, load_idx_split(dir, "test", task == Task::Segment)?)
        }
        DatasetLayout::Ucr { train, test } => {
            let (a, b) = read_ucr_pair(&train, &test)?;
            (a.to_samples()?, b.to_samples()?)
        }
    };
    let mut classes = train.num_classes.max(test.num_classes);
    let manifest = dir.join("manifest.json");
    if manifest.is_file() {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&manifest)?)?;
        if let Some(c) = v.get("num_classes").and_then(|c| c.as_u64()) {
            if (c as usize) < classes {
                return invalid(format!("manifest declares {c} classes but data uses {classes}"));
            }
            classes = c as usize;
        }
    }
    train.num_classes = classes;
    test.num_classes = classes;
    Ok((train, test))
}
