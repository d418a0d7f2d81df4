//! Deterministic synthetic data and the on-disk dataset format.

pub mod container;
mod points;
mod seg;

use std::path::Path;

use serde::Serialize;

pub use container::{ContainerKind, Entry};
pub use points::{adjusted_rand_index, gen_point_cloud, gen_point_cloud_with_centers, PointCloudSpec};
pub use seg::{gen_toy_seg, SegSample, ToySegDatasetSpec, ToySegSpec, MAX_SIDE, PALETTE, SEG_FEATURES};

use crate::error::{Error, Result};

/// An ordered list of labeled feature matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<SegSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetDigest {
    pub samples: usize,
    pub rows: usize,
    pub feature_dim: usize,
    pub class_histogram: Vec<usize>,
}

impl Dataset {
    pub fn digest(&self) -> DatasetDigest {
        let mut hist = Vec::new();
        for s in &self.samples {
            for &l in &s.labels {
                if hist.len() <= l as usize {
                    hist.resize(l as usize + 1, 0);
                }
                hist[l as usize] += 1;
            }
        }
        DatasetDigest {
            samples: self.samples.len(),
            rows: self.samples.iter().map(SegSample::len).sum(),
            feature_dim: self.samples.first().map_or(0, |s| s.raw_features.cols()),
            class_histogram: hist,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.samples
            .iter()
            .flat_map(|s| s.labels.iter())
            .max()
            .map_or(0, |&m| m as usize + 1)
    }
}

pub fn gen_toy_seg_dataset(spec: &ToySegDatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let samples = (0..spec.num_images)
        .map(|i| gen_toy_seg(&spec.image_spec(seed, i)))
        .collect::<Result<_>>()?;
    Ok(Dataset { samples })
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let entries: Vec<Entry> = ds
        .samples
        .iter()
        .flat_map(|s| [Entry::Matrix(s.raw_features.clone()), Entry::Labels(s.labels.clone())])
        .collect();
    container::encode(ContainerKind::Dataset, &entries)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (kind, entries) = container::decode(bytes)?;
    if kind != ContainerKind::Dataset {
        return Err(Error::Format(format!("expected a dataset container, found {kind:?}")));
    }
    if entries.len() % 2 != 0 {
        return Err(Error::Format("dataset entries must come in (features, labels) pairs".into()));
    }
    let mut samples = Vec::with_capacity(entries.len() / 2);
    let mut it = entries.into_iter();
    while let (Some(a), Some(b)) = (it.next(), it.next()) {
        match (a, b) {
            (Entry::Matrix(m), Entry::Labels(l)) => {
                samples.push(SegSample::new(m, l).map_err(|e| Error::Format(e.to_string()))?)
            }
            _ => return Err(Error::Format("dataset entry pair is not (matrix, labels)".into())),
        }
    }
    Ok(Dataset { samples })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}
