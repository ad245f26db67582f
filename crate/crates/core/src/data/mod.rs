//! Datasets, read-only views over them, and the transforms used to build
//! attacker and unreliable-client data.

mod idx;
mod partition;
mod synthetic;
mod transform;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use idx::{
    decode_idx_images, decode_idx_labels, encode_idx_images, encode_idx_labels, load_idx,
    maybe_gunzip, IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use partition::{dirichlet_partition, Partition};
pub use synthetic::synthetic_blobs;
pub use transform::{flip_labels, gaussian_blur, gaussian_kernel, subsample, LabelMapping};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: needed {needed} bytes, have {available}")]
    TruncatedFile { needed: usize, available: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: u8, classes: usize },
    #[error("corrupt gzip stream: {0}")]
    Gzip(std::io::Error),
    #[error("transform would produce an empty view")]
    EmptyView,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Synthetic,
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion-mnist",
            DatasetName::Synthetic => "synthetic",
        })
    }
}

/// Labelled images stored row-major, pixel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: DatasetName,
    rows: usize,
    cols: usize,
    n_classes: usize,
    features: Vec<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        name: DatasetName,
        (rows, cols): (usize, usize),
        n_classes: usize,
        features: Vec<f32>,
        labels: Vec<u8>,
    ) -> Result<Self, DataError> {
        let dim = rows * cols;
        if dim == 0 {
            return Err(DataError::InvalidArgument("zero-sized images".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(DataError::CountMismatch {
                images: features.len() / dim,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(DataError::InvalidLabel {
                label,
                classes: n_classes,
            });
        }
        if features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::InvalidArgument(
                "pixel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            name,
            rows,
            cols,
            n_classes,
            features,
            labels,
        })
    }

    pub fn name(&self) -> DatasetName {
        self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Copy of the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            features.extend_from_slice(self.image(i));
        }
        Dataset {
            name: self.name,
            rows: self.rows,
            cols: self.cols,
            n_classes: self.n_classes,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// FNV-1a over pixel bits and labels.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for v in &self.features {
            v.to_bits().to_le_bytes().into_iter().for_each(&mut eat);
        }
        self.labels.iter().copied().for_each(eat);
        h
    }
}

/// Read-only view over a shared [`Dataset`]: a subset of samples, their
/// (possibly relabelled) labels, and replacement pixels for transformed
/// images. The base dataset is never mutated.
#[derive(Debug, Clone)]
pub struct DataView {
    base: Arc<Dataset>,
    indices: Vec<usize>,
    labels: Vec<u8>,
    replaced: Arc<BTreeMap<usize, Box<[f32]>>>,
}

impl DataView {
    pub fn full(base: Arc<Dataset>) -> Self {
        let indices: Vec<usize> = (0..base.len()).collect();
        Self::from_indices(base, indices)
    }

    pub fn from_indices(base: Arc<Dataset>, indices: Vec<usize>) -> Self {
        let labels = indices.iter().map(|&i| base.label(i)).collect();
        Self {
            base,
            indices,
            labels,
            replaced: Arc::new(BTreeMap::new()),
        }
    }

    pub fn base(&self) -> &Arc<Dataset> {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn n_classes(&self) -> usize {
        self.base.n_classes()
    }

    pub fn base_index(&self, pos: usize) -> usize {
        self.indices[pos]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn label(&self, pos: usize) -> u8 {
        self.labels[pos]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self, pos: usize) -> &[f32] {
        let i = self.indices[pos];
        match self.replaced.get(&i) {
            Some(px) => px,
            None => self.base.image(i),
        }
    }

    pub fn is_replaced(&self, pos: usize) -> bool {
        self.replaced.contains_key(&self.indices[pos])
    }

    pub fn replaced_count(&self) -> usize {
        self.indices
            .iter()
            .filter(|i| self.replaced.contains_key(i))
            .count()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.n_classes()];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// Feature matrix and labels for the samples at `positions`.
    pub fn batch(&self, positions: &[usize]) -> (Array2<f64>, Vec<u8>) {
        let dim = self.dim();
        let mut x = Array2::<f64>::zeros((positions.len(), dim));
        for (mut row, &p) in x.rows_mut().into_iter().zip(positions) {
            for (dst, &src) in row.iter_mut().zip(self.features(p)) {
                *dst = src as f64;
            }
        }
        let y = positions.iter().map(|&p| self.labels[p]).collect();
        (x, y)
    }

    fn with_parts(
        &self,
        indices: Vec<usize>,
        labels: Vec<u8>,
        replaced: Arc<BTreeMap<usize, Box<[f32]>>>,
    ) -> Self {
        Self {
            base: Arc::clone(&self.base),
            indices,
            labels,
            replaced,
        }
    }
}
