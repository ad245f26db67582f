use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{DataError, DataView};
use crate::seed;

/// Source label -> target label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<(u8, u8)>", into = "Vec<(u8, u8)>")]
pub struct LabelMapping(BTreeMap<u8, u8>);

impl LabelMapping {
    pub fn new(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        Self(pairs.into_iter().collect())
    }

    pub fn get(&self, label: u8) -> Option<u8> {
        self.0.get(&label).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.keys().copied()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u8, u8)> + '_ {
        self.0.iter().map(|(&s, &t)| (s, t))
    }

    pub fn validate(&self, n_classes: usize) -> Result<(), DataError> {
        for (s, t) in self.pairs() {
            for label in [s, t] {
                if label as usize >= n_classes {
                    return Err(DataError::InvalidLabel {
                        label,
                        classes: n_classes,
                    });
                }
            }
        }
        Ok(())
    }
}

impl From<Vec<(u8, u8)>> for LabelMapping {
    fn from(pairs: Vec<(u8, u8)>) -> Self {
        Self::new(pairs)
    }
}

impl From<LabelMapping> for Vec<(u8, u8)> {
    fn from(m: LabelMapping) -> Self {
        m.0.into_iter().collect()
    }
}

pub fn flip_labels(view: &DataView, mapping: &LabelMapping) -> DataView {
    let labels = view
        .labels
        .iter()
        .map(|&l| mapping.get(l).unwrap_or(l))
        .collect();
    view.with_parts(view.indices.clone(), labels, Arc::clone(&view.replaced))
}

/// Normalised `size × size` Gaussian kernel, row-major.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let mut kernel = Vec::with_capacity(size * size);
    for a in &taps {
        for b in &taps {
            kernel.push(a * b);
        }
    }
    kernel
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn blur_image(px: &[f32], rows: usize, cols: usize, kernel: &[f64], size: usize) -> Box<[f32]> {
    let half = (size / 2) as isize;
    let mut out = vec![0f32; px.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0f64;
            for kr in 0..size {
                let rr = reflect(r as isize + kr as isize - half, rows);
                for kc in 0..size {
                    let cc = reflect(c as isize + kc as isize - half, cols);
                    acc += kernel[kr * size + kc] * px[rr * cols + cc] as f64;
                }
            }
            out[r * cols + c] = (acc as f32).clamp(0.0, 1.0);
        }
    }
    out.into_boxed_slice()
}

/// Blur a seed-chosen `fraction` of the view's images with a normalised
/// Gaussian kernel, reflect-padded at the borders.
pub fn gaussian_blur(
    view: &DataView,
    fraction: f64,
    kernel_size: usize,
    sigma: f64,
    seed: u64,
) -> Result<DataView, DataError> {
    if kernel_size.is_multiple_of(2) {
        return Err(DataError::InvalidArgument(format!(
            "kernel size {kernel_size} must be odd"
        )));
    }
    if !(0.0..=1.0).contains(&fraction) || !(sigma > 0.0) {
        return Err(DataError::InvalidArgument(
            "blur needs fraction in [0, 1] and sigma > 0".into(),
        ));
    }
    let n = view.len();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Ok(view.clone());
    }
    let (rows, cols) = view.base.shape();
    let kernel = gaussian_kernel(kernel_size, sigma);
    let mut rng = seed::rng_for(seed, &[seed::stream::BLUR]);
    let mut chosen = index::sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    let mut replaced = (*view.replaced).clone();
    for pos in chosen {
        let blurred = blur_image(view.features(pos), rows, cols, &kernel, kernel_size);
        replaced.insert(view.indices[pos], blurred);
    }
    Ok(view.with_parts(
        view.indices.clone(),
        view.labels.clone(),
        Arc::new(replaced),
    ))
}

/// Uniform sample of `round(fraction · len)` samples without replacement.
pub fn subsample(view: &DataView, fraction: f64, seed: u64) -> Result<DataView, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "subsample fraction {fraction} outside (0, 1]"
        )));
    }
    let n = view.len();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(DataError::EmptyView);
    }
    let mut rng = seed::rng_for(seed, &[seed::stream::SUBSAMPLE]);
    let mut positions = index::sample(&mut rng, n, k).into_vec();
    positions.sort_unstable();
    let indices = positions.iter().map(|&p| view.indices[p]).collect();
    let labels = positions.iter().map(|&p| view.labels[p]).collect();
    Ok(view.with_parts(indices, labels, Arc::clone(&view.replaced)))
}
