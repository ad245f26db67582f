use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, Dataset, DatasetName};
use crate::seed;

const LOW: f64 = 0.25;
const HIGH: f64 = 0.75;

/// Cells per image side (or per row for non-square dims).
const GRID: usize = 4;

/// Gaussian blobs around random blocky binary patterns.
///
/// Square `dim`s are laid out as square images and split into a 4x4 grid of
/// blocks; other dims form a single row split into 16 runs. Each class mean
/// sets every block to 0.25 or 0.75, redrawn until it is at least 1.0 away
/// from every earlier mean, so blurring a sample keeps its class pattern.
/// Samples are clamped to [0, 1] and interleaved by class.
pub fn synthetic_blobs(
    n_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n_classes == 0 || n_classes > 256 || per_class == 0 || !(spread >= 0.0) {
        return Err(DataError::InvalidArgument(
            "synthetic blobs need 1..=256 classes, per_class > 0, spread >= 0".into(),
        ));
    }
    // four differing coordinates give separation 1.0
    if dim < 4 {
        return Err(DataError::InvalidArgument(format!(
            "dim {dim} too small for unit-separated means"
        )));
    }
    let side = (dim as f64).sqrt().round() as usize;
    let square = side * side == dim;
    let cell_of: Vec<usize> = if square {
        let b = side.div_ceil(GRID);
        (0..dim)
            .map(|k| (k / side / b) * GRID + (k % side) / b)
            .collect()
    } else {
        let b = dim.div_ceil(GRID * GRID);
        (0..dim).map(|k| k / b).collect()
    };
    let n_cells = cell_of.iter().max().map_or(0, |&c| c + 1);
    let mut rng = seed::rng_for(seed, &[seed::stream::SYNTHETIC]);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    let mut attempts = 0usize;
    while means.len() < n_classes {
        attempts += 1;
        if attempts > 10_000 {
            return Err(DataError::InvalidArgument(format!(
                "cannot place {n_classes} separated means in {dim} dimensions"
            )));
        }
        let cells: Vec<f64> = (0..n_cells)
            .map(|_| if rng.random_bool(0.5) { HIGH } else { LOW })
            .collect();
        let cand: Vec<f64> = cell_of.iter().map(|&c| cells[c]).collect();
        let separated = means.iter().all(|m| {
            m.iter()
                .zip(&cand)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                >= 1.0
        });
        if separated {
            means.push(cand);
        }
    }

    let noise = Normal::new(0.0, spread.max(f64::MIN_POSITIVE))
        .map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    let mut features = Vec::with_capacity(n_classes * per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for _ in 0..per_class {
        for (class, mean) in means.iter().enumerate() {
            for &m in mean {
                let v = if spread > 0.0 {
                    m + noise.sample(&mut rng)
                } else {
                    m
                };
                features.push(v.clamp(0.0, 1.0) as f32);
            }
            labels.push(class as u8);
        }
    }
    let shape = if square { (side, side) } else { (1, dim) };
    Dataset::new(DatasetName::Synthetic, shape, n_classes, features, labels)
}
