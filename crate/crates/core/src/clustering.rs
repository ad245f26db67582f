//! DBSCAN, two-means and the geometric median.

use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::seed;
use crate::vecspace::{median_in_place, squared_distance, GradientVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
}

pub const NOISE: i64 = -1;

/// Cluster id per input point (`NOISE` = -1) and the number of clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster as i64)
            .map(|(i, _)| i)
            .collect()
    }

    /// Renumber clusters in order of first appearance.
    fn canonicalize(mut self) -> Self {
        let mut map = vec![None; self.k];
        let mut next = 0i64;
        for l in self.labels.iter_mut() {
            if *l >= 0 {
                let slot = &mut map[*l as usize];
                let id = *slot.get_or_insert_with(|| {
                    next += 1;
                    next - 1
                });
                *l = id;
            }
        }
        self.k = next as usize;
        self
    }
}

/// Symmetric Euclidean distance matrix.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new<V: AsRef<GradientVector> + Sync>(points: &[V]) -> Self {
        let n = points.len();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let dists: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| {
                squared_distance(points[i].as_ref().as_slice(), points[j].as_ref().as_slice())
                    .sqrt()
            })
            .collect();
        let mut data = vec![0.0; n * n];
        for (&(i, j), d) in pairs.iter().zip(dists) {
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Number of distinct pairs evaluated to build the matrix.
    pub fn evaluations(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }
}

pub fn dbscan<V: AsRef<GradientVector> + Sync>(
    points: &[V],
    eps: f64,
    min_pts: usize,
) -> ClusterAssignment {
    dbscan_with(&DistanceMatrix::new(points), eps, min_pts)
}

/// Density-based clustering over a precomputed distance matrix.
///
/// A point is core iff at least `min_pts` points (itself included) lie within
/// `eps`. Border points join the first cluster that reaches them; clusters
/// are numbered by their lowest member index.
pub fn dbscan_with(dm: &DistanceMatrix, eps: f64, min_pts: usize) -> ClusterAssignment {
    let n = dm.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dm.get(i, j) <= eps).collect())
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels = vec![NOISE; n];
    let mut k = 0usize;
    for start in 0..n {
        if labels[start] != NOISE || !is_core[start] {
            continue;
        }
        let id = k as i64;
        k += 1;
        labels[start] = id;
        let mut queue = vec![start];
        while let Some(p) = queue.pop() {
            for &q in &neighbors[p] {
                if labels[q] == NOISE {
                    labels[q] = id;
                    if is_core[q] {
                        queue.push(q);
                    }
                }
            }
        }
    }
    ClusterAssignment { labels, k }.canonicalize()
}

/// k-distance heuristic: median over points of the distance to the
/// `min_pts`-th nearest neighbour (the point itself counts as the first),
/// times `factor`.
pub fn auto_eps<V: AsRef<GradientVector> + Sync>(
    points: &[V],
    min_pts: usize,
    factor: f64,
) -> Result<f64, ClusterError> {
    auto_eps_with(&DistanceMatrix::new(points), min_pts, factor)
}

pub fn auto_eps_with(
    dm: &DistanceMatrix,
    min_pts: usize,
    factor: f64,
) -> Result<f64, ClusterError> {
    let n = dm.len();
    if n < 2 {
        return Err(ClusterError::TooFewPoints {
            needed: 2,
            found: n,
        });
    }
    let rank = min_pts.clamp(1, n) - 1;
    let mut kdist: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| dm.get(i, j)).collect();
            row.sort_by(f64::total_cmp);
            row[rank]
        })
        .collect();
    let median = median_in_place(&mut kdist).expect("n >= 2");
    // a zero median means most points are exact duplicates; keep eps tight
    Ok((median * factor).max(f64::MIN_POSITIVE))
}

const KMEANS_MAX_ITERS: usize = 100;

/// Lloyd's algorithm with K = 2, initialised from the farthest pair.
///
/// `seed` only breaks exact ties between equally distant pairs. If every
/// point coincides the result is a single cluster.
pub fn kmeans2<V: AsRef<GradientVector> + Sync>(
    points: &[V],
    seed: u64,
) -> Result<ClusterAssignment, ClusterError> {
    Ok(kmeans2_traced(points, seed)?.0)
}

/// Distance evaluations made by one [`kmeans2`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KmeansTrace {
    /// Pairs compared to find the initial centroids.
    pub init_pairs: usize,
    /// Point-to-centroid evaluations over all Lloyd iterations.
    pub lloyd: usize,
    pub iterations: usize,
}

pub fn kmeans2_traced<V: AsRef<GradientVector> + Sync>(
    points: &[V],
    seed: u64,
) -> Result<(ClusterAssignment, KmeansTrace), ClusterError> {
    let n = points.len();
    if n < 2 {
        return Err(ClusterError::TooFewPoints {
            needed: 2,
            found: n,
        });
    }
    let dm = DistanceMatrix::new(points);
    let mut trace = KmeansTrace {
        init_pairs: dm.evaluations(),
        ..KmeansTrace::default()
    };
    let mut best = 0.0;
    let mut tied: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = dm.get(i, j);
            if d > best {
                best = d;
                tied.clear();
                tied.push((i, j));
            } else if d == best && best > 0.0 {
                tied.push((i, j));
            }
        }
    }
    if best == 0.0 {
        return Ok((
            ClusterAssignment {
                labels: vec![0; n],
                k: 1,
            },
            trace,
        ));
    }
    let (a, b) = if tied.len() == 1 {
        tied[0]
    } else {
        let mut rng = seed::rng_for(seed, &[seed::stream::KMEANS]);
        tied[rng.random_range(0..tied.len())]
    };

    let dim = points[0].as_ref().dim();
    let mut centroids = [
        points[a].as_ref().as_slice().to_vec(),
        points[b].as_ref().as_slice().to_vec(),
    ];
    let mut labels = vec![-1i64; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let next: Vec<i64> = points
            .iter()
            .map(|p| {
                let p = p.as_ref().as_slice();
                let d0 = squared_distance(p, &centroids[0]);
                let d1 = squared_distance(p, &centroids[1]);
                if d1 < d0 {
                    1
                } else {
                    0
                }
            })
            .collect();
        trace.lloyd += 2 * n;
        trace.iterations += 1;
        if next == labels {
            break;
        }
        labels = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64]> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c as i64)
                .map(|(p, _)| p.as_ref().as_slice())
                .collect();
            if members.is_empty() {
                continue;
            }
            let inv = 1.0 / members.len() as f64;
            let mut acc = vec![0.0; dim];
            for m in &members {
                for (x, v) in acc.iter_mut().zip(m.iter()) {
                    *x += v;
                }
            }
            acc.iter_mut().for_each(|x| *x *= inv);
            *centroid = acc;
        }
    }
    let k = if labels.iter().all(|&l| l == labels[0]) {
        1
    } else {
        2
    };
    let assignment = ClusterAssignment { labels, k: 2 }.canonicalize();
    debug_assert_eq!(assignment.k, k);
    Ok((assignment, trace))
}

const WEISZFELD_MAX_ITERS: usize = 200;

/// Weiszfeld iteration for the point minimising the sum of Euclidean
/// distances to `points`.
pub fn geometric_median<V: AsRef<GradientVector>>(points: &[V], tol: f64) -> GradientVector {
    assert!(!points.is_empty(), "geometric median of an empty set");
    if points.len() == 1 {
        return points[0].as_ref().clone();
    }
    let dim = points[0].as_ref().dim();
    let mut y = GradientVector::mean(points.iter().map(|p| p.as_ref()))
        .expect("nonempty, equal dimensions")
        .into_inner();
    for _ in 0..WEISZFELD_MAX_ITERS {
        let mut num = vec![0.0; dim];
        let mut denom = 0.0;
        for p in points {
            let p = p.as_ref();
            let d = squared_distance(p.as_slice(), &y).sqrt();
            if d < tol {
                return p.clone();
            }
            let w = 1.0 / d;
            denom += w;
            for (acc, v) in num.iter_mut().zip(p.iter()) {
                *acc += w * v;
            }
        }
        num.iter_mut().for_each(|v| *v /= denom);
        let moved = squared_distance(&num, &y).sqrt();
        y = num;
        if moved < tol {
            break;
        }
    }
    if let Some(p) = points
        .iter()
        .find(|p| squared_distance(p.as_ref().as_slice(), &y).sqrt() < tol)
    {
        return p.as_ref().clone();
    }
    GradientVector::new(y).expect("convex combination of finite points")
}

/// Sum of Euclidean distances from `y` to every point.
pub fn distance_sum<V: AsRef<GradientVector>>(points: &[V], y: &GradientVector) -> f64 {
    points
        .iter()
        .map(|p| squared_distance(p.as_ref().as_slice(), y.as_slice()).sqrt())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[&[f64]]) -> Vec<GradientVector> {
        rows.iter()
            .map(|r| GradientVector::new(r.to_vec()).unwrap())
            .collect()
    }

    fn line(xs: &[f64]) -> Vec<GradientVector> {
        xs.iter()
            .map(|&x| GradientVector::new(vec![x]).unwrap())
            .collect()
    }

    #[test]
    fn dbscan_examples() {
        let a = dbscan(&line(&[0.0, 0.1, 0.2, 5.0]), 0.3, 2);
        assert_eq!(a.labels, vec![0, 0, 0, NOISE]);
        assert_eq!(a.k, 1);
        assert_eq!(dbscan(&line(&[3.0]), 0.01, 1).labels, vec![0]);
        let a = dbscan(&line(&[0.0, 100.0]), 1e-6, 2);
        assert_eq!(a.labels, vec![NOISE, NOISE]);
        assert_eq!(a.k, 0);
    }

    #[test]
    fn dbscan_numbers_clusters_by_first_member() {
        // point 0 is a border of the right-hand cluster, which must get id 0
        let a = dbscan(&line(&[10.9, -5.0, -5.1, -5.05, 11.0, 11.1, 11.2]), 0.15, 3);
        assert_eq!(a.labels, vec![0, 1, 1, 1, 0, 0, 0]);
        assert_eq!(a.k, 2);
    }

    #[test]
    fn auto_eps_examples() {
        assert_eq!(auto_eps(&line(&[0.0, 1.0, 2.0]), 2, 1.0).unwrap(), 1.0);
        assert_eq!(auto_eps(&line(&[0.0, 2.5]), 2, 1.0).unwrap(), 2.5);
        let e = auto_eps(&line(&[0.0, 0.1, 0.2, 10.0]), 2, 1.0).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
        assert_eq!(
            auto_eps(&line(&[1.0]), 2, 1.0),
            Err(ClusterError::TooFewPoints {
                needed: 2,
                found: 1
            })
        );
        let e2 = auto_eps(&line(&[0.0, 1.0, 2.0]), 2, 2.0).unwrap();
        assert_eq!(e2, 2.0);
    }

    #[test]
    fn kmeans2_examples() {
        let a = kmeans2(&line(&[0.0, 0.1, 5.0, 5.1]), 0).unwrap();
        assert_eq!(a.labels, vec![0, 0, 1, 1]);
        let a = kmeans2(&line(&[2.0, 2.0, 2.0]), 0).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0]);
        assert_eq!(a.k, 1);
        let a = kmeans2(
            &pts(&[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 0.0], &[10.0, 1.0]]),
            3,
        )
        .unwrap();
        assert_eq!(a.labels, vec![0, 0, 1, 1]);
        assert!(kmeans2(&line(&[1.0]), 0).is_err());
    }

    #[test]
    fn geometric_median_trivial_cases() {
        let p = pts(&[&[1.0, -2.0]]);
        assert_eq!(geometric_median(&p, 1e-6), p[0]);
        let set = pts(&[&[1.0, 1.0], &[1.0, 1.0], &[4.0, 5.0]]);
        assert_eq!(geometric_median(&set, 1e-6), set[0]);
    }
}
