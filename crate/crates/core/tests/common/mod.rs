//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use mudhog::baselines::krum_scores;
use mudhog::clustering::{dbscan, distance_sum, geometric_median, kmeans2, NOISE};
use mudhog::vecspace::{coordinate_median, GradientVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gv(v: &[f64]) -> GradientVector {
    GradientVector::new(v.to_vec()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dist(a: &GradientVector, b: &GradientVector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Points drawn from a few tight groups plus scattered singles, so both
/// clusters and noise show up.
pub fn clumpy_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<GradientVector> {
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            if rng.random_bool(0.25) {
                gv(&(0..dim)
                    .map(|_| rng.random_range(-8.0..8.0))
                    .collect::<Vec<_>>())
            } else {
                let c = &centers[rng.random_range(0..centers.len())];
                gv(&c
                    .iter()
                    .map(|x| x + rng.random_range(-0.6..0.6))
                    .collect::<Vec<_>>())
            }
        })
        .collect()
}

/// Core points, their density-connected components and the noise set, all
/// computed from the full reachability closure.
pub struct DbscanOracle {
    pub core: Vec<bool>,
    /// Component id per core point.
    pub component: Vec<Option<usize>>,
    pub noise: Vec<bool>,
    pub within: Vec<Vec<bool>>,
}

pub fn dbscan_oracle(points: &[GradientVector], eps: f64, min_pts: usize) -> DbscanOracle {
    let n = points.len();
    let within: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dist(&points[i], &points[j]) <= eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = within
        .iter()
        .map(|r| r.iter().filter(|&&b| b).count() >= min_pts)
        .collect();
    // transitive closure of the core-core adjacency
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| core[i] && core[j] && within[i][j]).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut component = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if core[i] && component[i].is_none() {
            for j in 0..n {
                if reach[i][j] || j == i {
                    component[j] = Some(next);
                }
            }
            next += 1;
        }
    }
    let noise = (0..n)
        .map(|i| !core[i] && !(0..n).any(|j| core[j] && within[i][j]))
        .collect();
    DbscanOracle {
        core,
        component,
        noise,
        within,
    }
}

/// Checks a `dbscan` result against the oracle; returns a description of
/// the first disagreement.
pub fn check_dbscan(points: &[GradientVector], eps: f64, min_pts: usize) -> Result<(), String> {
    let got = dbscan(points, eps, min_pts);
    let o = dbscan_oracle(points, eps, min_pts);
    let n = points.len();
    for i in 0..n {
        if o.noise[i] != (got.labels[i] == NOISE) {
            return Err(format!("point {i}: noise mismatch"));
        }
        for j in 0..n {
            if let (Some(a), Some(b)) = (o.component[i], o.component[j]) {
                if (a == b) != (got.labels[i] == got.labels[j]) {
                    return Err(format!("core points {i},{j}: grouping mismatch"));
                }
            }
        }
        if !o.core[i] && !o.noise[i] {
            // a border point must sit in the cluster of some core neighbour
            let ok = (0..n).any(|j| o.core[j] && o.within[i][j] && got.labels[j] == got.labels[i]);
            if !ok {
                return Err(format!(
                    "border point {i} not attached to a neighbouring core"
                ));
            }
        }
    }
    let components = o.component.iter().flatten().max().map_or(0, |&c| c + 1);
    if components != got.k {
        return Err(format!("{} clusters, oracle has {components}", got.k));
    }
    Ok(())
}

pub fn wcss(points: &[GradientVector], labels: &[i64]) -> f64 {
    let mut total = 0.0;
    for c in [0i64, 1] {
        let members: Vec<&GradientVector> = points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let centroid = GradientVector::mean(members.iter().copied()).unwrap();
        total += members
            .iter()
            .map(|p| dist(p, &centroid).powi(2))
            .sum::<f64>();
    }
    total
}

/// Optimal WCSS over all nonempty 2-partitions, and the best labels.
pub fn exhaustive_two_partition(points: &[GradientVector]) -> (f64, Vec<i64>) {
    let n = points.len();
    let mut best = (f64::INFINITY, vec![0; n]);
    // fix point 0 in cluster 0 to skip mirrored partitions
    for mask in 1u32..(1 << (n - 1)) {
        let labels: Vec<i64> = (0..n)
            .map(|i| {
                if i > 0 && mask >> (i - 1) & 1 == 1 {
                    1
                } else {
                    0
                }
            })
            .collect();
        let w = wcss(points, &labels);
        if w < best.0 {
            best = (w, labels);
        }
    }
    best
}

/// Two groups with a random offset, so some instances are well separated
/// and some are not.
pub fn two_groups(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<GradientVector> {
    let offset: Vec<f64> = (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect();
    (0..n)
        .map(|i| {
            let shift = if i % 2 == 0 { 0.0 } else { 1.0 };
            gv(&(0..dim)
                .map(|d| shift * offset[d] + rng.random_range(-1.0..1.0))
                .collect::<Vec<_>>())
        })
        .collect()
}

/// Whether the optimal partition's groups are farther apart than either
/// group is wide.
pub fn well_separated(points: &[GradientVector], labels: &[i64]) -> bool {
    let n = points.len();
    let mut widest: f64 = 0.0;
    let mut closest = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(&points[i], &points[j]);
            if labels[i] == labels[j] {
                widest = widest.max(d);
            } else {
                closest = closest.min(d);
            }
        }
    }
    closest > widest
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KmeansCheck {
    /// Well separated and optimal.
    Exact,
    /// Ambiguous instance within 5% of the optimum.
    Near,
    /// Ambiguous instance where Lloyd's stopped in a worse local optimum.
    LocalOptimum(f64),
}

/// Compares `kmeans2` with the exhaustive optimum. Well-separated instances
/// must match exactly; anything else is classified.
pub fn check_kmeans(points: &[GradientVector], seed: u64) -> Result<KmeansCheck, String> {
    let got = kmeans2(points, seed).map_err(|e| e.to_string())?;
    let w = wcss(points, &got.labels);
    let (opt, labels) = exhaustive_two_partition(points);
    if well_separated(points, &labels) {
        if (w - opt).abs() > 1e-9 * opt.max(1.0) {
            return Err(format!(
                "well-separated instance: wcss {w} vs optimum {opt}"
            ));
        }
        return Ok(KmeansCheck::Exact);
    }
    lloyd_fixed_point(points, &got.labels)?;
    if w <= 1.05 * opt + 1e-12 {
        Ok(KmeansCheck::Near)
    } else {
        Ok(KmeansCheck::LocalOptimum(w / opt))
    }
}

/// Every point is at least as close to its own centroid as to the other one.
pub fn lloyd_fixed_point(points: &[GradientVector], labels: &[i64]) -> Result<(), String> {
    let centroid = |c: i64| {
        let members: Vec<&GradientVector> = points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| p)
            .collect();
        GradientVector::mean(members.iter().copied()).ok()
    };
    let (Some(a), Some(b)) = (centroid(0), centroid(1)) else {
        return Ok(());
    };
    for (i, (p, &l)) in points.iter().zip(labels).enumerate() {
        let (own, other) = if l == 0 { (&a, &b) } else { (&b, &a) };
        if dist(p, own) > dist(p, other) + 1e-9 {
            return Err(format!("point {i} is closer to the other centroid"));
        }
    }
    Ok(())
}

/// Runs `cases` random instances; returns (exact, near, local optima).
pub fn kmeans_suite(seed: u64, cases: u64) -> Result<(usize, usize, usize), String> {
    let mut r = rng(seed);
    let mut counts = (0, 0, 0);
    for case in 0..cases {
        let n = r.random_range(2..=10);
        let dim = r.random_range(1..=3);
        let points = two_groups(&mut r, n, dim);
        match check_kmeans(&points, case).map_err(|e| format!("case {case}: {e}"))? {
            KmeansCheck::Exact => counts.0 += 1,
            KmeansCheck::Near => counts.1 += 1,
            KmeansCheck::LocalOptimum(_) => counts.2 += 1,
        }
    }
    Ok(counts)
}

/// Runs `cases` random DBSCAN instances against the oracle.
pub fn dbscan_suite(seed: u64, cases: usize) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..cases {
        let n = r.random_range(2..=12);
        let dim = r.random_range(1..=3);
        let points = clumpy_points(&mut r, n, dim);
        let min_pts = r.random_range(1..=4);
        let eps = if r.random_bool(0.5) {
            mudhog::clustering::auto_eps(&points, min_pts, 1.0).unwrap()
        } else {
            r.random_range(0.1..3.0)
        };
        check_dbscan(&points, eps, min_pts)
            .map_err(|e| format!("case {case} (n={n}, eps={eps}, min_pts={min_pts}): {e}"))?;
    }
    Ok(())
}

pub fn check_median(points: &[GradientVector]) -> Result<(), String> {
    let got = coordinate_median(points).map_err(|e| e.to_string())?;
    for d in 0..points[0].dim() {
        let mut col: Vec<f64> = points.iter().map(|p| p.as_slice()[d]).collect();
        col.sort_by(f64::total_cmp);
        let m = col.len();
        let want = if m % 2 == 1 {
            col[m / 2]
        } else {
            0.5 * (col[m / 2 - 1] + col[m / 2])
        };
        if (got.as_slice()[d] - want).abs() > 1e-12 {
            return Err(format!("coordinate {d}: {} vs {want}", got.as_slice()[d]));
        }
    }
    Ok(())
}

pub fn check_krum(points: &[GradientVector], f: usize) -> Result<(), String> {
    let n = points.len();
    let got = krum_scores(points, f).map_err(|e| e.to_string())?;
    for i in 0..n {
        let mut others: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| dist(&points[i], &points[j]).powi(2))
            .collect();
        others.sort_by(f64::total_cmp);
        let want: f64 = others[..n - f - 2].iter().sum();
        if (got[i] - want).abs() > 1e-9 * want.max(1.0) {
            return Err(format!("client {i}: score {} vs {want}", got[i]));
        }
    }
    Ok(())
}

/// Objective gap between `geometric_median` and a grid search refined
/// around the best cell, for 2-D inputs.
pub fn geomed_gap(points: &[GradientVector]) -> f64 {
    let got = geometric_median(points, 1e-9);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p.as_slice()[d]);
            hi[d] = hi[d].max(p.as_slice()[d]);
        }
    }
    let mut best = (f64::INFINITY, [0.0; 2]);
    let steps = 60;
    for _ in 0..4 {
        for a in 0..=steps {
            for b in 0..=steps {
                let y = [
                    lo[0] + (hi[0] - lo[0]) * a as f64 / steps as f64,
                    lo[1] + (hi[1] - lo[1]) * b as f64 / steps as f64,
                ];
                let s = distance_sum(points, &gv(&y));
                if s < best.0 {
                    best = (s, y);
                }
            }
        }
        // zoom into the cells around the best point
        for d in 0..2 {
            let w = (hi[d] - lo[d]) / steps as f64 * 2.0;
            lo[d] = best.1[d] - w;
            hi[d] = best.1[d] + w;
        }
    }
    distance_sum(points, &got) - best.0
}
