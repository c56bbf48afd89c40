//! Stage I: k-means over the fused features of both graphs and per-cluster
//! quota sampling of pseudo seeds.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::sim::{greedy_into, SeedSet, SimMatrix, Stage};

/// Cluster labels over the concatenation `[entities of G1; entities of G2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        self.labels.iter().for_each(|&l| s[l] += 1);
        s
    }

    /// `entity_index cluster_id` per line.
    pub fn to_text(&self) -> String {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i} {l}\n"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterQuota {
    pub counts: Vec<usize>,
    /// Requested total `n`.
    pub total: usize,
}

/// Stacks the feature rows of both graphs into one point set.
pub fn stack_points(f1: &Matrix, f2: &Matrix) -> Matrix {
    assert_eq!(f1.cols(), f2.cols());
    let mut data = Vec::with_capacity((f1.rows() + f2.rows()) * f1.cols());
    data.extend_from_slice(f1.as_slice());
    data.extend_from_slice(f2.as_slice());
    Matrix::from_vec(f1.rows() + f2.rows(), f1.cols(), data)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = points.iter_rows().map(|p| sq_dist(p, points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(chosen));
        for (i, p) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(chosen)));
        }
    }
    centroids
}

fn update_centroids(points: &Matrix, labels: &[usize], k: usize) -> (Matrix, Vec<usize>) {
    let mut centroids = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter_rows().zip(labels) {
        counts[l] += 1;
        for (c, v) in centroids.row_mut(l).iter_mut().zip(p) {
            *c += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            centroids.row_mut(c).iter_mut().for_each(|v| *v /= count as f64);
        }
    }
    (centroids, counts)
}

fn objective(points: &Matrix, labels: &[usize], centroids: &Matrix) -> f64 {
    points
        .iter_rows()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, centroids.row(l)))
        .sum()
}

/// Lloyd's algorithm with k-means++ seeding. Stops when no label changes or
/// after `max_iter` iterations. An empty cluster takes over the point farthest
/// from its own centroid (among clusters with more than one member).
pub fn kmeans(points: &Matrix, k: usize, max_iter: usize, rng_seed: u64) -> Result<ClusterAssignment> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::TooFewPoints { k, points: n });
    }
    let mut rng = rng::stream(rng_seed, rng::ids::KMEANS);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels: Vec<usize> = points.iter_rows().map(|p| nearest(p, &centroids).0).collect();
    let mut trace = Vec::new();

    for iter in 0..max_iter.max(1) {
        if iter > 0 {
            let mut changed = false;
            for (i, p) in points.iter_rows().enumerate() {
                let l = nearest(p, &centroids).0;
                if l != labels[i] {
                    labels[i] = l;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let (mut c, mut counts) = update_centroids(points, &labels, k);
        while let Some(empty) = counts.iter().position(|&m| m == 0) {
            let mut far = None;
            let mut far_d = f64::NEG_INFINITY;
            for (i, p) in points.iter_rows().enumerate() {
                if counts[labels[i]] > 1 {
                    let d = sq_dist(p, c.row(labels[i]));
                    if d > far_d {
                        far_d = d;
                        far = Some(i);
                    }
                }
            }
            let i = far.expect("k <= n guarantees a donor cluster");
            counts[labels[i]] -= 1;
            labels[i] = empty;
            counts[empty] = 1;
            let refreshed = update_centroids(points, &labels, k);
            c = refreshed.0;
            counts = refreshed.1;
        }
        centroids = c;
        trace.push(objective(points, &labels, &centroids));
    }

    Ok(ClusterAssignment {
        k,
        labels,
        centroids,
        objective_trace: trace,
    })
}

/// Mean silhouette coefficient with Euclidean distances. Points in singleton
/// clusters, and points with `a = b = 0`, score zero.
pub fn silhouette(points: &Matrix, labels: &[usize], k: usize) -> f64 {
    let n = points.rows();
    if n == 0 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Above this many points the silhouette is scored on a fixed random subsample.
pub const SILHOUETTE_SAMPLE: usize = 1000;

/// Picks the cluster count in `range` (inclusive) with the highest mean
/// silhouette; ties go to the smaller count.
pub fn select_k(points: &Matrix, range: (usize, usize), rng_seed: u64) -> Result<usize> {
    let n = points.rows();
    if n < 5 {
        return Err(Error::TooFewPoints { k: range.1, points: n });
    }
    let (lo, hi) = range;
    if lo < 2 || lo > hi {
        return Err(Error::Config(format!("invalid cluster range {lo}..={hi}")));
    }
    let subset: Option<Vec<usize>> = (n > SILHOUETTE_SAMPLE).then(|| {
        let mut rng = rng::stream(rng_seed, rng::ids::SILHOUETTE);
        let mut idx = sample(&mut rng, n, SILHOUETTE_SAMPLE).into_vec();
        idx.sort_unstable();
        idx
    });
    let scored_points = subset.as_ref().map(|idx| points.select_rows(idx));

    let mut best = (lo, f64::NEG_INFINITY);
    for k in lo..=hi.min(n) {
        let a = kmeans(points, k, 100, rng_seed)?;
        let score = match (&subset, &scored_points) {
            (Some(idx), Some(p)) => {
                let labels: Vec<usize> = idx.iter().map(|&i| a.labels[i]).collect();
                silhouette(p, &labels, k)
            }
            _ => silhouette(points, &a.labels, k),
        };
        if score > best.1 {
            best = (k, score);
        }
    }
    Ok(best.0)
}

/// Floor-and-remainder apportionment of `n` over clusters of the given sizes:
/// `m_j = ⌊|C_j|·n / Σ|C|⌋`, then the leftover goes one each to the largest
/// clusters (ties to the lower id).
pub fn apportion(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 || sizes.is_empty() {
        return vec![0; sizes.len()];
    }
    let mut m: Vec<usize> = sizes
        .iter()
        .map(|&s| ((s as u128 * n as u128) / total as u128) as usize)
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut left = n - m.iter().sum::<usize>();
    let mut cursor = 0;
    while left > 0 {
        m[order[cursor % order.len()]] += 1;
        cursor += 1;
        left -= 1;
    }
    m
}

/// Per-cluster seed targets, clamped to the number of cross-graph pairs a
/// cluster can supply (`min` of its G1 and G2 member counts).
pub fn cluster_quota(assignment: &ClusterAssignment, n_first: usize, n: usize) -> ClusterQuota {
    let sizes = assignment.sizes();
    let mut counts = apportion(&sizes, n);
    let mut left = vec![0usize; assignment.k];
    let mut right = vec![0usize; assignment.k];
    for (i, &l) in assignment.labels.iter().enumerate() {
        if i < n_first {
            left[l] += 1;
        } else {
            right[l] += 1;
        }
    }
    for (j, m) in counts.iter_mut().enumerate() {
        *m = (*m).min(left[j].min(right[j]));
    }
    ClusterQuota { counts, total: n }
}

/// Greedy one-to-one sampling inside each cluster, restricted to pairs whose
/// endpoints both lie in the cluster and are not used by `existing`.
pub fn stage1_sample(
    sim: &SimMatrix,
    assignment: &ClusterAssignment,
    quota: &ClusterQuota,
    existing: &SeedSet,
) -> SeedSet {
    let n1 = sim.rows();
    let mut out = existing.clone();
    for (cluster, &m) in quota.counts.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let left: Vec<usize> = (0..n1)
            .filter(|&i| assignment.labels[i] == cluster && !out.uses_left(i))
            .collect();
        let right: Vec<usize> = (0..sim.cols())
            .filter(|&j| assignment.labels[n1 + j] == cluster && !out.uses_right(j))
            .collect();
        let mut candidates = Vec::with_capacity(left.len() * right.len());
        for &i in &left {
            for &j in &right {
                candidates.push((i, j, sim.get(i, j)));
            }
        }
        greedy_into(candidates, m, Stage::S1, &mut out);
    }
    out
}
