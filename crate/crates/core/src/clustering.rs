// SPDX-License-Identifier: Apache-2.0

//! Seeded k-means (k-means++ initialisation, Lloyd iterations).
//!
//! Assignment may run in parallel; all sums are accumulated sequentially
//! in point order, so results do not depend on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::Point3;

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cannot form {requested} clusters from {available} points")]
    InsufficientPoints { requested: usize, available: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Point3>,
    pub counts: Vec<usize>,
    /// Lloyd iterations performed.
    pub iterations: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    /// Point indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centroids.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

pub fn kmeans(
    points: &[Point3],
    n_clusters: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment, ClusterError> {
    if n_clusters == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if n_clusters > points.len() {
        return Err(ClusterError::InsufficientPoints {
            requested: n_clusters,
            available: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, n_clusters, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;

    let mut labels;
    loop {
        let (l, mut d2) = assign(points, &centroids);
        labels = l;
        history.push(d2.iter().sum());
        repair_empty(points, &mut centroids, &mut labels, &mut d2);

        let updated = means(points, &labels, &centroids);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| a.distance(*b))
            .fold(0.0, f64::max);
        centroids = updated;
        iterations += 1;
        if shift < tol || iterations >= max_iter {
            break;
        }
    }
    let (labels_final, d2) = assign(points, &centroids);
    if labels_final != labels {
        history.push(d2.iter().sum());
    }
    let labels = labels_final;
    let mut counts = vec![0usize; n_clusters];
    for &l in &labels {
        counts[l] += 1;
    }
    Ok(ClusterAssignment {
        labels,
        centroids,
        counts,
        iterations,
        inertia_history: history,
    })
}

fn kmeans_plus_plus(points: &[Point3], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| p.distance_squared(centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            let mut last_positive = 0;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    last_positive = i;
                    acc += d;
                    if acc > r {
                        chosen = Some(i);
                        break;
                    }
                }
            }
            chosen.unwrap_or(last_positive)
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.distance_squared(c));
        }
    }
    centroids
}

/// Nearest centroid per point (lowest index on ties) and squared distance.
fn assign(points: &[Point3], centroids: &[Point3]) -> (Vec<usize>, Vec<f64>) {
    points
        .par_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = p.distance_squared(centroids[0]);
            for (j, c) in centroids.iter().enumerate().skip(1) {
                let d = p.distance_squared(*c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            (best, best_d)
        })
        .unzip()
}

/// Moves each empty cluster's centroid onto the point currently farthest
/// from its own centroid and hands that point to the empty cluster.
fn repair_empty(points: &[Point3], centroids: &mut [Point3], labels: &mut [usize], d2: &mut [f64]) {
    let mut counts = vec![0usize; centroids.len()];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for j in 0..centroids.len() {
        if counts[j] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &d) in d2.iter().enumerate() {
            // Never strip a cluster of its last point.
            if counts[labels[i]] > 1 && d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        counts[labels[i]] -= 1;
        counts[j] += 1;
        labels[i] = j;
        d2[i] = 0.0;
        centroids[j] = points[i];
    }
}

fn means(points: &[Point3], labels: &[usize], previous: &[Point3]) -> Vec<Point3> {
    let k = previous.len();
    let mut sums = vec![Point3::default(); k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        sums[l] = sums[l] + *p;
        counts[l] += 1;
    }
    (0..k)
        .map(|j| {
            if counts[j] == 0 {
                previous[j]
            } else {
                sums[j] * (1.0 / counts[j] as f64)
            }
        })
        .collect()
}
