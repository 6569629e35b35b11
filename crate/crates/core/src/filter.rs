// SPDX-License-Identifier: Apache-2.0

//! The density filter.
//!
//! Each non-ground point gets a density factor `k / v`, where `v` is the
//! convex-hull volume of its `k` nearest neighbors (the point itself
//! included). The non-ground map is split into k-means clusters; each
//! cluster `i` with `N_i` points is assigned a removal percentage `R_i`,
//! rescaled linearly from the cluster counts onto
//! `[min_remove, max_remove]`, and its `R_i` percent lowest-density points
//! are dropped. Ground points bypass all of this and are re-attached at
//! the end.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{Point3, PointCloud};
use crate::clustering::{self, ClusterAssignment, ClusterError};
use crate::ground::{self, GroundError, GroundParams, GroundSplit};
use crate::hull::QuickHull;
use crate::spatial::KdTree3;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {needed} non-ground points, found {available}")]
    TooFewPoints { needed: usize, available: usize },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Remove exactly `floor(R_i% * n)` lowest-density points.
    #[default]
    Quantile,
    /// Raise the threshold from zero in steps of `iter_step_frac * sigma`
    /// until at least `R_i%` of the cluster falls below it.
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynaHullParams {
    pub k_neighbors: usize,
    pub n_clusters: usize,
    /// Percent.
    pub min_remove: f64,
    /// Percent.
    pub max_remove: f64,
    pub seed: u64,
    pub ground: GroundParams,
    /// Volume cap (m^3) for degenerate neighborhoods.
    pub vol_floor: f64,
    pub threshold_mode: ThresholdMode,
    pub iter_step_frac: f64,
    /// Search neighbors within each cluster instead of across the whole map.
    pub per_cluster_knn: bool,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for DynaHullParams {
    fn default() -> Self {
        Self {
            k_neighbors: 75,
            n_clusters: 5,
            min_remove: 5.0,
            max_remove: 20.0,
            seed: 0,
            ground: GroundParams::default(),
            vol_floor: 1e-12,
            threshold_mode: ThresholdMode::Quantile,
            iter_step_frac: 0.01,
            per_cluster_knn: false,
            kmeans_max_iter: clustering::DEFAULT_MAX_ITER,
            kmeans_tol: clustering::DEFAULT_TOL,
        }
    }
}

impl DynaHullParams {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: String| Err(FilterError::InvalidParams(m));
        if self.k_neighbors < 4 {
            return bad(format!(
                "k_neighbors must be >= 4, got {}",
                self.k_neighbors
            ));
        }
        if self.n_clusters < 1 {
            return bad("n_clusters must be >= 1".into());
        }
        if !(0.0 <= self.min_remove
            && self.min_remove <= self.max_remove
            && self.max_remove <= 100.0)
        {
            return bad(format!(
                "removal range must satisfy 0 <= min <= max <= 100, got [{}, {}]",
                self.min_remove, self.max_remove
            ));
        }
        if !(self.vol_floor > 0.0 && self.vol_floor.is_finite()) {
            return bad(format!(
                "vol_floor must be positive, got {}",
                self.vol_floor
            ));
        }
        if !(self.iter_step_frac > 0.0 && self.iter_step_frac.is_finite()) {
            return bad(format!(
                "iter_step_frac must be positive, got {}",
                self.iter_step_frac
            ));
        }
        if self.ground.inlier_eps < 0.0 || self.ground.seed_band < 0.0 {
            return bad("ground band and inlier tolerance must be non-negative".into());
        }
        Ok(())
    }
}

/// Density factor (points per m^3) of each point, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub densities: Vec<f64>,
}

pub fn density_field(
    points: &[Point3],
    k: usize,
    vol_floor: f64,
) -> Result<DensityField, FilterError> {
    if points.len() < k {
        return Err(FilterError::TooFewPoints {
            needed: k,
            available: points.len(),
        });
    }
    let tree = KdTree3::build(points);
    Ok(DensityField {
        densities: densities_against(&tree, points, k, vol_floor),
    })
}

/// Densities with neighbors searched only inside each point's cluster.
/// Clusters smaller than `k` use all of their points.
pub fn density_field_per_cluster(
    points: &[Point3],
    clusters: &ClusterAssignment,
    k: usize,
    vol_floor: f64,
) -> DensityField {
    let mut densities = vec![0.0; points.len()];
    for members in clusters.members() {
        if members.is_empty() {
            continue;
        }
        let local: Vec<Point3> = members.iter().map(|&i| points[i]).collect();
        let tree = KdTree3::build(&local);
        let d = densities_against(&tree, &local, k.min(local.len()), vol_floor);
        for (&i, v) in members.iter().zip(d) {
            densities[i] = v;
        }
    }
    DensityField { densities }
}

fn densities_against(tree: &KdTree3, queries: &[Point3], k: usize, vol_floor: f64) -> Vec<f64> {
    queries
        .par_iter()
        .map_init(
            || (QuickHull::default(), Vec::new(), Vec::new()),
            |(qh, idx, nbhd), q| {
                tree.knn_indices_into(*q, k, idx);
                nbhd.clear();
                nbhd.extend(idx.iter().map(|&i| tree.points()[i]));
                let v = qh.volume(nbhd);
                idx.len() as f64 / v.max(vol_floor)
            },
        )
        .collect()
}

/// Rescales cluster sizes linearly onto `[min_remove, max_remove]` percent.
/// When all sizes are equal every cluster gets `min_remove`.
pub fn rescale_removal(counts: &[usize], min_remove: f64, max_remove: f64) -> Vec<f64> {
    let (Some(&lo), Some(&hi)) = (counts.iter().min(), counts.iter().max()) else {
        return Vec::new();
    };
    if hi == lo {
        return vec![min_remove; counts.len()];
    }
    let span = (hi - lo) as f64;
    counts
        .iter()
        .map(|&n| (n - lo) as f64 / span * (max_remove - min_remove) + min_remove)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    /// Densities strictly below `tau` are removed (up to index tie-break
    /// in quantile mode).
    pub tau: f64,
    /// Positions into the density slice, ascending.
    pub removed: Vec<usize>,
}

// Guards `target% * n` against representation error, e.g. 0.29 * 100.
const COUNT_SLACK: f64 = 1e-9;

/// Picks the lowest-density `target` percent of `densities`. Slice order is
/// the tie-break: among equal densities earlier positions go first.
pub fn threshold_removal(
    densities: &[f64],
    target: f64,
    mode: ThresholdMode,
    iter_step_frac: f64,
) -> Threshold {
    let n = densities.len();
    let share = target.clamp(0.0, 100.0) / 100.0 * n as f64;
    match mode {
        ThresholdMode::Quantile => {
            let m = ((share + COUNT_SLACK).floor() as usize).min(n);
            if m == 0 {
                return Threshold {
                    tau: 0.0,
                    removed: Vec::new(),
                };
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| densities[a].total_cmp(&densities[b]).then(a.cmp(&b)));
            let tau = if m < n {
                densities[order[m]]
            } else {
                densities[order[n - 1]].next_up()
            };
            let mut removed = order[..m].to_vec();
            removed.sort_unstable();
            Threshold { tau, removed }
        }
        ThresholdMode::Iterative => {
            let need = ((share - COUNT_SLACK).ceil().max(0.0) as usize).min(n);
            if need == 0 {
                return Threshold {
                    tau: 0.0,
                    removed: Vec::new(),
                };
            }
            let mut sorted = densities.to_vec();
            sorted.sort_by(f64::total_cmp);
            let step = iter_step_frac * population_std(densities);
            let pivot = sorted[need - 1];
            let tau = if step > 0.0 && step.is_finite() {
                // Smallest j with j * step > pivot: the iterate at which the loop stops.
                let mut j = (pivot / step).floor().max(0.0) + 1.0;
                while j * step <= pivot {
                    j += 1.0;
                }
                while j > 1.0 && (j - 1.0) * step > pivot {
                    j -= 1.0;
                }
                j * step
            } else {
                // Zero spread: the first step already passes every value.
                sorted[n - 1].next_up()
            };
            let removed = (0..n).filter(|&i| densities[i] < tau).collect();
            Threshold { tau, removed }
        }
    }
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterPlan {
    pub cluster: usize,
    pub count: usize,
    pub removal_pct: f64,
    pub threshold: f64,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct StageTimings {
    pub ground_s: f64,
    pub cluster_s: f64,
    pub density_s: f64,
    pub threshold_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub filtered: PointCloud,
    /// Indices into the input cloud, ascending.
    pub removed_indices: Vec<usize>,
    pub plan: Vec<ClusterPlan>,
    pub ground: GroundSplit,
    pub ground_found: bool,
    /// Density per input point; `None` for ground points.
    pub densities: Vec<Option<f64>>,
    pub timings: StageTimings,
}

pub fn filter_map(
    cloud: &PointCloud,
    params: &DynaHullParams,
) -> Result<FilterResult, FilterError> {
    params.validate()?;
    let t_total = Instant::now();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (split, ground_found) = if params.ground.enabled {
        match ground::segment_ground(cloud, &params.ground) {
            Ok(s) => (s, true),
            Err(GroundError::NoGroundFound) => {
                log::warn!("no ground plane found; continuing without ground removal");
                (GroundSplit::none(cloud.len()), false)
            }
            Err(GroundError::EmptyCloud) => {
                return Err(FilterError::TooFewPoints {
                    needed: params.k_neighbors,
                    available: 0,
                })
            }
        }
    } else {
        (GroundSplit::none(cloud.len()), false)
    };
    timings.ground_s = t.elapsed().as_secs_f64();

    let nonground: Vec<Point3> = split
        .nonground_indices
        .iter()
        .map(|&i| cloud.points()[i])
        .collect();
    if nonground.len() < params.k_neighbors {
        return Err(FilterError::TooFewPoints {
            needed: params.k_neighbors,
            available: nonground.len(),
        });
    }

    let t = Instant::now();
    let clusters = clustering::kmeans(
        &nonground,
        params.n_clusters,
        params.seed,
        params.kmeans_max_iter,
        params.kmeans_tol,
    )?;
    timings.cluster_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let field = if params.per_cluster_knn {
        density_field_per_cluster(&nonground, &clusters, params.k_neighbors, params.vol_floor)
    } else {
        density_field(&nonground, params.k_neighbors, params.vol_floor)?
    };
    timings.density_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let rates = rescale_removal(&clusters.counts, params.min_remove, params.max_remove);
    let mut drop = vec![false; nonground.len()];
    let mut plan = Vec::with_capacity(params.n_clusters);
    for (c, members) in clusters.members().into_iter().enumerate() {
        let d: Vec<f64> = members.iter().map(|&i| field.densities[i]).collect();
        let th = if d.is_empty() {
            Threshold {
                tau: 0.0,
                removed: Vec::new(),
            }
        } else {
            threshold_removal(&d, rates[c], params.threshold_mode, params.iter_step_frac)
        };
        for &pos in &th.removed {
            drop[members[pos]] = true;
        }
        plan.push(ClusterPlan {
            cluster: c,
            count: members.len(),
            removal_pct: rates[c],
            threshold: th.tau,
            removed: th.removed.len(),
        });
    }

    let mut kept = Vec::with_capacity(nonground.len());
    let mut removed_indices = Vec::new();
    for (local, &orig) in split.nonground_indices.iter().enumerate() {
        if drop[local] {
            removed_indices.push(orig);
        } else {
            kept.push(orig);
        }
    }
    removed_indices.sort_unstable();
    let filtered = ground::reattach_ground(&cloud.select(&kept), cloud, &split);
    timings.threshold_s = t.elapsed().as_secs_f64();

    let mut densities = vec![None; cloud.len()];
    for (local, &orig) in split.nonground_indices.iter().enumerate() {
        densities[orig] = Some(field.densities[local]);
    }
    timings.total_s = t_total.elapsed().as_secs_f64();

    Ok(FilterResult {
        filtered,
        removed_indices,
        plan,
        ground: split,
        ground_found,
        densities,
        timings,
    })
}
