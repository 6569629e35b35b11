// SPDX-License-Identifier: Apache-2.0

//! Floor separation by slope-gated robust plane fitting.
//!
//! Candidates are the points whose height lies within `seed_band` of the
//! cloud's 1st-percentile z. Random triples of candidates propose planes;
//! planes steeper than `max_slope_deg` are rejected and the proposal with
//! the most inliers wins. The winner is refined by a total-least-squares
//! fit on its inliers. Every point within `inlier_eps` of the final plane
//! is ground.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{Point3, PointCloud};

#[derive(Debug, Error, PartialEq)]
pub enum GroundError {
    #[error("cannot segment ground of an empty cloud")]
    EmptyCloud,
    #[error("no near-horizontal plane with at least 3 inliers")]
    NoGroundFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundParams {
    /// Skip segmentation entirely (every point is non-ground).
    pub enabled: bool,
    pub seed_band: f64,
    pub inlier_eps: f64,
    pub max_slope_deg: f64,
    pub ransac_iters: usize,
    pub seed: u64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            enabled: true,
            seed_band: 0.3,
            inlier_eps: 0.05,
            max_slope_deg: 15.0,
            ransac_iters: 200,
            seed: 0,
        }
    }
}

/// Plane `normal · p + offset = 0` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Point3,
    pub offset: f64,
}

impl Plane {
    pub fn horizontal(z: f64) -> Self {
        Plane {
            normal: Point3::new(0.0, 0.0, 1.0),
            offset: -z,
        }
    }

    #[inline]
    pub fn signed_distance(&self, p: Point3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Angle between the normal and +z, in degrees.
    pub fn tilt_deg(&self) -> f64 {
        self.normal.z.abs().min(1.0).acos().to_degrees()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundSplit {
    pub ground_indices: Vec<usize>,
    pub nonground_indices: Vec<usize>,
    pub plane: Option<Plane>,
}

impl GroundSplit {
    /// Everything is non-ground.
    pub fn none(len: usize) -> Self {
        GroundSplit {
            ground_indices: Vec::new(),
            nonground_indices: (0..len).collect(),
            plane: None,
        }
    }
}

pub fn segment_ground(
    cloud: &PointCloud,
    params: &GroundParams,
) -> Result<GroundSplit, GroundError> {
    let pts = cloud.points();
    if pts.is_empty() {
        return Err(GroundError::EmptyCloud);
    }
    let plane = fit_floor(pts, params)?;
    let mut split = GroundSplit {
        ground_indices: Vec::new(),
        nonground_indices: Vec::new(),
        plane: Some(plane),
    };
    for (i, p) in pts.iter().enumerate() {
        if plane.signed_distance(*p).abs() <= params.inlier_eps {
            split.ground_indices.push(i);
        } else {
            split.nonground_indices.push(i);
        }
    }
    Ok(split)
}

/// Same procedure applied to the mirrored cloud: finds the ceiling.
pub fn segment_ceiling(
    cloud: &PointCloud,
    params: &GroundParams,
) -> Result<GroundSplit, GroundError> {
    let mirrored = PointCloud::new(
        cloud
            .points()
            .iter()
            .map(|p| Point3::new(p.x, p.y, -p.z))
            .collect(),
    );
    let mut split = segment_ground(&mirrored, params)?;
    split.plane = split.plane.map(|pl| Plane {
        normal: Point3::new(pl.normal.x, pl.normal.y, -pl.normal.z),
        offset: pl.offset,
    });
    Ok(split)
}

/// Filtered non-ground points followed by the original ground points.
pub fn reattach_ground(
    filtered_nonground: &PointCloud,
    original: &PointCloud,
    split: &GroundSplit,
) -> PointCloud {
    if split.ground_indices.is_empty() {
        return filtered_nonground.clone();
    }
    filtered_nonground.concat(&original.select(&split.ground_indices))
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn fit_floor(pts: &[Point3], params: &GroundParams) -> Result<Plane, GroundError> {
    let mut zs: Vec<f64> = pts.iter().map(|p| p.z).collect();
    zs.sort_by(f64::total_cmp);
    let z_ref = percentile_sorted(&zs, 0.01);
    let candidates: Vec<Point3> = pts
        .iter()
        .copied()
        .filter(|p| (p.z - z_ref).abs() <= params.seed_band)
        .collect();
    if candidates.len() < 3 {
        return Err(GroundError::NoGroundFound);
    }
    let min_cos = params.max_slope_deg.to_radians().cos();
    let eps = params.inlier_eps;
    let count = |pl: &Plane| {
        candidates
            .iter()
            .filter(|p| pl.signed_distance(**p).abs() <= eps)
            .count()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..params.ransac_iters {
        let idx = rand::seq::index::sample(&mut rng, candidates.len(), 3);
        let (a, b, c) = (
            candidates[idx.index(0)],
            candidates[idx.index(1)],
            candidates[idx.index(2)],
        );
        let n = (b - a).cross(c - a);
        let len = n.norm();
        if len <= f64::EPSILON * (b - a).norm() * (c - a).norm() || len == 0.0 {
            continue;
        }
        let mut n = n * (1.0 / len);
        if n.z < 0.0 {
            n = n * -1.0;
        }
        if n.z < min_cos {
            continue;
        }
        let plane = Plane {
            normal: n,
            offset: -n.dot(a),
        };
        let inliers = count(&plane);
        if best.as_ref().is_none_or(|(c, _)| inliers > *c) {
            best = Some((inliers, plane));
        }
    }

    let (inliers, plane) = match best {
        Some(b) => b,
        None => {
            // Fallback: horizontal plane at the candidates' median height.
            let mut cz: Vec<f64> = candidates.iter().map(|p| p.z).collect();
            cz.sort_by(f64::total_cmp);
            let pl = Plane::horizontal(percentile_sorted(&cz, 0.5));
            (count(&pl), pl)
        }
    };
    if inliers < 3 {
        return Err(GroundError::NoGroundFound);
    }

    let members: Vec<Point3> = candidates
        .iter()
        .copied()
        .filter(|p| plane.signed_distance(*p).abs() <= eps)
        .collect();
    Ok(match least_squares_plane(&members) {
        Some(refit) if refit.normal.z >= min_cos && count(&refit) >= 3 => refit,
        _ => plane,
    })
}

/// Total-least-squares plane through `pts`, normal oriented towards +z.
fn least_squares_plane(pts: &[Point3]) -> Option<Plane> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let c = pts.iter().fold(Point3::default(), |s, p| s + *p) * (1.0 / n);
    let mut cov = Matrix3::<f64>::zeros();
    for p in pts {
        let d = *p - c;
        let v = [d.x, d.y, d.z];
        for r in 0..3 {
            for k in 0..3 {
                cov[(r, k)] += v[r] * v[k];
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let col = eig.eigenvectors.column(imin);
    let mut normal = Point3::new(col[0], col[1], col[2]);
    let len = normal.norm();
    if len.is_nan() || len <= 0.0 {
        return None;
    }
    normal = normal * (1.0 / len);
    if normal.z < 0.0 {
        normal = normal * -1.0;
    }
    Some(Plane {
        normal,
        offset: -normal.dot(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn floor_and_box(tilt_deg: f64) -> (PointCloud, usize, Point3) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 0.005).unwrap();
        let t = tilt_deg.to_radians();
        // Floor tilted about the y axis: z = x * tan(t).
        let normal = Point3::new(-t.sin(), 0.0, t.cos());
        let mut pts = Vec::new();
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(0.0..8.0);
            let y: f64 = rng.random_range(0.0..6.0);
            let on = Point3::new(x, y, x * t.tan());
            pts.push(on + normal * noise.sample(&mut rng));
        }
        let n_floor = pts.len();
        for _ in 0..2_000 {
            pts.push(Point3::new(
                rng.random_range(3.0..4.0),
                rng.random_range(2.0..3.0),
                rng.random_range(0.5..1.5) + 4.0 * t.tan(),
            ));
        }
        (PointCloud::new(pts), n_floor, normal)
    }

    #[test]
    fn flat_floor_with_box() {
        let (cloud, n_floor, _) = floor_and_box(0.0);
        let split = segment_ground(&cloud, &GroundParams::default()).unwrap();
        let floor_hits = split
            .ground_indices
            .iter()
            .filter(|&&i| i < n_floor)
            .count();
        let box_hits = split.ground_indices.len() - floor_hits;
        assert!(floor_hits as f64 >= 0.99 * n_floor as f64, "{floor_hits}");
        assert_eq!(box_hits, 0);
        assert_eq!(
            split.ground_indices.len() + split.nonground_indices.len(),
            cloud.len()
        );
        let plane = split.plane.unwrap();
        let rms = (split
            .ground_indices
            .iter()
            .map(|&i| plane.signed_distance(cloud.points()[i]).powi(2))
            .sum::<f64>()
            / split.ground_indices.len() as f64)
            .sqrt();
        assert!(rms <= 0.05);
    }

    #[test]
    fn tilted_floor() {
        let (cloud, _, truth) = floor_and_box(5.0);
        let split = segment_ground(&cloud, &GroundParams::default()).unwrap();
        let n = split.plane.unwrap().normal;
        let angle = n.dot(truth).min(1.0).acos().to_degrees();
        assert!(angle < 1.0, "normal off by {angle} deg");
    }

    #[test]
    fn sparse_band_has_no_ground() {
        let cloud = PointCloud::new((0..100).map(|i| Point3::new(0.0, 0.0, i as f64)).collect());
        assert_eq!(
            segment_ground(&cloud, &GroundParams::default()),
            Err(GroundError::NoGroundFound)
        );
        assert_eq!(
            segment_ground(&PointCloud::default(), &GroundParams::default()),
            Err(GroundError::EmptyCloud)
        );
    }

    #[test]
    fn steep_ramp_is_rejected() {
        // A 60 degree ramp; only a thin horizontal slice is admitted by the fallback.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point3> = (0..3000)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..2.0);
                Point3::new(x, rng.random_range(0.0..2.0), x * 60f64.to_radians().tan())
            })
            .collect();
        let split = segment_ground(&PointCloud::new(pts), &GroundParams::default()).unwrap();
        assert!(split.plane.unwrap().tilt_deg() <= 15.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let (cloud, _, _) = floor_and_box(2.0);
        let p = GroundParams::default();
        assert_eq!(segment_ground(&cloud, &p), segment_ground(&cloud, &p));
    }

    #[test]
    fn reattach_conserves_points() {
        let (cloud, _, _) = floor_and_box(0.0);
        let split = segment_ground(&cloud, &GroundParams::default()).unwrap();
        let nonground = cloud.select(&split.nonground_indices);
        let back = reattach_ground(&nonground, &cloud, &split);
        assert_eq!(back.len(), cloud.len());
        let key = |p: &Point3| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits());
        let mut a: Vec<_> = back.points().iter().map(key).collect();
        let mut b: Vec<_> = cloud.points().iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);

        let empty = GroundSplit::none(cloud.len());
        assert_eq!(reattach_ground(&nonground, &cloud, &empty), nonground);
    }

    #[test]
    fn ceiling_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pts = Vec::new();
        for z in [0.0, 3.0] {
            for _ in 0..2000 {
                pts.push(Point3::new(
                    rng.random_range(0.0..5.0),
                    rng.random_range(0.0..5.0),
                    z,
                ));
            }
        }
        let split =
            segment_ceiling(&PointCloud::new(pts.clone()), &GroundParams::default()).unwrap();
        assert_eq!(split.ground_indices.len(), 2000);
        assert!(split.ground_indices.iter().all(|&i| pts[i].z == 3.0));
    }
}
