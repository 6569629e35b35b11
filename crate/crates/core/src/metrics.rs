// SPDX-License-Identifier: Apache-2.0

//! Map-versus-reference evaluation: nearest-neighbor distance statistics,
//! Chamfer distance, exact Earth Mover's distance on uniform subsamples,
//! and removal confusion counts against motion labels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::assignment::min_cost_assignment;
use crate::cloud::{downsample_indices, MotionLabel, PointCloud};
use crate::spatial::KdTree3;

pub const DEFAULT_EMD_SAMPLES: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric needs non-empty clouds")]
    EmptyCloud,
    #[error("removed index {index} out of range for {len} labels")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DistanceStats {
    pub mean: f64,
    /// Same value as `mean`; distances are non-negative.
    pub mae: f64,
    /// Population variance.
    pub variance: f64,
    pub rmse: f64,
    /// 90th percentile, linear interpolation between order statistics.
    pub p90: f64,
}

impl DistanceStats {
    pub fn from_distances(d: &[f64]) -> DistanceStats {
        if d.is_empty() {
            return DistanceStats::default();
        }
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let variance = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let rmse = (d.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        let mut sorted = d.to_vec();
        sorted.sort_by(f64::total_cmp);
        DistanceStats {
            mean,
            mae: mean,
            variance,
            rmse,
            p90: percentile(&sorted, 0.9),
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Distance from each `from` point to its nearest `to` point.
pub fn nn_distances(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    let tree = KdTree3::build(to.points());
    from.points()
        .par_iter()
        .map(|p| tree.nearest(*p).map_or(f64::INFINITY, |(_, d)| d))
        .collect()
}

pub fn nn_distance_stats(
    pred: &PointCloud,
    truth: &PointCloud,
) -> Result<DistanceStats, MetricsError> {
    if pred.is_empty() || truth.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    Ok(DistanceStats::from_distances(&nn_distances(pred, truth)))
}

/// Mean squared nearest distance a→b plus the same b→a.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let mean_sq = |d: Vec<f64>| d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
    Ok(mean_sq(nn_distances(a, b)) + mean_sq(nn_distances(b, a)))
}

/// Exact uniform-weight EMD with Euclidean ground cost on
/// `min(n_samples, |a|, |b|)`-point subsamples of both clouds.
pub fn emd(
    a: &PointCloud,
    b: &PointCloud,
    n_samples: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() || n_samples == 0 {
        return Err(MetricsError::EmptyCloud);
    }
    let n = n_samples.min(a.len()).min(b.len());
    let pa: Vec<_> = downsample_indices(a.len(), n, seed)
        .into_iter()
        .map(|i| a.points()[i])
        .collect();
    let pb: Vec<_> = downsample_indices(b.len(), n, seed)
        .into_iter()
        .map(|i| b.points()[i])
        .collect();
    let cost: Vec<f64> = pa
        .iter()
        .flat_map(|p| pb.iter().map(move |q| p.distance(*q)))
        .collect();
    let assign = min_cost_assignment(&cost, n);
    let total: f64 = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// Percent of static points removed.
    pub fp_pct: f64,
    /// Percent of dynamic points kept.
    pub fn_pct: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Dynamic is the positive class; a removed point is a positive call.
pub fn confusion(
    labels: &[MotionLabel],
    removed: &[usize],
) -> Result<ConfusionReport, MetricsError> {
    let mut is_removed = vec![false; labels.len()];
    for &i in removed {
        if i >= labels.len() {
            return Err(MetricsError::IndexOutOfRange {
                index: i,
                len: labels.len(),
            });
        }
        is_removed[i] = true;
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (l, r) in labels.iter().zip(&is_removed) {
        match (l, r) {
            (MotionLabel::Dynamic, true) => tp += 1,
            (MotionLabel::Static, true) => fp += 1,
            (MotionLabel::Dynamic, false) => fn_ += 1,
            (MotionLabel::Static, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(ConfusionReport {
        tp,
        fp,
        fn_,
        tn,
        fp_pct: ratio(fp, fp + tn).map_or(0.0, |r| 100.0 * r),
        fn_pct: ratio(fn_, fn_ + tp).map_or(0.0, |r| 100.0 * r),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub distance: DistanceStats,
    pub chamfer: f64,
    pub emd: f64,
    pub confusion: Option<ConfusionReport>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub emd_samples: usize,
    pub emd_seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            emd_samples: DEFAULT_EMD_SAMPLES,
            emd_seed: 0,
        }
    }
}

/// Distance statistics, Chamfer and EMD of `pred` against `truth`.
pub fn evaluate(
    pred: &PointCloud,
    truth: &PointCloud,
    opts: &EvalOptions,
) -> Result<MetricsReport, MetricsError> {
    let start = std::time::Instant::now();
    let distance = nn_distance_stats(pred, truth)?;
    let chamfer = chamfer(pred, truth)?;
    let emd = emd(pred, truth, opts.emd_samples, opts.emd_seed)?;
    Ok(MetricsReport {
        distance,
        chamfer,
        emd,
        confusion: None,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Rounds to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}

fn num(x: f64) -> Value {
    json!(round_sig(x, 6))
}

impl ConfusionReport {
    pub fn to_json(&self) -> Value {
        json!({
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn_,
            "tn": self.tn,
            "fp_pct": num(self.fp_pct),
            "fn_pct": num(self.fn_pct),
            "precision": self.precision.map(num),
            "recall": self.recall.map(num),
        })
    }
}

impl MetricsReport {
    /// The report object with its fixed key set; floats carry 6 significant digits.
    pub fn to_json(&self) -> Value {
        json!({
            "mae": num(self.distance.mae),
            "variance": num(self.distance.variance),
            "rmse": num(self.distance.rmse),
            "p90": num(self.distance.p90),
            "chamfer": num(self.chamfer),
            "emd": num(self.emd),
            "confusion": self.confusion.as_ref().map(ConfusionReport::to_json),
            "runtime_s": num(self.runtime_s),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
    }

    fn brute_nn(p: Point3, to: &PointCloud) -> f64 {
        to.points()
            .iter()
            .map(|q| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn identity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(100, &mut rng);
        let s = nn_distance_stats(&c, &c).unwrap();
        assert_eq!(s, DistanceStats::default());
        assert_eq!(chamfer(&c, &c).unwrap(), 0.0);
        assert_eq!(emd(&c, &c, 50, 3).unwrap(), 0.0);
    }

    #[test]
    fn uniform_offset() {
        let truth = PointCloud::new(
            (0..30)
                .map(|i| Point3::new((i % 5) as f64 * 10.0, (i / 5) as f64 * 10.0, 0.0))
                .collect(),
        );
        let pred = PointCloud::new(
            truth
                .points()
                .iter()
                .map(|p| *p + Point3::new(0.1, 0.0, 0.0))
                .collect(),
        );
        let s = nn_distance_stats(&pred, &truth).unwrap();
        for v in [s.mae, s.rmse, s.p90] {
            assert!((v - 0.1).abs() < 1e-12);
        }
        assert!(s.variance.abs() < 1e-15);
    }

    #[test]
    fn single_point_cases() {
        let a = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)]);
        let b = PointCloud::new(vec![Point3::new(3.0, 4.0, 0.0)]);
        assert_eq!(chamfer(&a, &b).unwrap(), 50.0);
        assert_eq!(emd(&a, &b, 512, 0).unwrap(), 5.0);
    }

    #[test]
    fn empty_inputs() {
        let a = PointCloud::default();
        let b = PointCloud::new(vec![Point3::default()]);
        assert_eq!(nn_distance_stats(&a, &b), Err(MetricsError::EmptyCloud));
        assert_eq!(chamfer(&b, &a), Err(MetricsError::EmptyCloud));
        assert_eq!(emd(&a, &b, 10, 0), Err(MetricsError::EmptyCloud));
    }

    #[test]
    fn matches_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let a = random_cloud(200, &mut rng);
            let b = random_cloud(200, &mut rng);
            let d: Vec<f64> = a.points().iter().map(|p| brute_nn(*p, &b)).collect();
            let s = nn_distance_stats(&a, &b).unwrap();
            let mean = d.iter().sum::<f64>() / 200.0;
            assert!((s.mae - mean).abs() < 1e-12);
            let rms = (d.iter().map(|x| x * x).sum::<f64>() / 200.0).sqrt();
            assert!((s.rmse - rms).abs() < 1e-12);
            assert!((s.variance - (rms * rms - mean * mean)).abs() < 1e-9 * s.variance.max(1e-12));
            let back: Vec<f64> = b.points().iter().map(|p| brute_nn(*p, &a)).collect();
            let cd = d.iter().map(|x| x * x).sum::<f64>() / 200.0
                + back.iter().map(|x| x * x).sum::<f64>() / 200.0;
            assert!((chamfer(&a, &b).unwrap() - cd).abs() < 1e-12);
            assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        }
    }

    #[test]
    fn p90_interpolates() {
        let d: Vec<f64> = (0..11).map(|i| i as f64).collect();
        assert_eq!(DistanceStats::from_distances(&d).p90, 9.0);
        let d = [0.0, 10.0];
        assert_eq!(DistanceStats::from_distances(&d).p90, 9.0);
    }

    #[test]
    fn outlier_increases_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_cloud(100, &mut rng);
        let pred = random_cloud(80, &mut rng);
        let base = nn_distance_stats(&pred, &truth).unwrap();
        let (mut pts, _) = pred.into_parts();
        pts.push(Point3::new(50.0, 50.0, 50.0));
        let worse = nn_distance_stats(&PointCloud::new(pts), &truth).unwrap();
        assert!(worse.mean > base.mean);
        assert!(worse.rmse > base.rmse);
    }

    #[test]
    fn confusion_cases() {
        let mut labels = vec![MotionLabel::Static; 100];
        labels.extend(vec![MotionLabel::Dynamic; 100]);
        let perfect: Vec<usize> = (100..200).collect();
        let c = confusion(&labels, &perfect).unwrap();
        assert_eq!((c.precision, c.recall), (Some(1.0), Some(1.0)));
        assert_eq!((c.fp_pct, c.fn_pct), (0.0, 0.0));

        let c = confusion(&labels, &[]).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 100));
        assert_eq!(c.recall, Some(0.0));
        assert_eq!(c.precision, None);

        let mut removed: Vec<usize> = (100..180).collect();
        removed.extend(0..10);
        let c = confusion(&labels, &removed).unwrap();
        assert!((c.precision.unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(c.recall, Some(0.8));
        assert_eq!(c.fp_pct, 10.0);
        assert_eq!(c.fn_pct, 20.0);
        assert_eq!(c.tp + c.fp + c.fn_ + c.tn, 200);

        assert_eq!(
            confusion(&labels, &[200]),
            Err(MetricsError::IndexOutOfRange {
                index: 200,
                len: 200
            })
        );
    }

    #[test]
    fn report_json_schema() {
        let r = MetricsReport {
            distance: DistanceStats::from_distances(&[0.123456789, 1.0]),
            chamfer: 2.0 / 3.0,
            emd: 0.5,
            confusion: None,
            runtime_s: 1.25,
        };
        let v = r.to_json();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        let mut expected = vec![
            "mae",
            "variance",
            "rmse",
            "p90",
            "chamfer",
            "emd",
            "confusion",
            "runtime_s",
        ];
        expected.sort_unstable();
        let mut keys = keys;
        keys.sort_unstable();
        assert_eq!(keys, expected);
        assert_eq!(v["confusion"], Value::Null);
        assert_eq!(v["chamfer"].as_f64().unwrap(), 0.666667);
    }

    #[test]
    fn round_sig_digits() {
        assert_eq!(round_sig(0.1234567, 6), 0.123457);
        assert_eq!(round_sig(123456789.0, 6), 123457000.0);
        assert_eq!(round_sig(0.0, 6), 0.0);
    }
}
