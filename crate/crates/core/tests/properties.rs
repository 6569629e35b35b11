// SPDX-License-Identifier: Apache-2.0

use dynahull::cloud::{MotionLabel, Point3, PointCloud};
use dynahull::filter::{rescale_removal, threshold_removal, ThresholdMode};
use dynahull::hull::hull_volume;
use dynahull::metrics::{chamfer, confusion, emd, nn_distance_stats};
use proptest::prelude::*;

fn coords(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64), n).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, z)| Point3::new(x, y, z))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn removal_rates_stay_in_range_and_follow_size(
        counts in prop::collection::vec(0usize..10_000, 1..12),
        lo in 0.0..50.0f64,
        width in 0.0..50.0f64,
    ) {
        let hi = lo + width;
        let r = rescale_removal(&counts, lo, hi);
        prop_assert_eq!(r.len(), counts.len());
        for (i, a) in r.iter().enumerate() {
            prop_assert!(*a >= lo - 1e-9 && *a <= hi + 1e-9);
            for (j, b) in r.iter().enumerate() {
                if counts[i] > counts[j] {
                    prop_assert!(a >= b);
                }
            }
        }
        let imin = (0..counts.len()).min_by_key(|&i| counts[i]).unwrap();
        prop_assert_eq!(r[imin], lo);
    }

    #[test]
    fn quantile_removal_is_exact_and_monotone(
        d in prop::collection::vec(0.001..1000.0f64, 1..300),
        target in 0.0..100.0f64,
    ) {
        let th = threshold_removal(&d, target, ThresholdMode::Quantile, 0.01);
        let expect = (target / 100.0 * d.len() as f64 + 1e-9).floor() as usize;
        prop_assert_eq!(th.removed.len(), expect);
        let mut gone = vec![false; d.len()];
        for &i in &th.removed {
            gone[i] = true;
        }
        let max_removed = th.removed.iter().map(|&i| d[i]).fold(f64::NEG_INFINITY, f64::max);
        for (i, v) in d.iter().enumerate() {
            if !gone[i] {
                prop_assert!(*v >= max_removed);
                prop_assert!(*v >= th.tau);
            }
        }
    }

    #[test]
    fn iterative_removal_reaches_target(
        d in prop::collection::vec(0.001..1000.0f64, 1..300),
        target in 0.0..100.0f64,
    ) {
        let th = threshold_removal(&d, target, ThresholdMode::Iterative, 0.01);
        prop_assert!(th.removed.len() as f64 >= target / 100.0 * d.len() as f64 - 1e-6);
        for (i, v) in d.iter().enumerate() {
            prop_assert_eq!(*v < th.tau, th.removed.contains(&i));
        }
    }

    #[test]
    fn hull_volume_ignores_translation_and_order(
        pts in coords(4..40),
        shift in (-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64),
    ) {
        let v = hull_volume(&pts);
        let moved: Vec<Point3> = pts.iter().rev().map(|p| *p + Point3::new(shift.0, shift.1, shift.2)).collect();
        let w = hull_volume(&moved);
        prop_assert!((v - w).abs() <= 1e-9 * v.max(1.0));
        // Bounded by the axis-aligned box.
        let ext = |a: usize| {
            let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.coord(a)), h.max(p.coord(a))));
            hi - lo
        };
        prop_assert!(v <= ext(0) * ext(1) * ext(2) * (1.0 + 1e-9));
    }

    #[test]
    fn metric_sanity(a in coords(1..60), b in coords(1..60), seed in 0u64..1000) {
        let (a, b) = (PointCloud::new(a), PointCloud::new(b));
        prop_assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        prop_assert!(emd(&a, &b, 32, seed).unwrap() >= 0.0);
        let s = nn_distance_stats(&a, &b).unwrap();
        prop_assert!(s.rmse >= s.mae - 1e-12 && s.mae >= 0.0 && s.p90 >= 0.0);
        prop_assert!((s.variance - (s.rmse * s.rmse - s.mean * s.mean)).abs() <= 1e-9 * (s.rmse * s.rmse).max(1e-12));
    }

    #[test]
    fn confusion_partitions_points(
        labels in prop::collection::vec(any::<bool>(), 1..200),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 0..100),
    ) {
        let labels: Vec<MotionLabel> = labels.into_iter().map(|d| if d { MotionLabel::Dynamic } else { MotionLabel::Static }).collect();
        let mut removed: Vec<usize> = picks.iter().map(|ix| ix.index(labels.len())).collect();
        removed.sort_unstable();
        removed.dedup();
        let c = confusion(&labels, &removed).unwrap();
        prop_assert_eq!(c.tp + c.fp + c.fn_ + c.tn, labels.len());
        prop_assert_eq!(c.tp + c.fp, removed.len());
        if let Some(p) = c.precision {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
