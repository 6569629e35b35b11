// SPDX-License-Identifier: Apache-2.0

//! End-to-end behaviour on generated scenes.

use dynahull::cloud::{encode_pcd, CloudFormat, MotionLabel, PointCloud};
use dynahull::filter::{density_field, filter_map, DynaHullParams};
use dynahull::ground::segment_ground;
use dynahull::metrics::chamfer;
use dynahull::scenegen::{generate_scene, ground_truth_cloud, LabeledScene, ScenarioConfig};

/// Mean density of (static, dynamic) non-ground points.
fn class_densities(scene: &LabeledScene) -> (f64, f64) {
    let params = DynaHullParams::default();
    let split = segment_ground(&scene.cloud, &params.ground).unwrap();
    let nonground = scene.cloud.select(&split.nonground_indices);
    let field = density_field(nonground.points(), params.k_neighbors, params.vol_floor).unwrap();
    let (mut s, mut ns, mut d, mut nd) = (0.0, 0usize, 0.0, 0usize);
    for (v, l) in field.densities.iter().zip(nonground.labels().unwrap()) {
        match l {
            MotionLabel::Static => {
                s += v;
                ns += 1;
            }
            MotionLabel::Dynamic => {
                d += v;
                nd += 1;
            }
        }
    }
    (s / ns as f64, d / nd as f64)
}

fn reference_with_frames(n_frames: usize) -> LabeledScene {
    generate_scene(&ScenarioConfig {
        n_frames,
        ..ScenarioConfig::reference()
    })
    .unwrap()
}

#[test]
fn static_points_are_denser_on_reference() {
    let (s, d) = class_densities(&reference_with_frames(50));
    assert!(s > d);
    assert!(s >= 3.0 * d, "static {s} dynamic {d}");
}

#[test]
fn accumulation_separates_classes() {
    let runs: Vec<(f64, f64)> = [5, 20, 50]
        .iter()
        .map(|&f| class_densities(&reference_with_frames(f)))
        .collect();
    for w in runs.windows(2) {
        let ((s0, d0), (s1, d1)) = (w[0], w[1]);
        assert!(s1 > s0);
        assert!(s1 / d1 > s0 / d0);
    }
    // Static grows with the frame count; dynamic grows far slower.
    let static_growth = runs[2].0 / runs[0].0;
    let dynamic_growth = runs[2].1 / runs[0].1;
    assert!(dynamic_growth < 10.0);
    assert!(static_growth > 2.0 * dynamic_growth);
}

#[test]
#[ignore = "measured ratio on the reference scene at one frame is 2.79: flat walls give thinner hulls than curved actors even without accumulation"]
fn single_frame_classes_are_similar() {
    let (s, d) = class_densities(&reference_with_frames(1));
    assert!(s / d < 2.0, "ratio {}", s / d);
}

#[test]
fn ground_truth_differs_from_full_scene() {
    let scene = reference_with_frames(10);
    let truth = ground_truth_cloud(&scene);
    assert_eq!(truth.len(), scene.label_counts().0);
    assert!(chamfer(&truth, &scene.cloud).unwrap() > 0.0);
}

fn small_scene() -> LabeledScene {
    generate_scene(&ScenarioConfig {
        n_frames: 10,
        points_per_frame_static: 800,
        points_per_actor_frame: 20,
        ..ScenarioConfig::reference()
    })
    .unwrap()
}

#[test]
fn filter_conserves_points_and_keeps_ground() {
    let scene = small_scene();
    let r = filter_map(&scene.cloud, &DynaHullParams::default()).unwrap();
    assert!(r.ground_found);
    assert_eq!(
        r.filtered.len() + r.removed_indices.len(),
        scene.cloud.len()
    );
    let mut seen = vec![false; scene.cloud.len()];
    for &i in &r.removed_indices {
        assert!(!seen[i]);
        seen[i] = true;
    }
    for &g in &r.ground.ground_indices {
        assert!(!seen[g]);
    }
    let removed_total: usize = r.plan.iter().map(|p| p.removed).sum();
    assert_eq!(removed_total, r.removed_indices.len());
    for p in &r.plan {
        assert!(p.removal_pct >= 5.0 && p.removal_pct <= 20.0);
        assert_eq!(
            p.removed,
            (p.removal_pct / 100.0 * p.count as f64 + 1e-9).floor() as usize
        );
    }
    // Filtered output is the retained points followed by ground.
    let kept = r.filtered.len() - r.ground.ground_indices.len();
    assert_eq!(
        &r.filtered.points()[kept..],
        scene.cloud.select(&r.ground.ground_indices).points()
    );
}

#[test]
fn filter_output_is_byte_identical_across_runs() {
    let scene = small_scene();
    let params = DynaHullParams {
        seed: 7,
        ..DynaHullParams::default()
    };
    let encode = |c: &PointCloud| encode_pcd(c, CloudFormat::PcdBinary).unwrap();
    let a = filter_map(&scene.cloud, &params).unwrap();
    let b = filter_map(&scene.cloud, &params).unwrap();
    assert_eq!(encode(&a.filtered), encode(&b.filtered));
    assert_eq!(a.removed_indices, b.removed_indices);
}

#[test]
fn filtering_moves_map_toward_truth() {
    let scene = small_scene();
    let truth = ground_truth_cloud(&scene);
    let r = filter_map(&scene.cloud, &DynaHullParams::default()).unwrap();
    assert!(chamfer(&r.filtered, &truth).unwrap() < chamfer(&scene.cloud, &truth).unwrap());
}
