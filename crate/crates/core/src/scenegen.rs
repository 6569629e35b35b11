// SPDX-License-Identifier: Apache-2.0

//! Synthetic labeled indoor scenes: a box-shaped room with static furniture
//! boxes, scanned over many frames while capsule-shaped actors walk around.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cloud::{MotionLabel, Point3, PointCloud};
use crate::ground::Plane;

/// Pinned reference scenario used by the acceptance suite.
pub const REFERENCE_SCENARIO_JSON: &str = include_str!("../../../scenarios/reference.json");

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSize {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorShape {
    pub radius: f64,
    /// Total capsule height, caps included.
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub room: RoomSize,
    pub n_frames: usize,
    #[serde(default)]
    pub static_boxes: Vec<BoxSpec>,
    pub n_actors: usize,
    pub actor_shape: ActorShape,
    /// Meters per frame, `[min, max]`.
    pub actor_speed: [f64; 2],
    pub points_per_frame_static: usize,
    pub points_per_actor_frame: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub mobility: Mobility,
    /// Scan the ceiling as a static surface too.
    #[serde(default)]
    pub ceiling: bool,
}

/// How actors choose where to walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mobility {
    /// Straight legs between uniformly drawn destinations.
    #[default]
    RandomWaypoint,
    /// Straight legs of random heading and duration; turns away from walls and boxes.
    RandomDirection,
}

impl ScenarioConfig {
    pub fn reference() -> ScenarioConfig {
        serde_json::from_str(REFERENCE_SCENARIO_JSON).expect("bundled reference scenario parses")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: &str| Err(ScenarioError::InvalidConfig(msg.to_string()));
        let RoomSize {
            length,
            width,
            height,
        } = self.room;
        if !(length > 0.0 && width > 0.0 && height > 0.0)
            || ![length, width, height].iter().all(|v| v.is_finite())
        {
            return bad("room dimensions must be positive and finite");
        }
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        for b in &self.static_boxes {
            if (0..3)
                .any(|a| b.max[a] <= b.min[a] || !b.min[a].is_finite() || !b.max[a].is_finite())
            {
                return bad("static box must have positive extent on every axis");
            }
        }
        if self.n_actors > 0 {
            let ActorShape { radius, height } = self.actor_shape;
            if !(radius > 0.0 && height >= 2.0 * radius && radius.is_finite() && height.is_finite())
            {
                return bad("actor shape needs radius > 0 and height >= 2 * radius");
            }
            let [lo, hi] = self.actor_speed;
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return bad("actor_speed must satisfy 0 < min <= max");
            }
            if 2.0 * (radius + WALL_MARGIN) >= length.min(width) {
                return bad("actors do not fit in the room");
            }
        }
        Ok(())
    }
}

const WALL_MARGIN: f64 = 0.1;

/// A planar parallelogram `origin + s*u + t*v`, `s, t` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub origin: Point3,
    pub u: Point3,
    pub v: Point3,
}

impl Patch {
    pub fn area(&self) -> f64 {
        self.u.cross(self.v).norm()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Point3 {
        let s: f64 = rng.random();
        let t: f64 = rng.random();
        self.origin + self.u * s + self.v * t
    }

    /// Euclidean distance from `p` to the patch (rectangles only: `u ⟂ v`).
    pub fn distance(&self, p: Point3) -> f64 {
        let d = p - self.origin;
        let s = (d.dot(self.u) / self.u.norm_squared()).clamp(0.0, 1.0);
        let t = (d.dot(self.v) / self.v.norm_squared()).clamp(0.0, 1.0);
        p.distance(self.origin + self.u * s + self.v * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    Surface { index: usize },
    Actor { actor: usize, frame: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub cloud: PointCloud,
    pub true_ground_plane: Plane,
    /// Capsule base position (on the floor) for every actor and frame.
    pub actor_trajectories: Vec<Vec<Point3>>,
    pub surfaces: Vec<Patch>,
    pub sources: Vec<PointSource>,
    pub actor_shape: ActorShape,
}

impl LabeledScene {
    /// Distance from `p` to the surface it was generated from.
    pub fn distance_to_source(&self, p: Point3, source: PointSource) -> f64 {
        match source {
            PointSource::Surface { index } => self.surfaces[index].distance(p),
            PointSource::Actor { actor, frame } => {
                capsule_distance(p, self.actor_trajectories[actor][frame], self.actor_shape)
            }
        }
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let labels = self.cloud.labels().unwrap_or(&[]);
        let dynamic = labels
            .iter()
            .filter(|l| **l == MotionLabel::Dynamic)
            .count();
        (labels.len() - dynamic, dynamic)
    }

    /// Sidecar content: ground plane, actor paths and label counts.
    pub fn provenance_json(&self, config: &ScenarioConfig) -> Value {
        let (n_static, n_dynamic) = self.label_counts();
        let paths: Vec<Vec<[f64; 3]>> = self
            .actor_trajectories
            .iter()
            .map(|t| t.iter().map(|p| p.to_array()).collect())
            .collect();
        json!({
            "version": env!("CARGO_PKG_VERSION"),
            "scenario": config,
            "ground_plane": {
                "normal": self.true_ground_plane.normal.to_array(),
                "offset": self.true_ground_plane.offset,
            },
            "actor_trajectories": paths,
            "counts": { "static": n_static, "dynamic": n_dynamic, "total": self.cloud.len() },
        })
    }
}

fn capsule_distance(p: Point3, base: Point3, shape: ActorShape) -> f64 {
    let lo = base.z + shape.radius;
    let hi = base.z + shape.height - shape.radius;
    let axis = Point3::new(base.x, base.y, p.z.clamp(lo, hi));
    (p.distance(axis) - shape.radius).abs()
}

fn room_surfaces(config: &ScenarioConfig) -> Vec<Patch> {
    let RoomSize {
        length: l,
        width: w,
        height: h,
    } = config.room;
    let p = Point3::new;
    let mut out = vec![
        Patch {
            origin: p(0.0, 0.0, 0.0),
            u: p(l, 0.0, 0.0),
            v: p(0.0, w, 0.0),
        },
        Patch {
            origin: p(0.0, 0.0, 0.0),
            u: p(l, 0.0, 0.0),
            v: p(0.0, 0.0, h),
        },
        Patch {
            origin: p(0.0, w, 0.0),
            u: p(l, 0.0, 0.0),
            v: p(0.0, 0.0, h),
        },
        Patch {
            origin: p(0.0, 0.0, 0.0),
            u: p(0.0, w, 0.0),
            v: p(0.0, 0.0, h),
        },
        Patch {
            origin: p(l, 0.0, 0.0),
            u: p(0.0, w, 0.0),
            v: p(0.0, 0.0, h),
        },
    ];
    if config.ceiling {
        out.push(Patch {
            origin: p(0.0, 0.0, h),
            u: p(l, 0.0, 0.0),
            v: p(0.0, w, 0.0),
        });
    }
    for b in &config.static_boxes {
        let [x0, y0, z0] = b.min;
        let [x1, y1, z1] = b.max;
        let (dx, dy, dz) = (x1 - x0, y1 - y0, z1 - z0);
        // The underside is hidden against the floor.
        out.extend([
            Patch {
                origin: p(x0, y0, z1),
                u: p(dx, 0.0, 0.0),
                v: p(0.0, dy, 0.0),
            },
            Patch {
                origin: p(x0, y0, z0),
                u: p(dx, 0.0, 0.0),
                v: p(0.0, 0.0, dz),
            },
            Patch {
                origin: p(x0, y1, z0),
                u: p(dx, 0.0, 0.0),
                v: p(0.0, 0.0, dz),
            },
            Patch {
                origin: p(x0, y0, z0),
                u: p(0.0, dy, 0.0),
                v: p(0.0, 0.0, dz),
            },
            Patch {
                origin: p(x1, y0, z0),
                u: p(0.0, dy, 0.0),
                v: p(0.0, 0.0, dz),
            },
        ]);
    }
    out
}

struct FreeSpace {
    x: (f64, f64),
    y: (f64, f64),
    obstacles: Vec<(f64, f64, f64, f64)>,
}

impl FreeSpace {
    fn new(config: &ScenarioConfig) -> Self {
        let m = config.actor_shape.radius + WALL_MARGIN;
        FreeSpace {
            x: (m, config.room.length - m),
            y: (m, config.room.width - m),
            obstacles: config
                .static_boxes
                .iter()
                .map(|b| (b.min[0] - m, b.min[1] - m, b.max[0] + m, b.max[1] + m))
                .collect(),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x.0
            && x <= self.x.1
            && y >= self.y.0
            && y <= self.y.1
            && !self
                .obstacles
                .iter()
                .any(|&(x0, y0, x1, y1)| x > x0 && x < x1 && y > y0 && y < y1)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Option<(f64, f64)> {
        (0..1000).find_map(|_| {
            let x = rng.random_range(self.x.0..=self.x.1);
            let y = rng.random_range(self.y.0..=self.y.1);
            self.contains(x, y).then_some((x, y))
        })
    }

    fn segment_clear(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        let steps = 32;
        (0..=steps).all(|i| {
            let t = i as f64 / steps as f64;
            self.contains(a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
        })
    }
}

fn random_waypoint_path<R: Rng>(
    space: &FreeSpace,
    n_frames: usize,
    speed: [f64; 2],
    rng: &mut R,
) -> Result<Vec<Point3>, ScenarioError> {
    let no_room = || ScenarioError::InvalidConfig("no free floor space for actors".into());
    let mut pos = space.sample(rng).ok_or_else(no_room)?;
    let mut target = pos;
    let mut v = speed[0];
    let mut path = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        path.push(Point3::new(pos.0, pos.1, 0.0));
        let mut budget = v;
        while budget > 0.0 {
            let (dx, dy) = (target.0 - pos.0, target.1 - pos.1);
            let dist = dx.hypot(dy);
            if dist <= budget {
                pos = target;
                budget -= dist;
                v = rng.random_range(speed[0]..=speed[1]);
                target = (0..200)
                    .filter_map(|_| space.sample(rng))
                    .find(|&t| space.segment_clear(pos, t))
                    .unwrap_or(pos);
                if target == pos {
                    break;
                }
            } else {
                pos = (pos.0 + dx / dist * budget, pos.1 + dy / dist * budget);
                budget = 0.0;
            }
        }
    }
    Ok(path)
}

fn random_direction_path<R: Rng>(
    space: &FreeSpace,
    n_frames: usize,
    speed: [f64; 2],
    rng: &mut R,
) -> Result<Vec<Point3>, ScenarioError> {
    let mut pos = space
        .sample(rng)
        .ok_or_else(|| ScenarioError::InvalidConfig("no free floor space for actors".into()))?;
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut v = rng.random_range(speed[0]..=speed[1]);
    let mut leg = rng.random_range(5..=30usize);
    let mut path = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        path.push(Point3::new(pos.0, pos.1, 0.0));
        if leg == 0 {
            heading = rng.random_range(0.0..std::f64::consts::TAU);
            v = rng.random_range(speed[0]..=speed[1]);
            leg = rng.random_range(5..=30usize);
        }
        leg -= 1;
        let step = |h: f64| (pos.0 + v * h.cos(), pos.1 + v * h.sin());
        if !space.segment_clear(pos, step(heading)) {
            match (0..64)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .find(|&h| space.segment_clear(pos, step(h)))
            {
                Some(h) => heading = h,
                None => continue,
            }
        }
        pos = step(heading);
    }
    Ok(path)
}

/// Area-uniform point on the capsule surface standing at `base`.
fn sample_capsule<R: Rng>(base: Point3, shape: ActorShape, rng: &mut R) -> Point3 {
    let r = shape.radius;
    let body = shape.height - 2.0 * r;
    let side_area = 2.0 * std::f64::consts::PI * r * body;
    let cap_area = 4.0 * std::f64::consts::PI * r * r;
    if rng.random::<f64>() * (side_area + cap_area) < side_area {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let z = base.z + r + rng.random::<f64>() * body;
        Point3::new(base.x + r * a.cos(), base.y + r * a.sin(), z)
    } else {
        let dir = unit_vector(rng);
        let center_z = if dir.z >= 0.0 {
            base.z + r + body
        } else {
            base.z + r
        };
        Point3::new(base.x, base.y, center_z) + dir * r
    }
}

fn unit_vector<R: Rng>(rng: &mut R) -> Point3 {
    loop {
        let g = Point3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = g.norm();
        if n > 1e-12 {
            return g * (1.0 / n);
        }
    }
}

/// Isotropic Gaussian offset, resampled until it lies within `3 * sigma`.
fn noise<R: Rng>(sigma: f64, rng: &mut R) -> Point3 {
    if sigma == 0.0 {
        return Point3::default();
    }
    loop {
        let g = Point3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if g.norm() <= 3.0 {
            return g * sigma;
        }
    }
}

pub fn generate_scene(config: &ScenarioConfig) -> Result<LabeledScene, ScenarioError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let space = FreeSpace::new(config);
    let trajectories = (0..config.n_actors)
        .map(|_| match config.mobility {
            Mobility::RandomWaypoint => {
                random_waypoint_path(&space, config.n_frames, config.actor_speed, &mut rng)
            }
            Mobility::RandomDirection => {
                random_direction_path(&space, config.n_frames, config.actor_speed, &mut rng)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let surfaces = room_surfaces(config);
    let mut cumulative = Vec::with_capacity(surfaces.len());
    let mut total = 0.0;
    for s in &surfaces {
        total += s.area();
        cumulative.push(total);
    }

    let per_frame =
        config.points_per_frame_static + config.n_actors * config.points_per_actor_frame;
    let capacity = per_frame * config.n_frames;
    let mut points = Vec::with_capacity(capacity);
    let mut labels = Vec::with_capacity(capacity);
    let mut sources = Vec::with_capacity(capacity);
    for frame in 0..config.n_frames {
        for _ in 0..config.points_per_frame_static {
            let pick = rng.random::<f64>() * total;
            let index = cumulative
                .partition_point(|&c| c <= pick)
                .min(surfaces.len() - 1);
            let p = surfaces[index].sample(&mut rng) + noise(config.noise_sigma, &mut rng);
            points.push(p);
            labels.push(MotionLabel::Static);
            sources.push(PointSource::Surface { index });
        }
        for (actor, path) in trajectories.iter().enumerate() {
            for _ in 0..config.points_per_actor_frame {
                let p = sample_capsule(path[frame], config.actor_shape, &mut rng)
                    + noise(config.noise_sigma, &mut rng);
                points.push(p);
                labels.push(MotionLabel::Dynamic);
                sources.push(PointSource::Actor { actor, frame });
            }
        }
    }

    let cloud = PointCloud::with_labels(points, labels).expect("one label per point");
    Ok(LabeledScene {
        cloud,
        true_ground_plane: Plane::horizontal(0.0),
        actor_trajectories: trajectories,
        surfaces,
        sources,
        actor_shape: config.actor_shape,
    })
}

/// The Static-labeled subset of the scene.
pub fn ground_truth_cloud(scene: &LabeledScene) -> PointCloud {
    match scene.cloud.labels() {
        Some(labels) => {
            let keep: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == MotionLabel::Static)
                .map(|(i, _)| i)
                .collect();
            scene.cloud.select(&keep)
        }
        None => scene.cloud.clone(),
    }
}
