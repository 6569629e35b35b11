// SPDX-License-Identifier: Apache-2.0

//! 3D convex hulls (Quickhull) and hull volume.
//!
//! The construction follows the classic incremental Quickhull loop:
//!
//! 1. seed a tetrahedron from the axis-extreme points,
//! 2. give every remaining point to a face it lies above,
//! 3. take the furthest outside point of a face and flood-fill the faces it
//!    can see; the boundary of that region is the horizon,
//! 4. replace the visible faces by a fan joining the horizon to the point,
//!    handing their outside points to the new faces,
//! 5. stop once no face has an outside point left.
//!
//! Volume is the sum of the tetrahedra spanned by each face and the
//! centroid of the hull vertices. The centroid is strictly inside a
//! non-degenerate hull, so every term is non-negative and the absolute
//! value sum is exact.
//!
//! Inputs are deduplicated by exact coordinate equality before anything
//! else, and all "above the plane" tests use `1e-9 * bbox diagonal`.

use crate::cloud::Point3;

/// Relative tolerance for above-plane tests, scaled by the bbox diagonal.
pub const GEOM_EPS_REL: f64 = 1e-9;

/// Triangulated hull with outward-facing (counter-clockwise) faces.
#[derive(Debug, Clone, PartialEq)]
pub struct HullMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    pub volume: f64,
}

impl HullMesh {
    /// Unit outward normal and plane offset of face `f`.
    pub fn plane(&self, f: usize) -> (Point3, f64) {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let n = (b - a).cross(c - a);
        let len = n.norm();
        let n = if len > 0.0 { n * (1.0 / len) } else { n };
        (n, n.dot(a))
    }

    pub fn edge_count(&self) -> usize {
        self.faces.len() * 3 / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HullOutcome {
    NonDegenerate(HullMesh),
    /// Affine rank of the input: 0 = coincident, 1 = collinear, 2 = coplanar.
    Degenerate {
        rank: u8,
    },
}

impl HullOutcome {
    pub fn volume(&self) -> f64 {
        match self {
            HullOutcome::NonDegenerate(m) => m.volume,
            HullOutcome::Degenerate { .. } => 0.0,
        }
    }

    pub fn mesh(&self) -> Option<&HullMesh> {
        match self {
            HullOutcome::NonDegenerate(m) => Some(m),
            HullOutcome::Degenerate { .. } => None,
        }
    }
}

pub fn convex_hull_3d(points: &[Point3]) -> HullOutcome {
    QuickHull::default().compute(points)
}

/// Hull volume in cubic meters; 0 for degenerate input.
pub fn hull_volume(points: &[Point3]) -> f64 {
    QuickHull::default().volume(points)
}

/// Scale-aware tolerance: `GEOM_EPS_REL` times the bounding-box diagonal.
pub fn geometric_epsilon(points: &[Point3]) -> f64 {
    let (lo, hi) = bounds(points);
    GEOM_EPS_REL * (hi - lo).norm()
}

fn bounds(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    if points.is_empty() {
        (Point3::default(), Point3::default())
    } else {
        (lo, hi)
    }
}

#[derive(Debug, Clone)]
struct Face {
    v: [usize; 3],
    normal: Point3,
    offset: f64,
    /// Neighbor across edge `v[i] -> v[(i + 1) % 3]`.
    adj: [usize; 3],
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(pts: &[Point3], v: [usize; 3]) -> Self {
        let [a, b, c] = v.map(|i| pts[i]);
        let n = (b - a).cross(c - a);
        let len = n.norm();
        let normal = if len > 0.0 {
            n * (1.0 / len)
        } else {
            Point3::default()
        };
        Face {
            v,
            normal,
            offset: normal.dot(a),
            adj: [usize::MAX; 3],
            outside: Vec::new(),
            alive: true,
        }
    }

    #[inline]
    fn distance(&self, p: Point3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Reusable Quickhull workspace. Keeping one per worker avoids
/// re-allocating buffers when computing many small hulls.
#[derive(Debug, Default)]
pub struct QuickHull {
    pts: Vec<Point3>,
    faces: Vec<Face>,
    pending: Vec<usize>,
    visit_stamp: Vec<u32>,
    visible: Vec<bool>,
    stamp: u32,
    horizon: Vec<(usize, usize, usize)>,
    new_faces: Vec<usize>,
    orphans: Vec<usize>,
    queue: Vec<usize>,
    visible_list: Vec<usize>,
}

impl QuickHull {
    pub fn compute(&mut self, points: &[Point3]) -> HullOutcome {
        if let Err(rank) = self.run(points) {
            return HullOutcome::Degenerate { rank };
        }
        let mut remap = vec![usize::MAX; self.pts.len()];
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for f in self.faces.iter().filter(|f| f.alive) {
            let tri = f.v.map(|i| {
                if remap[i] == usize::MAX {
                    remap[i] = vertices.len();
                    vertices.push(self.pts[i]);
                }
                remap[i]
            });
            faces.push(tri);
        }
        let volume = self.fan_volume();
        HullOutcome::NonDegenerate(HullMesh {
            vertices,
            faces,
            volume,
        })
    }

    pub fn volume(&mut self, points: &[Point3]) -> f64 {
        match self.run(points) {
            Ok(()) => self.fan_volume(),
            Err(_) => 0.0,
        }
    }

    /// Sum of |(A-D)·((B-D)×(C-D))|/6 over faces, D = vertex centroid.
    fn fan_volume(&self) -> f64 {
        let mut used = vec![false; self.pts.len()];
        let mut sum = Point3::default();
        let mut count = 0usize;
        for f in self.faces.iter().filter(|f| f.alive) {
            for &i in &f.v {
                if !used[i] {
                    used[i] = true;
                    sum = sum + self.pts[i];
                    count += 1;
                }
            }
        }
        if count == 0 {
            return 0.0;
        }
        let d = sum * (1.0 / count as f64);
        let mut vol = 0.0;
        for f in self.faces.iter().filter(|f| f.alive) {
            let [a, b, c] = f.v.map(|i| self.pts[i]);
            vol += ((a - d).dot((b - d).cross(c - d))).abs() / 6.0;
        }
        vol
    }

    /// Builds the hull into `self.faces`. `Err(rank)` for degenerate input.
    fn run(&mut self, points: &[Point3]) -> Result<(), u8> {
        self.pts.clear();
        // `+ 0.0` folds -0.0 into 0.0 so exact duplicates sort together.
        self.pts.extend(
            points
                .iter()
                .map(|p| Point3::new(p.x + 0.0, p.y + 0.0, p.z + 0.0)),
        );
        self.pts.sort_unstable_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
        });
        self.pts.dedup();
        self.faces.clear();
        self.pending.clear();

        let n = self.pts.len();
        if n == 0 {
            return Err(0);
        }
        let eps = geometric_epsilon(&self.pts);
        let simplex = initial_simplex(&self.pts, eps)?;
        if n < 4 {
            return Err(2);
        }

        let pts = &self.pts;
        let [a, b, c, d] = simplex;
        let centroid = (pts[a] + pts[b] + pts[c] + pts[d]) * 0.25;
        for tri in [[a, b, c], [a, b, d], [a, c, d], [b, c, d]] {
            let mut f = Face::new(pts, tri);
            if f.distance(centroid) > 0.0 {
                f = Face::new(pts, [tri[0], tri[2], tri[1]]);
            }
            self.faces.push(f);
        }
        // Wire adjacency of the tetrahedron by matching reversed edges.
        for i in 0..4 {
            for e in 0..3 {
                let (s, t) = (self.faces[i].v[e], self.faces[i].v[(e + 1) % 3]);
                for j in 0..4 {
                    if i == j {
                        continue;
                    }
                    let fj = &self.faces[j].v;
                    if (0..3).any(|k| fj[k] == t && fj[(k + 1) % 3] == s) {
                        self.faces[i].adj[e] = j;
                    }
                }
            }
        }

        for p in 0..n {
            if simplex.contains(&p) {
                continue;
            }
            for f in self.faces.iter_mut() {
                if f.distance(self.pts[p]) > eps {
                    f.outside.push(p);
                    break;
                }
            }
        }
        self.pending.extend(0..4);
        self.visit_stamp.clear();
        self.visible.clear();
        self.stamp = 0;

        while let Some(fid) = self.pending.pop() {
            if !self.faces[fid].alive || self.faces[fid].outside.is_empty() {
                continue;
            }
            let apex = {
                let f = &self.faces[fid];
                let mut best = f.outside[0];
                let mut best_d = f.distance(self.pts[best]);
                for &p in &f.outside[1..] {
                    let dd = f.distance(self.pts[p]);
                    if dd > best_d {
                        best_d = dd;
                        best = p;
                    }
                }
                best
            };
            self.add_point(fid, apex, eps);
        }
        Ok(())
    }

    fn add_point(&mut self, start: usize, apex: usize, eps: f64) {
        let q = self.pts[apex];
        self.stamp = self.stamp.wrapping_add(1);
        if self.visit_stamp.len() < self.faces.len() {
            self.visit_stamp.resize(self.faces.len(), 0);
            self.visible.resize(self.faces.len(), false);
        }

        // Flood-fill visible faces; record horizon edges (a, b, outer face).
        self.horizon.clear();
        self.visible_list.clear();
        self.queue.clear();
        self.queue.push(start);
        self.visit_stamp[start] = self.stamp;
        self.visible[start] = true;
        while let Some(fid) = self.queue.pop() {
            self.visible_list.push(fid);
            for e in 0..3 {
                let nb = self.faces[fid].adj[e];
                if nb == usize::MAX {
                    continue;
                }
                if self.visit_stamp[nb] != self.stamp {
                    self.visit_stamp[nb] = self.stamp;
                    let vis = self.faces[nb].distance(q) > eps;
                    self.visible[nb] = vis;
                    if vis {
                        self.queue.push(nb);
                    }
                }
                if !self.visible[nb] {
                    let f = &self.faces[fid];
                    self.horizon.push((f.v[e], f.v[(e + 1) % 3], nb));
                }
            }
        }

        self.orphans.clear();
        for &fid in &self.visible_list {
            let f = &mut self.faces[fid];
            f.alive = false;
            self.orphans
                .extend(f.outside.drain(..).filter(|&p| p != apex));
        }

        // Fan of new faces from the horizon to the apex.
        self.new_faces.clear();
        for &(a, b, outer) in &self.horizon {
            let id = self.faces.len();
            let mut f = Face::new(&self.pts, [a, b, apex]);
            f.adj[0] = outer;
            self.faces.push(f);
            let o = &mut self.faces[outer];
            for e in 0..3 {
                if o.v[e] == b && o.v[(e + 1) % 3] == a {
                    o.adj[e] = id;
                }
            }
            self.new_faces.push(id);
        }
        for &id in &self.new_faces {
            let [a, b, _] = self.faces[id].v;
            // Edge b -> apex is shared with the fan face whose horizon edge starts at b;
            // edge apex -> a with the one whose horizon edge ends at a.
            let next = self
                .new_faces
                .iter()
                .copied()
                .find(|&g| self.faces[g].v[0] == b);
            let prev = self
                .new_faces
                .iter()
                .copied()
                .find(|&g| self.faces[g].v[1] == a);
            self.faces[id].adj[1] = next.unwrap_or(usize::MAX);
            self.faces[id].adj[2] = prev.unwrap_or(usize::MAX);
        }

        for &p in &self.orphans {
            let pt = self.pts[p];
            for &id in &self.new_faces {
                if self.faces[id].distance(pt) > eps {
                    self.faces[id].outside.push(p);
                    break;
                }
            }
        }
        for &id in &self.new_faces {
            if !self.faces[id].outside.is_empty() {
                self.pending.push(id);
            }
        }
    }
}

/// Tetrahedron from the axis-extreme points, or the affine rank if none
/// with non-negligible volume exists.
fn initial_simplex(pts: &[Point3], eps: f64) -> Result<[usize; 4], u8> {
    let mut extremes = [0usize; 6];
    for axis in 0..3 {
        let (mut lo, mut hi) = (0, 0);
        for (i, p) in pts.iter().enumerate() {
            if p.coord(axis) < pts[lo].coord(axis) {
                lo = i;
            }
            if p.coord(axis) > pts[hi].coord(axis) {
                hi = i;
            }
        }
        extremes[2 * axis] = lo;
        extremes[2 * axis + 1] = hi;
    }
    let (mut a, mut b, mut best) = (0, 0, -1.0);
    for i in 0..6 {
        for j in i + 1..6 {
            let d = pts[extremes[i]].distance_squared(pts[extremes[j]]);
            if d > best {
                best = d;
                a = extremes[i];
                b = extremes[j];
            }
        }
    }
    if best.sqrt() <= eps {
        return Err(0);
    }

    let dir = pts[b] - pts[a];
    let dir_len = dir.norm();
    let (mut c, mut best) = (0, -1.0);
    for (i, p) in pts.iter().enumerate() {
        let d = (*p - pts[a]).cross(dir).norm() / dir_len;
        if d > best {
            best = d;
            c = i;
        }
    }
    if best <= eps {
        return Err(1);
    }

    let n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    let n = n * (1.0 / n.norm());
    let (mut d, mut best) = (0, -1.0);
    for (i, p) in pts.iter().enumerate() {
        let dist = (*p - pts[a]).dot(n).abs();
        if dist > best {
            best = dist;
            d = i;
        }
    }
    if best <= eps {
        return Err(2);
    }
    Ok([a, b, c, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn unit_tet() -> Vec<Point3> {
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ]
    }

    fn cube_corners() -> Vec<Point3> {
        let mut v = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    v.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        v
    }

    fn check_mesh(points: &[Point3], mesh: &HullMesh) {
        let eps = geometric_epsilon(points);
        for f in 0..mesh.faces.len() {
            let (n, off) = mesh.plane(f);
            for p in points {
                assert!(n.dot(*p) - off <= eps * 10.0, "point outside face {f}");
            }
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &mesh.faces {
            for e in 0..3 {
                *edges.entry((t[e], t[(e + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &edges {
            assert_eq!(count, 1, "directed edge repeated");
            assert_eq!(edges.get(&(b, a)), Some(&1), "edge not shared by two faces");
        }
        let v = mesh.vertices.len() as i64;
        let e = (edges.len() / 2) as i64;
        let f = mesh.faces.len() as i64;
        assert_eq!(v - e + f, 2);
    }

    #[test]
    fn tetrahedron() {
        let h = convex_hull_3d(&unit_tet());
        let m = h.mesh().expect("non-degenerate");
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces.len(), 4);
        assert!((m.volume - 1.0 / 6.0).abs() < 1e-12);
        check_mesh(&unit_tet(), m);
    }

    #[test]
    fn cube_with_interior_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = cube_corners();
        for _ in 0..100 {
            pts.push(Point3::new(
                rng.random_range(0.01..0.99),
                rng.random_range(0.01..0.99),
                rng.random_range(0.01..0.99),
            ));
        }
        let h = convex_hull_3d(&pts);
        let m = h.mesh().unwrap();
        let mut verts = m.vertices.clone();
        verts.sort_by(|a, b| a.to_array().partial_cmp(&b.to_array()).unwrap());
        assert_eq!(verts, cube_corners());
        assert!((m.volume - 1.0).abs() < 1e-12);
        check_mesh(&pts, m);
    }

    #[test]
    fn degenerate_ranks() {
        assert_eq!(convex_hull_3d(&[]), HullOutcome::Degenerate { rank: 0 });
        assert_eq!(
            convex_hull_3d(&[Point3::new(1.0, 1.0, 1.0); 5]),
            HullOutcome::Degenerate { rank: 0 }
        );
        let line: Vec<Point3> = (0..10)
            .map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0))
            .collect();
        assert_eq!(convex_hull_3d(&line), HullOutcome::Degenerate { rank: 1 });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plane: Vec<Point3> = (0..50)
            .map(|_| Point3::new(rng.random(), rng.random(), 0.0))
            .collect();
        assert_eq!(convex_hull_3d(&plane), HullOutcome::Degenerate { rank: 2 });
        assert_eq!(hull_volume(&plane), 0.0);
        assert_eq!(
            convex_hull_3d(&unit_tet()[..3]),
            HullOutcome::Degenerate { rank: 2 }
        );
    }

    #[test]
    fn duplicates_are_ignored() {
        let mut pts = unit_tet();
        pts.extend(unit_tet());
        pts.push(Point3::new(-0.0, 0.0, 0.0));
        let m = convex_hull_3d(&pts);
        assert_eq!(m.mesh().unwrap().vertices.len(), 4);
    }

    #[test]
    fn sphere_points_all_on_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3> = (0..300)
            .map(|_| {
                let p = Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                p * (1.0 / p.norm())
            })
            .collect();
        let m = convex_hull_3d(&pts);
        let m = m.mesh().unwrap();
        assert_eq!(m.vertices.len(), 300);
        check_mesh(&pts, m);
        let sphere = 4.0 / 3.0 * std::f64::consts::PI;
        assert!(m.volume < sphere && m.volume > 0.95 * sphere);
    }

    #[test]
    fn noisy_planar_patch() {
        // Neighborhoods on walls are nearly flat; the hull must stay valid.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..200 {
            let pts: Vec<Point3> = (0..75)
                .map(|_| {
                    Point3::new(
                        rng.random_range(0.0..0.3),
                        rng.random_range(0.0..0.3),
                        rng.random_range(-1e-4..1e-4) * (trial % 3) as f64,
                    )
                })
                .collect();
            match convex_hull_3d(&pts) {
                HullOutcome::NonDegenerate(m) => {
                    check_mesh(&pts, &m);
                    assert!(m.volume <= 0.09 * 4e-4 + 1e-12);
                }
                HullOutcome::Degenerate { rank } => assert_eq!(rank, 2),
            }
        }
    }

    #[test]
    fn lattice_with_coplanar_faces() {
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    pts.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let m = convex_hull_3d(&pts);
        let m = m.mesh().unwrap();
        assert!((m.volume - 64.0).abs() < 1e-9);
        check_mesh(&pts, m);
    }

    #[test]
    fn workspace_reuse_matches_fresh() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut qh = QuickHull::default();
        for _ in 0..50 {
            let pts: Vec<Point3> = (0..40)
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            assert_eq!(qh.volume(&pts), hull_volume(&pts));
        }
    }
}
