// SPDX-License-Identifier: Apache-2.0

//! Exact k-nearest-neighbor search with a static 3-d tree.
//!
//! Results are ordered by `(squared distance, source index)`, so equal
//! distances always come back in ascending index order regardless of how
//! the tree happened to split the input.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cloud::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced k-d tree over a fixed point sequence.
#[derive(Debug, Clone)]
pub struct KdTree3 {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Neighbors of a query, nearest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnnResult {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl KnnResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl KdTree3 {
    pub fn build(points: &[Point3]) -> Self {
        let mut tree = KdTree3 {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p.coord(a));
                hi[a] = hi[a].max(p.coord(a));
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a]
                .coord(axis)
                .total_cmp(&points[b].coord(axis))
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]].coord(axis);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// The `k` nearest points to `query`, including any point equal to it.
    pub fn knn(&self, query: Point3, k: usize) -> KnnResult {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(query, k, &mut heap);
        let sorted = heap.into_sorted_vec();
        KnnResult {
            indices: sorted.iter().map(|c| c.index).collect(),
            distances: sorted.iter().map(|c| c.d2.sqrt()).collect(),
        }
    }

    /// Like [`KdTree3::knn`] but only the indices, written into `out`.
    pub fn knn_indices_into(&self, query: Point3, k: usize, out: &mut Vec<usize>) {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(query, k, &mut heap);
        out.clear();
        out.extend(heap.into_sorted_vec().into_iter().map(|c| c.index));
    }

    /// Nearest point index and its distance.
    pub fn nearest(&self, query: Point3) -> Option<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(2);
        self.search(query, 1, &mut heap);
        heap.pop().map(|c| (c.index, c.d2.sqrt()))
    }

    fn search(&self, query: Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        if k == 0 || self.nodes.is_empty() {
            return;
        }
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, 0.0));
        while let Some((id, bound)) = stack.pop() {
            if heap.len() == k {
                // Equal bound may still hold a lower-index tie.
                if bound > heap.peek().map_or(f64::INFINITY, |c| c.d2) {
                    continue;
                }
            }
            match self.nodes[id] {
                Node::Leaf { start, end } => {
                    for &index in &self.order[start..end] {
                        let cand = Candidate {
                            d2: query.distance_squared(self.points[index]),
                            index,
                        };
                        if heap.len() < k {
                            heap.push(cand);
                        } else if let Some(top) = heap.peek() {
                            if cand < *top {
                                heap.pop();
                                heap.push(cand);
                            }
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = query.coord(axis) - value;
                    let (near, far) = if diff < 0.0 {
                        (left, right)
                    } else {
                        (right, left)
                    };
                    let far_bound = bound.max(diff * diff);
                    // Far side goes on the stack first so the near side is searched first.
                    stack.push((far, far_bound));
                    stack.push((near, bound));
                }
            }
        }
    }
}
