//! Exact k-d tree over points of any fixed dimension.
//!
//! Results are identical to a brute-force scan: neighbours are ordered by
//! `(squared distance, insertion index)` so ties resolve deterministically.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::Point;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

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

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    dim: usize,
    data: Vec<f64>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl SpatialIndex {
    /// Builds an index over `data.len() / dim` points stored row-major.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("index dimension must be >= 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::WidthMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(
                "non-finite coordinate in index".into(),
            ));
        }
        let n = data.len() / dim;
        let mut index = SpatialIndex {
            dim,
            data,
            perm: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            index.build(0, n);
        }
        Ok(index)
    }

    pub fn from_points(points: &[Point]) -> Self {
        let data = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        Self::new(3, data).expect("points are finite")
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(1, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::WidthMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let node_id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return node_id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let (dim, data) = (self.dim, &self.data);
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a * dim + axis]
                .total_cmp(&data[b * dim + axis])
                .then(a.cmp(&b))
        });
        let value = self.data[self.perm[mid] * dim + axis];
        self.nodes.push(Node::Leaf { start, end }); // placeholder
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[node_id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        node_id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for axis in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.perm[start..end] {
                let v = self.data[i * self.dim + axis];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    /// The `min(k, len)` nearest points, ascending by distance then id.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(Error::WidthMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidParams("k must be >= 1".into()));
        }
        let k = k.min(self.len());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_visit(0, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out
            .into_iter()
            .map(|c| Neighbor {
                id: c.id,
                distance: c.d2.sqrt(),
            })
            .collect())
    }

    fn knn_visit(&self, node: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.perm[start..end] {
                    let c = Candidate {
                        d2: squared_distance(q, self.point(id)),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_visit(near, q, k, heap);
                // `<=` keeps equal-distance points with smaller ids reachable.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.knn_visit(far, q, k, heap);
                }
            }
        }
    }

    /// Ids of all points with `‖p - q‖² <= r²`, ascending by id.
    pub fn radius_neighbors(&self, query: &[f64], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.is_empty() || query.len() != self.dim || !(r >= 0.0) {
            return out;
        }
        self.radius_visit(0, query, r * r, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_visit(&self, node: usize, q: &[f64], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.perm[start..end]
                        .iter()
                        .copied()
                        .filter(|&id| squared_distance(q, self.point(id)) <= r2),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.radius_visit(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_visit(right, q, r2, out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    id: usize,
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
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}
