//! Axis-aligned bounding-volume hierarchy over triangles for closest-point
//! queries.

use crate::math::{Aabb, Vec3};
use crate::spatial::triangle::closest_point_on_triangle;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestHit {
    /// Index into the face list the BVH was built from.
    pub face: usize,
    pub point: Vec3,
    pub bary: [f64; 3],
    pub dist_sq: f64,
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    // leaf: [start, end) into `order`; inner: children
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl TriangleBvh {
    pub fn new(vertices: &[Vec3], faces: &[[u32; 3]]) -> Self {
        let tris: Vec<[Vec3; 3]> = faces
            .iter()
            .map(|f| {
                [
                    vertices[f[0] as usize],
                    vertices[f[1] as usize],
                    vertices[f[2] as usize],
                ]
            })
            .collect();
        let mut bvh = Self {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        if !bvh.tris.is_empty() {
            let centroids: Vec<Vec3> = bvh
                .tris
                .iter()
                .map(|t| (t[0] + t[1] + t[2]) / 3.0)
                .collect();
            bvh.build(0, bvh.tris.len(), &centroids);
        }
        bvh
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    fn tri_bounds(&self, start: usize, end: usize) -> Aabb {
        let mut b = Aabb::from_points(self.tris[self.order[start]].iter()).unwrap();
        for &i in &self.order[start + 1..end] {
            for p in &self.tris[i] {
                b.grow(p);
            }
        }
        b
    }

    fn build(&mut self, start: usize, end: usize, centroids: &[Vec3]) -> usize {
        let id = self.nodes.len();
        let bounds = self.tri_bounds(start, end);
        self.nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let mut cb = Aabb::from_points(std::iter::once(&centroids[self.order[start]])).unwrap();
        for &i in &self.order[start..end] {
            cb.grow(&centroids[i]);
        }
        let axis = cb.extent().imax();
        if cb.extent()[axis] <= 0.0 {
            return id;
        }
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis])
        });
        let left = self.build(start, mid, centroids);
        let right = self.build(mid, end, centroids);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    /// Exact closest point on the triangle set; ties go to the smaller face.
    pub fn closest(&self, p: &Vec3) -> Option<ClosestHit> {
        if self.tris.is_empty() {
            return None;
        }
        let mut best: Option<ClosestHit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let bound = node.bounds.distance_sq(p);
            if let Some(b) = &best {
                // slack keeps rounding in the box bound from pruning a tie
                if bound > b.dist_sq * (1.0 + 1e-9) + 1e-300 {
                    continue;
                }
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &fi in &self.order[start..end] {
                        let t = &self.tris[fi];
                        let (q, w) = closest_point_on_triangle(p, &t[0], &t[1], &t[2]);
                        let d = (p - q).norm_squared();
                        let better = match &best {
                            None => true,
                            Some(b) => d < b.dist_sq || (d == b.dist_sq && fi < b.face),
                        };
                        if better {
                            best = Some(ClosestHit {
                                face: fi,
                                point: q,
                                bary: w,
                                dist_sq: d,
                            });
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left].bounds.distance_sq(p);
                    let dr = self.nodes[right].bounds.distance_sq(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }
}
