//! Triangle meshes, multi-instance scenes and the topology helpers every
//! later stage relies on (face/vertex normals, bounding boxes, adjacency).

use std::collections::BTreeSet;

use crate::error::{GeomError, Result};
use crate::math::{Aabb, Vec3};

/// Faces with less area than this (m²) are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// A triangle mesh belonging to one person in a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    vertex_colors: Option<Vec<[f64; 3]>>,
    part_labels: Option<Vec<u32>>,
    instance_id: u32,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>, instance_id: u32) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            vertex_colors: None,
            part_labels: None,
            instance_id,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_colors(mut self, colors: Vec<[f64; 3]>) -> Result<Self> {
        self.vertex_colors = Some(colors);
        self.validate()?;
        Ok(self)
    }

    pub fn with_part_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        self.part_labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    /// Replace vertex positions, keeping topology and attributes.
    pub fn with_vertices(mut self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(GeomError::InvalidMesh(format!(
                "vertex count changed from {} to {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeomError::InvalidMesh("non-finite vertex position".into()));
        }
        self.vertices = vertices;
        Ok(self)
    }

    pub fn with_instance_id(mut self, id: u32) -> Self {
        self.instance_id = id;
        self
    }

    pub fn without_colors(mut self) -> Self {
        self.vertex_colors = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(GeomError::InvalidMesh(format!(
                    "face {fi} references a vertex >= {n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeomError::InvalidMesh(format!(
                    "face {fi} repeats a vertex index {f:?}"
                )));
            }
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeomError::InvalidMesh("non-finite vertex position".into()));
        }
        if let Some(colors) = &self.vertex_colors {
            if colors.len() != n {
                return Err(GeomError::InvalidMesh(format!(
                    "{} vertex colors for {n} vertices",
                    colors.len()
                )));
            }
            if colors
                .iter()
                .flatten()
                .any(|c| !(0.0..=1.0).contains(c))
            {
                return Err(GeomError::InvalidMesh(
                    "vertex color channel outside [0,1]".into(),
                ));
            }
        }
        if let Some(labels) = &self.part_labels {
            if labels.len() != n {
                return Err(GeomError::InvalidMesh(format!(
                    "{} part labels for {n} vertices",
                    labels.len()
                )));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn vertex_colors(&self) -> Option<&[[f64; 3]]> {
        self.vertex_colors.as_deref()
    }

    pub fn part_labels(&self) -> Option<&[u32]> {
        self.part_labels.as_deref()
    }

    pub fn instance_id(&self) -> u32 {
        self.instance_id
    }

    pub fn face_positions(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_positions(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Face part label by majority vote of its vertices; ties go to the
    /// smallest label.
    pub fn face_part(&self, face: usize) -> Option<u32> {
        let labels = self.part_labels.as_ref()?;
        let f = self.faces[face];
        let l = [
            labels[f[0] as usize],
            labels[f[1] as usize],
            labels[f[2] as usize],
        ];
        if l[0] == l[1] || l[0] == l[2] {
            Some(l[0])
        } else if l[1] == l[2] {
            Some(l[1])
        } else {
            l.iter().min().copied()
        }
    }

    /// Distinct part labels present on this mesh.
    pub fn parts(&self) -> BTreeSet<u32> {
        self.part_labels
            .as_ref()
            .map(|l| l.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Undirected vertex adjacency lists built from face edges.
    pub fn vertex_adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                adj[a as usize].insert(b);
                adj[b as usize].insert(a);
            }
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

/// Per-element normals with the indices of elements that had no well-defined
/// normal (degenerate faces, isolated vertices). Those carry the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Normals {
    pub normals: Vec<Vec3>,
    pub flagged: Vec<usize>,
}

/// Unit face normals following the right-hand rule of the vertex winding.
pub fn compute_face_normals(mesh: &Mesh) -> Normals {
    let mut normals = Vec::with_capacity(mesh.faces.len());
    let mut flagged = Vec::new();
    for fi in 0..mesh.faces.len() {
        let [a, b, c] = mesh.face_positions(fi);
        let cross = (b - a).cross(&(c - a));
        let norm = cross.norm();
        if 0.5 * norm < DEGENERATE_AREA {
            normals.push(Vec3::zeros());
            flagged.push(fi);
        } else {
            normals.push(cross / norm);
        }
    }
    Normals { normals, flagged }
}

/// Area-weighted vertex normals. Vertices with no incident (non-degenerate)
/// face are flagged and get the zero vector.
pub fn compute_vertex_normals(mesh: &Mesh) -> Normals {
    let sums = vertex_normal_sums(mesh.vertices(), mesh.faces());
    let mut flagged = Vec::new();
    let normals = sums
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let n = w.norm();
            if n <= f64::MIN_POSITIVE * 1e6 || 0.5 * n < DEGENERATE_AREA {
                flagged.push(i);
                Vec3::zeros()
            } else {
                w / n
            }
        })
        .collect();
    Normals { normals, flagged }
}

/// Unnormalised area-weighted normal sums (sum of incident face cross
/// products). Shared with the differentiable renderer.
pub(crate) fn vertex_normal_sums(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut sums = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let a = vertices[f[0] as usize];
        let b = vertices[f[1] as usize];
        let c = vertices[f[2] as usize];
        let cross = (b - a).cross(&(c - a));
        for &i in f {
            sums[i as usize] += cross;
        }
    }
    sums
}

/// A set of person meshes sharing one coordinate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    instances: Vec<Mesh>,
}

impl Scene {
    pub fn new(instances: Vec<Mesh>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for m in &instances {
            if !seen.insert(m.instance_id()) {
                return Err(GeomError::InvalidScene(format!(
                    "duplicate instance id {}",
                    m.instance_id()
                )));
            }
        }
        Ok(Self { instances })
    }

    pub fn instances(&self) -> &[Mesh] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Mesh> {
        self.instances
    }

    pub fn is_empty(&self) -> bool {
        self.instances.iter().all(|m| m.vertices().is_empty())
    }

    pub fn instance(&self, id: u32) -> Option<&Mesh> {
        self.instances.iter().find(|m| m.instance_id() == id)
    }

    pub fn vertex_count(&self) -> usize {
        self.instances.iter().map(|m| m.vertices().len()).sum()
    }

    pub fn face_count(&self) -> usize {
        self.instances.iter().map(|m| m.faces().len()).sum()
    }

    /// Offset of each instance's first face in the scene-global face numbering.
    pub fn face_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.instances.len());
        let mut acc = 0;
        for m in &self.instances {
            offsets.push(acc);
            acc += m.faces().len();
        }
        offsets
    }

    /// Map a scene-global face index to (instance position, local face).
    pub fn face_owner(&self, global: usize) -> Option<(usize, usize)> {
        let mut acc = 0;
        for (k, m) in self.instances.iter().enumerate() {
            if global < acc + m.faces().len() {
                return Some((k, global - acc));
            }
            acc += m.faces().len();
        }
        None
    }

    /// Replace the vertices of every instance (same order as `instances()`).
    pub fn with_vertices(self, vertices: Vec<Vec<Vec3>>) -> Result<Self> {
        if vertices.len() != self.instances.len() {
            return Err(GeomError::InvalidScene("instance count changed".into()));
        }
        let instances = self
            .instances
            .into_iter()
            .zip(vertices)
            .map(|(m, v)| m.with_vertices(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { instances })
    }

    pub fn map_instances(self, f: impl FnMut(Mesh) -> Result<Mesh>) -> Result<Self> {
        Scene::new(self.instances.into_iter().map(f).collect::<Result<Vec<_>>>()?)
    }
}

/// Axis-aligned bounds over all instance vertices.
pub fn bounding_box(scene: &Scene) -> Result<Aabb> {
    Aabb::from_points(scene.instances().iter().flat_map(|m| m.vertices().iter()))
        .ok_or_else(|| GeomError::Empty("scene has no vertices".into()))
}
