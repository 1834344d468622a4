//! Closed triangle meshes for tests, fixtures and demos. All faces wind
//! counter-clockwise seen from outside.

use std::collections::HashMap;

use crate::error::Result;
use crate::math::Vec3;
use crate::mesh::Mesh;

/// Subdivided icosahedron projected onto a sphere.
pub fn icosphere(center: Vec3, radius: f64, subdivisions: usize, instance_id: u32) -> Result<Mesh> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
        (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
        (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) / 2.0).normalize());
                (verts.len() - 1) as u32
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(verts.into_iter().map(|v| center + v * radius).collect(), faces, instance_id)
}

/// Capsule around segment `a → b`: a cylinder of `rings` bands closed by two
/// hemispherical caps of `cap_rings` bands each.
pub fn capsule(
    a: Vec3,
    b: Vec3,
    radius: f64,
    segments: usize,
    rings: usize,
    cap_rings: usize,
    instance_id: u32,
) -> Result<Mesh> {
    let axis = b - a;
    let len = axis.norm();
    let dir = if len > 0.0 { axis / len } else { Vec3::z() };
    let helper = if dir.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = dir.cross(&helper).normalize();
    let v = dir.cross(&u);
    // profile from the bottom pole to the top pole: (axial offset, ring radius)
    let mut profile = Vec::new();
    for i in 1..=cap_rings {
        let th = std::f64::consts::FRAC_PI_2 * (1.0 - i as f64 / cap_rings as f64);
        profile.push((-radius * th.sin(), radius * th.cos()));
    }
    for i in 1..rings {
        profile.push((len * i as f64 / rings as f64, radius));
    }
    for i in 0..cap_rings {
        let th = std::f64::consts::FRAC_PI_2 * i as f64 / cap_rings as f64;
        profile.push((len + radius * th.sin(), radius * th.cos()));
    }
    let mut verts = vec![a - dir * radius];
    for &(h, r) in &profile {
        for s in 0..segments {
            let phi = std::f64::consts::TAU * s as f64 / segments as f64;
            verts.push(a + dir * h + (u * phi.cos() + v * phi.sin()) * r);
        }
    }
    verts.push(b + dir * radius);
    let top = (verts.len() - 1) as u32;
    let ring = |k: usize, s: usize| (1 + k * segments + s % segments) as u32;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(0, s + 1), ring(0, s)]);
    }
    for k in 0..profile.len() - 1 {
        for s in 0..segments {
            faces.push([ring(k, s), ring(k, s + 1), ring(k + 1, s + 1)]);
            faces.push([ring(k, s), ring(k + 1, s + 1), ring(k + 1, s)]);
        }
    }
    let last = profile.len() - 1;
    for s in 0..segments {
        faces.push([top, ring(last, s), ring(last, s + 1)]);
    }
    Mesh::new(verts, faces, instance_id)
}

/// Concatenate meshes into one instance, labelling the vertices of `parts[i]`
/// with `labels[i]`.
pub fn merge(parts: &[Mesh], labels: &[u32], instance_id: u32) -> Result<Mesh> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut lab = Vec::new();
    for (m, &l) in parts.iter().zip(labels) {
        let off = verts.len() as u32;
        verts.extend_from_slice(m.vertices());
        faces.extend(m.faces().iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        lab.extend(std::iter::repeat_n(l, m.vertices().len()));
    }
    Mesh::new(verts, faces, instance_id)?.with_part_labels(lab)
}
