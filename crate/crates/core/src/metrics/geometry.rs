use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GeomError, Result};
use crate::math::Vec3;
use crate::mesh::{compute_face_normals, Mesh, Scene};
use crate::spatial::{KdTree, TriangleBvh};

const CM: f64 = 100.0;

/// Area-uniform surface samples with the normal of the face each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSurface {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub mesh_id: u32,
}

impl SampledSurface {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Concatenation of several sample sets (e.g. the instances of a scene).
    pub fn concat(parts: &[SampledSurface]) -> Self {
        Self {
            points: parts.iter().flat_map(|p| p.points.iter().copied()).collect(),
            normals: parts.iter().flat_map(|p| p.normals.iter().copied()).collect(),
            mesh_id: parts.first().map_or(0, |p| p.mesh_id),
        }
    }
}

pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<SampledSurface> {
    if n == 0 {
        return Err(GeomError::InvalidParameter("sample count must be > 0".into()));
    }
    let normals = compute_face_normals(mesh);
    let mut cdf = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        if !normals.flagged.contains(&f) {
            total += mesh.face_area(f);
        }
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(GeomError::Degenerate("mesh has no face with positive area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut out_normals = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        // first face whose cumulative area exceeds r; zero-area faces never win
        let f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        let [a, b, c] = mesh.face_positions(f);
        points.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
        out_normals.push(normals.normals[f]);
    }
    Ok(SampledSurface {
        points,
        normals: out_normals,
        mesh_id: mesh.instance_id(),
    })
}

fn require(s: &SampledSurface, what: &str) -> Result<()> {
    if s.is_empty() {
        return Err(GeomError::Empty(format!("{what} has no samples")));
    }
    Ok(())
}

/// Nearest neighbour in `to` for every point of `from`: (index, distance).
fn nearest_all(from: &[Vec3], to: &[Vec3]) -> Vec<(usize, f64)> {
    let tree = KdTree::new(to);
    from.iter()
        .map(|p| {
            let (i, d2) = tree.nearest(p).expect("non-empty tree");
            (i, d2.sqrt())
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChamferReduction {
    /// Sum of the two directional means.
    #[default]
    Sum,
    /// Average of the two directional means.
    Mean,
}

/// Bidirectional mean nearest-neighbour distance in centimetres.
pub fn chamfer(p: &SampledSurface, q: &SampledSurface) -> Result<f64> {
    chamfer_with(p, q, ChamferReduction::Sum)
}

pub fn chamfer_with(p: &SampledSurface, q: &SampledSurface, reduction: ChamferReduction) -> Result<f64> {
    require(p, "P")?;
    require(q, "Q")?;
    let pq = mean(nearest_all(&p.points, &q.points).into_iter().map(|(_, d)| d));
    let qp = mean(nearest_all(&q.points, &p.points).into_iter().map(|(_, d)| d));
    let sum = (pq + qp) * CM;
    Ok(match reduction {
        ChamferReduction::Sum => sum,
        ChamferReduction::Mean => sum / 2.0,
    })
}

/// Mean point-to-surface distance of predicted samples to the ground-truth
/// mesh, in centimetres.
pub fn p2s(pred: &SampledSurface, gt: &Mesh) -> Result<f64> {
    p2s_with(pred, gt, false)
}

/// With `squared`, the mean squared distance in cm².
pub fn p2s_with(pred: &SampledSurface, gt: &Mesh, squared: bool) -> Result<f64> {
    require(pred, "prediction")?;
    if gt.faces().is_empty() {
        return Err(GeomError::Empty("ground-truth mesh has no faces".into()));
    }
    let bvh = TriangleBvh::new(gt.vertices(), gt.faces());
    Ok(mean(pred.points.iter().map(|p| {
        let d2 = bvh.closest(p).expect("non-empty bvh").dist_sq;
        if squared {
            d2 * CM * CM
        } else {
            d2.sqrt() * CM
        }
    })))
}

/// Mean cosine between each sample's normal and its nearest neighbour's,
/// averaged over both directions.
pub fn normal_consistency(p: &SampledSurface, q: &SampledSurface) -> Result<f64> {
    require(p, "P")?;
    require(q, "Q")?;
    let pq = mean(
        nearest_all(&p.points, &q.points)
            .into_iter()
            .enumerate()
            .map(|(i, (j, _))| p.normals[i].dot(&q.normals[j])),
    );
    let qp = mean(
        nearest_all(&q.points, &p.points)
            .into_iter()
            .enumerate()
            .map(|(i, (j, _))| q.normals[i].dot(&p.normals[j])),
    );
    Ok(0.5 * (pq + qp))
}

/// F-score in [0, 100] at threshold `tau_cm`: a sample counts when its nearest
/// neighbour on the other set is strictly closer than τ.
pub fn fscore(p: &SampledSurface, q: &SampledSurface, tau_cm: f64) -> Result<f64> {
    require(p, "P")?;
    require(q, "Q")?;
    if !(tau_cm >= 0.0) {
        return Err(GeomError::InvalidParameter(format!("tau must be >= 0, got {tau_cm}")));
    }
    let frac = |from: &[Vec3], to: &[Vec3]| {
        let hits = nearest_all(from, to).iter().filter(|(_, d)| d * CM < tau_cm).count();
        100.0 * hits as f64 / from.len() as f64
    };
    let precision = frac(&p.points, &q.points);
    let recall = frac(&q.points, &p.points);
    Ok(if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    })
}

pub fn bbox_iou(a: &Mesh, b: &Mesh) -> Result<f64> {
    let (Some(ba), Some(bb)) = (a.aabb(), b.aabb()) else {
        return Err(GeomError::Empty("bounding box of an empty mesh".into()));
    };
    Ok(ba.iou(&bb))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPrecision {
    pub cp: f64,
    pub predicted_contacts: usize,
    pub gt_contacts: usize,
}

impl ContactPrecision {
    /// No predicted contact vertex; `cp` is reported as 0.
    pub fn is_flagged(&self) -> bool {
        self.predicted_contacts == 0
    }
}

/// Per instance of a two-instance scene, whether each vertex lies strictly
/// within `delta` of a vertex of the other instance. Returned flattened in
/// instance order together with the flattened vertices.
fn contact_flags(scene: &Scene, delta: f64) -> Result<(Vec<Vec3>, Vec<bool>)> {
    let inst = scene.instances();
    if inst.len() != 2 {
        return Err(GeomError::InvalidScene(format!(
            "contact precision needs exactly 2 instances, got {}",
            inst.len()
        )));
    }
    let mut verts = Vec::new();
    let mut flags = Vec::new();
    for (a, b) in [(0, 1), (1, 0)] {
        let other = KdTree::new(inst[b].vertices());
        for v in inst[a].vertices() {
            let in_contact = other.nearest(v).is_some_and(|(_, d2)| d2.sqrt() < delta);
            verts.push(*v);
            flags.push(in_contact);
        }
    }
    Ok((verts, flags))
}

/// Fraction of predicted contact vertices whose nearest ground-truth vertex
/// (over both instances) is a ground-truth contact vertex.
pub fn contact_precision(pred: &Scene, gt: &Scene, delta: f64) -> Result<ContactPrecision> {
    if !(delta > 0.0) {
        return Err(GeomError::InvalidParameter(format!("contact delta must be > 0, got {delta}")));
    }
    let (pv, pf) = contact_flags(pred, delta)?;
    let (gv, gf) = contact_flags(gt, delta)?;
    let tree = KdTree::new(&gv);
    let mut predicted = 0;
    let mut hits = 0;
    for (v, &c) in pv.iter().zip(&pf) {
        if !c {
            continue;
        }
        predicted += 1;
        let (j, _) = tree.nearest(v).expect("ground truth has vertices");
        if gf[j] {
            hits += 1;
        }
    }
    Ok(ContactPrecision {
        cp: if predicted > 0 { hits as f64 / predicted as f64 } else { 0.0 },
        predicted_contacts: predicted,
        gt_contacts: gf.iter().filter(|&&c| c).count(),
    })
}
