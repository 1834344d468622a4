use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector2, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(mut points: impl Iterator<Item = &'a Vec3>) -> Option<Self> {
        let first = points.next()?;
        let mut b = Aabb {
            min: *first,
            max: *first,
        };
        for p in points {
            b.grow(p);
        }
        Some(b)
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x.max(0.0) * e.y.max(0.0) * e.z.max(0.0)
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.min[i] && self.max[i] >= other.max[i])
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_sq(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    /// Intersection-over-union of two boxes (0 for disjoint or empty union).
    pub fn iou(&self, other: &Aabb) -> f64 {
        let lo = self.min.sup(&other.min);
        let hi = self.max.inf(&other.max);
        let inter = Aabb { min: lo, max: hi }.volume();
        let union = self.volume() + other.volume() - inter;
        if union <= 0.0 {
            if self == other {
                1.0
            } else {
                0.0
            }
        } else {
            inter / union
        }
    }
}

pub fn rotation_from_axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle)
        .to_rotation_matrix()
        .into_inner()
}

/// Rotation about +Y by `deg` degrees.
pub fn rotation_y_deg(deg: f64) -> Mat3 {
    rotation_from_axis_angle(Vec3::y(), deg.to_radians())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
