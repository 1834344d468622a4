//! Adam over per-vertex 3-vectors with per-vertex learning rates.
//!
//! Two options suit sparse geometric terms. Lazy updates only advance the
//! moments (and the bias-correction count) of vertices whose gradient is
//! non-zero, so vertices that leave a sparse term stop instead of coasting on
//! stale momentum. A per-vertex second moment (one scalar `|g|²` per vertex)
//! keeps each step along the gradient direction instead of normalising every
//! coordinate separately.

use crate::math::Vec3;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    lr: Vec<f64>,
    m: Vec<Vec3>,
    v: Vec<Vec3>,
    t: i32,
    lazy: Option<Vec<i32>>,
    per_vertex: bool,
}

impl Adam {
    /// One learning rate per parameter vector.
    pub fn new(lr: Vec<f64>) -> Self {
        let n = lr.len();
        Self {
            lr,
            m: vec![Vec3::zeros(); n],
            v: vec![Vec3::zeros(); n],
            t: 0,
            lazy: None,
            per_vertex: false,
        }
    }

    /// Skip vertices with an exactly zero gradient.
    pub fn lazy(mut self) -> Self {
        self.lazy = Some(vec![0; self.lr.len()]);
        self
    }

    /// Share the second moment across the three coordinates of a vertex.
    pub fn per_vertex(mut self) -> Self {
        self.per_vertex = true;
        self
    }

    pub fn with_uniform_lr(n: usize, lr: f64) -> Self {
        Self::new(vec![lr; n])
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Bias-corrected update `p -= lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [Vec3], grads: &[Vec3]) {
        assert_eq!(params.len(), self.lr.len());
        assert_eq!(grads.len(), self.lr.len());
        self.t += 1;
        for i in 0..params.len() {
            let g = grads[i];
            let t = match &mut self.lazy {
                Some(counts) => {
                    if g == Vec3::zeros() {
                        continue;
                    }
                    counts[i] += 1;
                    counts[i]
                }
                None => self.t,
            };
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            self.m[i] = self.m[i] * BETA1 + g * (1.0 - BETA1);
            let g2 = if self.per_vertex {
                Vec3::repeat(g.norm_squared())
            } else {
                g.component_mul(&g)
            };
            self.v[i] = self.v[i] * BETA2 + g2 * (1.0 - BETA2);
            for c in 0..3 {
                let mh = self.m[i][c] / c1;
                let vh = self.v[i][c] / c2;
                params[i][c] -= self.lr[i] * mh / (vh.sqrt() + EPSILON);
            }
        }
    }
}
