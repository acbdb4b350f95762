//! Closed-form layer integrals of linear (P1) triangle elements.
//!
//! For a triangle `y₀y₁y₂` with unit normal `n`, an observation point `x`
//! at signed height `h = n·(y₀ − x)` above its plane and projection `p`:
//!
//! * double layer: `∫ λ_k (y−x)·n / R³ = λ_k(p)·Ω + ∇λ_k · J` with
//!   `J = −h Σ_e ν_e ∫_e dl/R`;
//! * single layer: `∫ λ_k / R = λ_k(p)·∫1/R + ∇λ_k · Σ_e ν_e ∫_e R dl`,
//!   where `∫1/R = Σ_e d_e ∫_e dl/R − hΩ` and `d_e` is the in-plane distance
//!   from `p` to edge `e` along its outward normal `ν_e`.
//!
//! Both follow from the planar divergence theorem applied to `∇(1/R)` and
//! `∇R`, so singular and near-singular cases need no quadrature.

use std::f64::consts::PI;

use crate::geom::{solid_angle, PLANE_TOLERANCE};
use crate::Vec3;

/// Per-vertex weights of one triangle, already divided by 4π.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleWeights {
    /// `(1/4π) ∫ λ_k dΩ`.
    pub double: [f64; 3],
    /// `(1/4π) ∫ λ_k / R dS`.
    pub single: [f64; 3],
}

pub fn linear_weights(y: &[Vec3; 3], x: &Vec3) -> TriangleWeights {
    let nvec = (y[1] - y[0]).cross(&(y[2] - y[0]));
    let area2 = nvec.norm();
    let n = nvec / area2;
    let h = n.dot(&(y[0] - x));
    let p = x + n * h;
    let in_plane = h.abs() < PLANE_TOLERANCE;

    let mut lam_p = [0.0; 3];
    let mut grad = [Vec3::zeros(); 3];
    for k in 0..3 {
        let (a, b) = (y[(k + 1) % 3], y[(k + 2) % 3]);
        lam_p[k] = (b - a).cross(&(p - a)).dot(&n) / area2;
        grad[k] = n.cross(&(b - a)) / area2;
    }

    let omega = if in_plane { 0.0 } else { solid_angle(y, x) };
    let mut j_vec = Vec3::zeros();
    let mut inv_r = -h * omega;
    let mut r_edges = Vec3::zeros();
    for e in 0..3 {
        let (a, b) = (y[e], y[(e + 1) % 3]);
        let len = (b - a).norm();
        let t = (b - a) / len;
        let nu = t.cross(&n);
        let (ra, rb) = ((a - x).norm(), (b - x).norm());
        let gap = ra + rb - len;
        // x on the edge itself: ∫dl/R diverges but is always multiplied by 0
        let log_term = if gap > 1e-14 * len { ((ra + rb + len) / gap).ln() } else { 0.0 };
        let d = (a - x).dot(&nu);
        if !in_plane {
            j_vec -= nu * (h * log_term);
        }
        if d.abs() > 1e-12 * len {
            inv_r += d * log_term;
        }
        let (sa, sb) = ((a - x).dot(&t), (b - x).dot(&t));
        let r0_sq = (ra * ra - sa * sa).max(0.0);
        let r_int = 0.5 * ((sb * rb - sa * ra) + if r0_sq > 0.0 { r0_sq * log_term } else { 0.0 });
        r_edges += nu * r_int;
    }

    let mut out = TriangleWeights {
        double: [0.0; 3],
        single: [0.0; 3],
    };
    for k in 0..3 {
        out.double[k] = (lam_p[k] * omega + grad[k].dot(&j_vec)) / (4.0 * PI);
        out.single[k] = (lam_p[k] * inv_r + grad[k].dot(&r_edges)) / (4.0 * PI);
    }
    out
}
