use crate::Vec3;

/// Distance below which a point counts as lying in the triangle's plane.
pub const PLANE_TOLERANCE: f64 = 1e-12;

/// Signed solid angle subtended by triangle `tri` at `p` (Van Oosterom and
/// Strackee). Positive when the triangle normal `(b−a)×(c−a)` points away
/// from `p`; zero when `p` lies in the triangle's plane.
pub fn solid_angle(tri: &[Vec3; 3], p: &Vec3) -> f64 {
    let r1 = tri[0] - p;
    let r2 = tri[1] - p;
    let r3 = tri[2] - p;
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let n_len = n.norm();
    if n_len == 0.0 || (r1.dot(&n) / n_len).abs() < PLANE_TOLERANCE {
        return 0.0;
    }
    let (l1, l2, l3) = (r1.norm(), r2.norm(), r3.norm());
    let num = r1.dot(&r2.cross(&r3));
    let den = l1 * l2 * l3 + r1.dot(&r2) * l3 + r1.dot(&r3) * l2 + r2.dot(&r3) * l1;
    2.0 * num.atan2(den)
}
