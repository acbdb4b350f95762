use nalgebra::{DMatrix, Rotation3};
use volecgi::field::{Domain, SourceField};
use volecgi::fwd_epi::{assemble_epicardial, forward_epicardial, torso_transfer, ElectrodeSites};
use volecgi::geom::shapes::icosphere;
use volecgi::geom::TriMesh;
use volecgi::{Error, Vec3};

const R_HEART: f64 = 30.0;
const R_TORSO: f64 = 100.0;

fn spheres(level: usize) -> (TriMesh, TriMesh) {
    (
        icosphere(level, R_TORSO, Vec3::zeros()),
        icosphere(level, R_HEART, Vec3::zeros()),
    )
}

fn legendre(l: usize, c: f64) -> f64 {
    match l {
        1 => c,
        2 => 0.5 * (3.0 * c * c - 1.0),
        _ => unreachable!(),
    }
}

/// Torso amplitude of the exterior-insulated shell solution for heart data
/// `P_l(cosθ)`: `φ = (a r^l + b r^-(l+1)) P_l` with zero radial derivative at
/// the torso.
fn shell_gain(l: usize) -> f64 {
    let lf = l as f64;
    let b_over_a = lf / (lf + 1.0) * R_TORSO.powf(2.0 * lf + 1.0);
    let a = 1.0 / (R_HEART.powf(lf) + b_over_a / R_HEART.powf(lf + 1.0));
    a * (R_TORSO.powf(lf) + b_over_a / R_TORSO.powf(lf + 1.0))
}

fn harmonic_error(level: usize, l: usize) -> f64 {
    let (torso, heart) = spheres(level);
    let a = torso_transfer(&torso, &heart).unwrap();
    let h: Vec<f64> = heart.vertices.iter().map(|v| legendre(l, v.z / v.norm())).collect();
    let got = &a * nalgebra::DVector::from_vec(h);
    let gain = shell_gain(l);
    let (mut err, mut norm) = (0.0, 0.0);
    for (v, g) in torso.vertices.iter().zip(got.iter()) {
        let want = gain * legendre(l, v.z / v.norm());
        err += (g - want).powi(2);
        norm += want * want;
    }
    (err / norm).sqrt()
}

#[test]
fn shell_gains_match_closed_forms() {
    // independent restatement of the l = 1 and l = 2 shell solutions
    let a1 = 1.0 / (R_HEART + R_TORSO.powi(3) / (2.0 * R_HEART * R_HEART));
    assert!((shell_gain(1) - 1.5 * a1 * R_TORSO).abs() < 1e-15);
    let a2 = 1.0 / (R_HEART.powi(2) + 2.0 / 3.0 * R_TORSO.powi(5) / R_HEART.powi(3));
    assert!((shell_gain(2) - 5.0 / 3.0 * a2 * R_TORSO.powi(2)).abs() < 1e-15);
}

#[test]
fn concentric_spheres_converge() {
    let coarse = [harmonic_error(2, 1), harmonic_error(2, 2)];
    let fine = [harmonic_error(3, 1), harmonic_error(3, 2)];
    eprintln!("l=1: {:.4} -> {:.4}; l=2: {:.4} -> {:.4}", coarse[0], fine[0], coarse[1], fine[1]);
    assert!(fine[0] < 0.03, "dipole error {}", fine[0]);
    assert!(fine[1] < 0.05, "quadrupole error {}", fine[1]);
    assert!(fine[0] < coarse[0] && fine[1] < coarse[1]);
}

#[test]
fn constants_pass_through_and_rows_sum_to_one() {
    let (torso, heart) = spheres(2);
    let moved = heart.transformed(&Rotation3::identity(), &Vec3::new(15.0, -10.0, 20.0));
    let a = torso_transfer(&torso, &moved).unwrap();
    for row in a.row_iter() {
        assert!((row.sum() - 1.0).abs() < 1e-6, "{}", row.sum());
    }
    let op = assemble_epicardial(&torso, &moved, &ElectrodeSites::Nodes((0..40).collect())).unwrap();
    for row in op.uncentred.row_iter() {
        assert!((row.sum() - 1.0).abs() < 1e-6);
    }
    let ones = SourceField::new(DMatrix::from_element(moved.n_vertices(), 3, 2.5), (0..moved.n_vertices()).collect(), Domain::HeartSurface, 1000.0).unwrap();
    let g = forward_epicardial(&op, &ones).unwrap();
    assert!(g.samples.iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn half_turn_commutes_with_the_operator() {
    // the icosphere is symmetric under (x, y, z) -> (-x, -y, z)
    let (torso, heart) = spheres(2);
    let a = torso_transfer(&torso, &heart).unwrap();
    let image = |surf: &TriMesh| -> Vec<usize> {
        surf.vertices
            .iter()
            .map(|v| surf.nearest_vertex(&Vec3::new(-v.x, -v.y, v.z)))
            .collect()
    };
    let (pt, ph) = (image(&torso), image(&heart));
    let h: Vec<f64> = heart.vertices.iter().map(|v| (v.x * 0.1).sin() + v.y * v.z * 1e-3).collect();
    let h_rot: Vec<f64> = (0..h.len()).map(|j| h[ph[j]]).collect();
    let phi = &a * nalgebra::DVector::from_vec(h);
    let phi_rot = &a * nalgebra::DVector::from_vec(h_rot);
    let scale = phi.amax();
    for i in 0..torso.n_vertices() {
        assert!((phi_rot[i] - phi[pt[i]]).abs() < 1e-6 * scale);
    }
}

#[test]
fn zero_and_unit_sources() {
    let (torso, heart) = spheres(1);
    let op = assemble_epicardial(&torso, &heart, &ElectrodeSites::Nodes(vec![0, 5, 9, 17, 30])).unwrap();
    let n = heart.n_vertices();
    let zero = SourceField::new(DMatrix::zeros(n, 4), (0..n).collect(), Domain::HeartSurface, 500.0).unwrap();
    assert!(forward_epicardial(&op, &zero).unwrap().samples.iter().all(|&v| v == 0.0));
    // dense product oracle
    let vals = DMatrix::from_fn(n, 3, |i, t| ((i * 31 + t * 7) % 11) as f64 - 5.0);
    let f = SourceField::new(vals.clone(), (0..n).collect(), Domain::HeartSurface, 500.0).unwrap();
    let g = forward_epicardial(&op, &f).unwrap();
    for i in 0..op.n_electrodes() {
        for t in 0..3 {
            let want: f64 = (0..n).map(|j| op.matrix[(i, j)] * vals[(j, t)]).sum();
            assert!((g.samples[(i, t)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn projected_points_interpolate_vertex_rows() {
    let (torso, heart) = spheres(1);
    let at_vertex = assemble_epicardial(&torso, &heart, &ElectrodeSites::Nodes(vec![3, 7])).unwrap();
    let lifted: Vec<Vec3> = [3, 7].iter().map(|&v| torso.vertices[v] * 1.05).collect();
    let at_points = assemble_epicardial(&torso, &heart, &ElectrodeSites::Points(lifted)).unwrap();
    assert!((&at_vertex.uncentred - &at_points.uncentred).amax() < 1e-12);
}

#[test]
fn rejects_bad_geometry() {
    let (torso, heart) = spheres(1);
    let outside = heart.transformed(&Rotation3::identity(), &Vec3::new(90.0, 0.0, 0.0));
    assert!(matches!(torso_transfer(&torso, &outside), Err(Error::InvalidMesh(_))));
    let mut open = heart.clone();
    open.triangles.pop();
    assert!(matches!(torso_transfer(&torso, &open), Err(Error::InvalidMesh(_))));
}

mod kernels {
    use volecgi::fwd_epi::{linear_weights, TriangleWeights};
    use volecgi::geom::solid_angle;
    use volecgi::Vec3;
    use std::f64::consts::PI;

    /// Brute-force oracle: midpoint rule on a fine barycentric subdivision.
    fn numeric(y: &[Vec3; 3], x: &Vec3, levels: usize) -> TriangleWeights {
        let nvec = (y[1] - y[0]).cross(&(y[2] - y[0]));
        let n = nvec.normalize();
        let cell = nvec.norm() / 2.0 / (levels * levels) as f64;
        let mut out = TriangleWeights {
            double: [0.0; 3],
            single: [0.0; 3],
        };
        let mut add = |l: [f64; 3]| {
            let q = y[0] * l[0] + y[1] * l[1] + y[2] * l[2];
            let r = q - x;
            let rn = r.norm();
            for k in 0..3 {
                out.double[k] += l[k] * r.dot(&n) / rn.powi(3) * cell / (4.0 * PI);
                out.single[k] += l[k] / rn * cell / (4.0 * PI);
            }
        };
        let s = levels as f64;
        for i in 0..levels {
            for j in 0..levels - i {
                let (fi, fj) = (i as f64, j as f64);
                add([(fi + 1.0 / 3.0) / s, (fj + 1.0 / 3.0) / s, 1.0 - (fi + fj + 2.0 / 3.0) / s]);
                if i + j + 1 < levels {
                    add([(fi + 2.0 / 3.0) / s, (fj + 2.0 / 3.0) / s, 1.0 - (fi + fj + 4.0 / 3.0) / s]);
                }
            }
        }
        out
    }

    fn tri() -> [Vec3; 3] {
        [Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.2, 0.1), Vec3::new(0.4, 1.5, -0.2)]
    }

    #[test]
    fn matches_quadrature_off_the_plane() {
        for x in [Vec3::new(0.7, 0.5, 1.3), Vec3::new(-2.0, 3.0, -0.8), Vec3::new(5.0, -1.0, 2.0)] {
            let a = linear_weights(&tri(), &x);
            let b = numeric(&tri(), &x, 400);
            for k in 0..3 {
                assert!((a.double[k] - b.double[k]).abs() < 1e-5 * b.double[k].abs().max(1e-3), "{x:?} {k}");
                assert!((a.single[k] - b.single[k]).abs() < 1e-5 * b.single[k].abs(), "{x:?} {k}");
            }
        }
    }

    #[test]
    fn double_weights_sum_to_solid_angle() {
        let x = Vec3::new(0.3, 0.4, 0.05);
        let w = linear_weights(&tri(), &x);
        let omega = solid_angle(&tri(), &x) / (4.0 * PI);
        assert!((w.double.iter().sum::<f64>() - omega).abs() < 1e-14);
    }

    #[test]
    fn vertex_self_term() {
        // flat unit right triangle observed from its own vertex:
        // ∫ 1/R over the triangle = ∫₀^{π/2} dθ/(cos θ + sin θ) = √2·ln(1 + √2)
        let y = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        let w = linear_weights(&y, &Vec3::zeros());
        assert_eq!(w.double, [0.0; 3]);
        let total: f64 = w.single.iter().sum::<f64>() * 4.0 * PI;
        assert!((total - 2f64.sqrt() * (1.0 + 2f64.sqrt()).ln()).abs() < 1e-14, "{total}");
        assert!(w.single.iter().all(|v| v.is_finite() && *v > 0.0));
        // in-plane point outside the triangle against fine quadrature
        let x = Vec3::new(1.2, 0.9, 0.0);
        let a = linear_weights(&y, &x);
        let b = numeric(&y, &x, 400);
        for k in 0..3 {
            assert!((a.single[k] - b.single[k]).abs() < 1e-5 * b.single[k]);
        }
    }
}
