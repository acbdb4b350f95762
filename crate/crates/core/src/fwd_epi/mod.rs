//! Epicardial forward model: boundary elements for the homogeneous region
//! between a closed heart surface and a closed torso surface.
//!
//! Potentials and normal currents are piecewise linear on both surfaces and
//! the integral equation is collocated at every vertex:
//!
//! `c_i φ_i − Σ_k D_ik φ_k − Σ_j S_ij Γ_j = 0`
//!
//! with `D` the double-layer weights, `S` the single-layer weights, `Γ` the
//! heart-surface normal current (torso current is zero) and
//! `c_i = Σ_k D_ik`, the discrete solid-angle factor. The last choice makes
//! constants an exact solution, so every row of the transfer matrix sums to
//! one up to rounding. Eliminating `Γ` through the heart rows gives
//!
//! `A = −(P_TT − S_TH S_HH⁻¹ Q_HT)⁻¹ (Q_TH − S_TH S_HH⁻¹ P_HH)`.

mod kernels;

use log::info;
use nalgebra::{DMatrix, Dyn, LU};
use rayon::prelude::*;

pub use kernels::{linear_weights, TriangleWeights};

use crate::field::{Domain, SourceField};
use crate::fwd_vol::centre_columns;
use crate::geom::{solid_angle, TriMesh};
use crate::sigproc::SignalBlock;
use crate::{Error, Result, Vec3};

/// Where electrodes sit on the torso surface.
#[derive(Debug, Clone, PartialEq)]
pub enum ElectrodeSites {
    /// Torso surface vertex indices.
    Nodes(Vec<usize>),
    /// Arbitrary points, projected to the closest point of the torso surface
    /// and interpolated linearly.
    Points(Vec<Vec3>),
}

/// Transfer matrix from heart-surface vertex potentials to electrodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EpicardialOperator {
    /// Electrodes × heart vertices, columns centred over electrodes.
    pub matrix: DMatrix<f64>,
    /// The same before centring; rows sum to one.
    pub uncentred: DMatrix<f64>,
    /// Interpolation stencil (torso vertex, weight) of every electrode.
    pub stencils: Vec<Vec<(usize, f64)>>,
    /// Node id of every column: the volume-mesh node when the heart surface
    /// was extracted from a volume mesh, else the surface vertex index.
    pub heart_nodes: Vec<usize>,
    pub torso_hash: String,
    pub heart_hash: String,
    pub centred: bool,
}

impl EpicardialOperator {
    pub fn n_electrodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Potential at every torso vertex for unit potential at every heart
/// vertex: torso vertices × heart vertices, not centred.
pub fn torso_transfer(torso: &TriMesh, heart: &TriMesh) -> Result<DMatrix<f64>> {
    check_geometry(torso, heart)?;
    let (nt, nh) = (torso.n_vertices(), heart.n_vertices());
    let n = nt + nh;

    // heart triangles reversed so every normal points out of the conductor
    let tris: Vec<([Vec3; 3], [usize; 3])> = torso
        .triangles
        .iter()
        .map(|t| (t.map(|v| torso.vertices[v]), *t))
        .chain(heart.triangles.iter().map(|&[a, b, c]| {
            ([heart.vertices[a], heart.vertices[c], heart.vertices[b]], [nt + a, nt + c, nt + b])
        }))
        .collect();
    let n_torso_tris = torso.triangles.len();
    let points: Vec<Vec3> = torso.vertices.iter().chain(&heart.vertices).copied().collect();

    let rows: Vec<(Vec<f64>, Vec<f64>)> = points
        .par_iter()
        .map(|x| {
            let mut d = vec![0.0; n];
            let mut s = vec![0.0; nh];
            for (t, (corners, idx)) in tris.iter().enumerate() {
                let w = linear_weights(corners, x);
                for k in 0..3 {
                    d[idx[k]] += w.double[k];
                }
                if t >= n_torso_tris {
                    for k in 0..3 {
                        s[idx[k] - nt] += w.single[k];
                    }
                }
            }
            (d, s)
        })
        .collect();

    // P = diag(c) − D over own-surface blocks, Q = −D across surfaces
    let mut p_tt = DMatrix::zeros(nt, nt);
    let mut q_th = DMatrix::zeros(nt, nh);
    let mut q_ht = DMatrix::zeros(nh, nt);
    let mut p_hh = DMatrix::zeros(nh, nh);
    let mut s_th = DMatrix::zeros(nt, nh);
    let mut s_hh = DMatrix::zeros(nh, nh);
    for (i, (d, s)) in rows.iter().enumerate() {
        let c: f64 = d.iter().sum();
        if i < nt {
            for k in 0..nt {
                p_tt[(i, k)] = -d[k];
            }
            p_tt[(i, i)] += c;
            for k in 0..nh {
                q_th[(i, k)] = -d[nt + k];
                s_th[(i, k)] = s[k];
            }
        } else {
            let h = i - nt;
            for k in 0..nt {
                q_ht[(h, k)] = -d[k];
            }
            for k in 0..nh {
                p_hh[(h, k)] = -d[nt + k];
                s_hh[(h, k)] = s[k];
            }
            p_hh[(h, h)] += c;
        }
    }
    drop(rows);

    let s_lu = checked_lu(s_hh, "heart single-layer block")?;
    let mut rhs = DMatrix::zeros(nh, nt + nh);
    rhs.columns_mut(0, nt).copy_from(&q_ht);
    rhs.columns_mut(nt, nh).copy_from(&p_hh);
    let x = s_lu.solve(&rhs).ok_or_else(|| Error::Numerical("heart single-layer solve failed".into()))?;
    let m = p_tt - &s_th * x.columns(0, nt);
    let r = q_th - &s_th * x.columns(nt, nh);
    let m_lu = checked_lu(m, "torso Schur complement")?;
    let a = m_lu
        .solve(&(-r))
        .ok_or_else(|| Error::Numerical("torso Schur complement solve failed".into()))?;
    Ok(a)
}

/// Builds the electrode transfer matrix.
pub fn assemble_epicardial(torso: &TriMesh, heart: &TriMesh, electrodes: &ElectrodeSites) -> Result<EpicardialOperator> {
    let stencils = electrode_stencils(torso, electrodes)?;
    if stencils.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 electrodes".into()));
    }
    let full = torso_transfer(torso, heart)?;
    let mut uncentred = DMatrix::zeros(stencils.len(), heart.n_vertices());
    for (i, st) in stencils.iter().enumerate() {
        for &(v, w) in st {
            for j in 0..heart.n_vertices() {
                uncentred[(i, j)] += w * full[(v, j)];
            }
        }
    }
    let sv = uncentred.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    info!(
        "epicardial operator {}×{}: condition number {:.3e}",
        uncentred.nrows(),
        uncentred.ncols(),
        if lo > 0.0 { hi / lo } else { f64::INFINITY }
    );
    let mut matrix = uncentred.clone();
    centre_columns(&mut matrix);
    Ok(EpicardialOperator {
        matrix,
        uncentred,
        stencils,
        heart_nodes: heart
            .parent_nodes
            .clone()
            .unwrap_or_else(|| (0..heart.n_vertices()).collect()),
        torso_hash: torso.content_hash(),
        heart_hash: heart.content_hash(),
        centred: true,
    })
}

/// `A h` per sample.
pub fn forward_epicardial(op: &EpicardialOperator, h: &SourceField) -> Result<SignalBlock> {
    if h.domain != Domain::HeartSurface {
        return Err(Error::InvalidInput("epicardial forward needs heart-surface potentials".into()));
    }
    if h.n_nodes() != op.n_sources() {
        return Err(Error::Dimension {
            context: "epicardial operator columns vs heart vertices",
            expected: op.n_sources(),
            found: h.n_nodes(),
        });
    }
    let mut block = SignalBlock::with_index_ids(&op.matrix * &h.values, h.sample_rate)?;
    block.time_zero = h.time_zero;
    Ok(block)
}

fn checked_lu(m: DMatrix<f64>, what: &str) -> Result<LU<f64, Dyn, Dyn>> {
    let lu = m.lu();
    let diag = lu.u().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    let ratio = lo / hi;
    if !(ratio > 1e-13) {
        return Err(Error::Numerical(format!(
            "{what} is singular to working precision (pivot ratio {ratio:.2e})"
        )));
    }
    Ok(lu)
}

fn check_geometry(torso: &TriMesh, heart: &TriMesh) -> Result<()> {
    torso
        .check_closed()
        .map_err(|e| Error::InvalidMesh(format!("torso surface: {e}")))?;
    heart
        .check_closed()
        .map_err(|e| Error::InvalidMesh(format!("heart surface: {e}")))?;
    let winding = |surf: &TriMesh, p: &Vec3| {
        (0..surf.triangles.len())
            .map(|t| solid_angle(&surf.corners(t), p))
            .sum::<f64>()
            / (4.0 * std::f64::consts::PI)
    };
    if torso.enclosed_volume() <= 0.0 || heart.enclosed_volume() <= 0.0 {
        return Err(Error::InvalidMesh("surfaces must be oriented outward".into()));
    }
    for (v, p) in heart.vertices.iter().enumerate() {
        if winding(torso, p) < 0.5 {
            return Err(Error::InvalidMesh(format!("heart vertex {v} lies outside the torso surface")));
        }
    }
    for (v, p) in torso.vertices.iter().enumerate() {
        if winding(heart, p) > 0.5 {
            return Err(Error::InvalidMesh(format!("torso vertex {v} lies inside the heart surface")));
        }
    }
    Ok(())
}

fn electrode_stencils(torso: &TriMesh, sites: &ElectrodeSites) -> Result<Vec<Vec<(usize, f64)>>> {
    match sites {
        ElectrodeSites::Nodes(nodes) => nodes
            .iter()
            .map(|&v| {
                if v < torso.n_vertices() {
                    Ok(vec![(v, 1.0)])
                } else {
                    Err(Error::InvalidInput(format!("electrode vertex {v} out of range")))
                }
            })
            .collect(),
        ElectrodeSites::Points(points) => Ok(points
            .iter()
            .map(|p| {
                let (t, l) = (0..torso.triangles.len())
                    .map(|t| {
                        let l = closest_barycentric(&torso.corners(t), p);
                        (t, l)
                    })
                    .min_by(|a, b| {
                        let da = (interpolate(torso, a.0, &a.1) - p).norm_squared();
                        let db = (interpolate(torso, b.0, &b.1) - p).norm_squared();
                        da.total_cmp(&db)
                    })
                    .expect("closed surface has triangles");
                torso.triangles[t]
                    .iter()
                    .zip(l)
                    .filter(|(_, w)| *w != 0.0)
                    .map(|(&v, w)| (v, w))
                    .collect()
            })
            .collect()),
    }
}

fn interpolate(surf: &TriMesh, t: usize, l: &[f64; 3]) -> Vec3 {
    let c = surf.corners(t);
    c[0] * l[0] + c[1] * l[1] + c[2] * l[2]
}

/// Barycentric coordinates of the point of triangle `t` closest to `p`.
fn closest_barycentric(t: &[Vec3; 3], p: &Vec3) -> [f64; 3] {
    let (a, b, c) = (t[0], t[1], t[2]);
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let (v, w) = (vb * denom, vc * denom);
    [1.0 - v - w, v, w]
}
