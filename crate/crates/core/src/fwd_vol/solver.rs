//! Neumann (pure-flux) Poisson solves on a singular stiffness matrix.
//!
//! One node is grounded, the remaining SPD block is factorized once, and
//! every solution is shifted afterwards to the requested gauge.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use log::warn;

use super::Stiffness;
use crate::{Error, Result};

/// Relative residual every solve must reach.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Relative compatibility violation tolerated before a load is mean-shifted.
pub const COMPATIBILITY_TOL: f64 = 1e-9;

const GROUND: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Sparse Cholesky of the grounded system.
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients.
    Cg,
}

/// Additive constant convention of a potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    /// Lumped-volume-weighted mean zero.
    VolumeMean,
    /// Torso-boundary-mass-weighted mean zero.
    BoundaryMean,
}

/// Potential at every mesh node for one load.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub values: Vec<f64>,
    pub gauge: Gauge,
}

pub struct NeumannSolver {
    stiffness: Stiffness,
    /// Volume weights for the volume-mean gauge.
    weights: Vec<f64>,
    factor: Option<Llt<usize, f64>>,
    kind: SolverKind,
}

impl NeumannSolver {
    pub fn new(stiffness: Stiffness, weights: Vec<f64>, kind: SolverKind) -> Result<Self> {
        let n = stiffness.n();
        if weights.len() != n {
            return Err(Error::Dimension {
                context: "solver gauge weights",
                expected: n,
                found: weights.len(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidMesh("need at least two nodes".into()));
        }
        let factor = match kind {
            SolverKind::Cholesky => Some(grounded_cholesky(&stiffness)?),
            SolverKind::Cg => None,
        };
        Ok(NeumannSolver {
            stiffness,
            weights,
            factor,
            kind,
        })
    }

    pub fn n(&self) -> usize {
        self.stiffness.n()
    }

    pub fn stiffness(&self) -> &Stiffness {
        &self.stiffness
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    /// Solves `K φ = rhs` with the volume-mean-zero gauge.
    pub fn solve(&self, rhs: &[f64]) -> Result<PotentialField> {
        let mut out = self.solve_batch(&[rhs.to_vec()])?;
        Ok(out.pop().expect("one column"))
    }

    /// Solves several loads sharing the factorization.
    pub fn solve_batch(&self, loads: &[Vec<f64>]) -> Result<Vec<PotentialField>> {
        let n = self.n();
        let mut loads = loads.to_vec();
        for (c, l) in loads.iter_mut().enumerate() {
            if l.len() != n {
                return Err(Error::Dimension {
                    context: "Neumann load",
                    expected: n,
                    found: l.len(),
                });
            }
            enforce_compatibility(l, c);
        }
        let mut sols = match &self.factor {
            Some(llt) => self.cholesky_solve(llt, &loads),
            None => loads
                .iter()
                .map(|l| pcg(&self.stiffness, l, RESIDUAL_TOL * 0.1, 20 * n))
                .collect::<Result<Vec<_>>>()?,
        };
        for (x, b) in sols.iter_mut().zip(&loads) {
            self.refine(x, b)?;
            shift_to_mean_zero(x, &self.weights);
        }
        Ok(sols
            .into_iter()
            .map(|values| PotentialField {
                values,
                gauge: Gauge::VolumeMean,
            })
            .collect())
    }

    fn cholesky_solve(&self, llt: &Llt<usize, f64>, loads: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut rhs = Mat::<f64>::zeros(n - 1, loads.len());
        for (c, l) in loads.iter().enumerate() {
            for i in 0..n - 1 {
                rhs[(i, c)] = l[reduced_to_full(i)];
            }
        }
        llt.solve_in_place(rhs.as_mut());
        (0..loads.len())
            .map(|c| {
                let mut x = vec![0.0; n];
                for i in 0..n - 1 {
                    x[reduced_to_full(i)] = rhs[(i, c)];
                }
                x
            })
            .collect()
    }

    /// Iterative refinement until the residual meets [`RESIDUAL_TOL`].
    fn refine(&self, x: &mut [f64], b: &[f64]) -> Result<()> {
        let bnorm = norm(b);
        if bnorm == 0.0 {
            x.fill(0.0);
            return Ok(());
        }
        for _ in 0..4 {
            let r: Vec<f64> = b.iter().zip(self.stiffness.apply(x)).map(|(b, kx)| b - kx).collect();
            let rn = norm(&r);
            if rn <= RESIDUAL_TOL * bnorm {
                return Ok(());
            }
            let dx = match &self.factor {
                Some(llt) => self.cholesky_solve(llt, &[r]).pop().expect("one column"),
                None => pcg(&self.stiffness, &r, RESIDUAL_TOL * 0.1 * bnorm / rn, 20 * self.n())?,
            };
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        let r: Vec<f64> = b.iter().zip(self.stiffness.apply(x)).map(|(b, kx)| b - kx).collect();
        let rel = norm(&r) / bnorm;
        if rel <= RESIDUAL_TOL {
            Ok(())
        } else {
            Err(Error::Numerical(format!("Neumann solve stalled at relative residual {rel:.3e}")))
        }
    }
}

fn reduced_to_full(i: usize) -> usize {
    if i < GROUND {
        i
    } else {
        i + 1
    }
}

fn full_to_reduced(i: usize) -> Option<usize> {
    match i.cmp(&GROUND) {
        std::cmp::Ordering::Less => Some(i),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(i - 1),
    }
}

fn grounded_cholesky(k: &Stiffness) -> Result<Llt<usize, f64>> {
    let n = k.n();
    let triplets: Vec<Triplet<usize, usize, f64>> = k
        .entries()
        .filter_map(|(i, j, v)| match (full_to_reduced(i), full_to_reduced(j)) {
            (Some(a), Some(b)) if a >= b => Some(Triplet::new(a, b, v)),
            _ => None,
        })
        .collect();
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n - 1, n - 1, &triplets)
        .map_err(|e| Error::Numerical(format!("sparse assembly failed: {e:?}")))?;
    m.sp_cholesky(Side::Lower)
        .map_err(|e| Error::Numerical(format!("grounded stiffness is not positive definite ({e:?}); is the mesh connected?")))
}

/// Mean-shifts a load whose sum violates compatibility beyond tolerance.
fn enforce_compatibility(load: &mut [f64], index: usize) {
    let sum: f64 = load.iter().sum();
    let scale: f64 = load.iter().map(|v| v.abs()).sum();
    if scale > 0.0 && sum.abs() > COMPATIBILITY_TOL * scale {
        warn!("load {index}: compatibility violated (sum {sum:.3e}); mean-shifting");
        let shift = sum / load.len() as f64;
        for v in load.iter_mut() {
            *v -= shift;
        }
    }
}

pub(crate) fn shift_to_mean_zero(x: &mut [f64], weights: &[f64]) {
    let total: f64 = weights.iter().sum();
    let mean = x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() / total;
    for v in x.iter_mut() {
        *v -= mean;
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned CG on the singular system; valid for compatible
/// loads because iterates stay in the range of `K`.
pub fn pcg(k: &Stiffness, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = k.n();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let dinv: Vec<f64> = k.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        let kp = k.apply(&p);
        let pkp: f64 = p.iter().zip(&kp).map(|(a, b)| a * b).sum();
        if !(pkp > 0.0) {
            return Err(Error::Numerical(format!("CG breakdown at iteration {it}")));
        }
        let alpha = rz / pkp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * kp[i];
        }
        if norm(&r) <= rel_tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Numerical(format!(
        "CG did not converge in {max_iter} iterations (residual {:.3e})",
        norm(&r) / bnorm
    )))
}
