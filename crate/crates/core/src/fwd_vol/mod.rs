//! Volumetric forward model: P1 finite elements for `-∇·(σ∇φ) = f` with a
//! no-flux torso boundary, Green's functions of the electrodes, and the
//! transfer matrix from heart-node sources to electrode potentials.
//!
//! Green's function of electrode `y` solves `K G = δ_y − b`, where `b` is the
//! torso-boundary lumped area divided by the total area. That is the discrete
//! form of a unit point source at `y` balanced by a uniform outflux `1/Area`.
//! The Green field is gauged so `bᵀG = 0`, which keeps discrete reciprocity
//! `G_i(y_j) = G_j(y_i)`.
//!
//! With [`Quadrature::Lumped`] (the default) the operator entry is
//! `B(i,j) = G_i(x_j)·v_j`, with `v_j` the lumped heart volume of node `j`.
//! `B f` then equals the electrode potentials of the direct solve with load
//! `v∘f` exactly, up to the reference. [`Quadrature::Point`] drops the
//! weight (`B(i,j) = G_i(x_j)`). That operator is not consistent with
//! [`forward_direct`] on nonuniform meshes.

mod solver;
mod stiffness;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use solver::{pcg, Gauge, NeumannSolver, PotentialField, SolverKind, COMPATIBILITY_TOL, RESIDUAL_TOL};
pub use stiffness::{assemble_stiffness, p1_gradients, Stiffness};

use crate::field::{Domain, SourceField};
use crate::geom::{Region, TetMesh};
use crate::sigproc::{common_reference, SignalBlock};
use crate::{Error, Result};

/// Conductivity per region label (S/m), with a default for unlisted labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductivityMap {
    pub default: f64,
    #[serde(default)]
    pub regions: BTreeMap<i32, f64>,
}

impl ConductivityMap {
    pub fn homogeneous(sigma: f64) -> Self {
        ConductivityMap {
            default: sigma,
            regions: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, label: i32, sigma: f64) -> &mut Self {
        self.regions.insert(label, sigma);
        self
    }

    pub fn value(&self, label: i32) -> f64 {
        self.regions.get(&label).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = std::iter::once(self.default)
            .chain(self.regions.values().copied())
            .find(|s| !(*s > 0.0 && s.is_finite()));
        match bad {
            Some(s) => Err(Error::InvalidInput(format!("conductivity must be positive, got {s}"))),
            None => Ok(()),
        }
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.default.to_le_bytes());
        for (k, v) in &self.regions {
            h.update(k.to_le_bytes());
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl Default for ConductivityMap {
    fn default() -> Self {
        Self::homogeneous(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// `B(i,j) = G_i(x_j)·v_j`.
    #[default]
    Lumped,
    /// `B(i,j) = G_i(x_j)`.
    Point,
}

/// Green's function of one electrode over all mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenField {
    pub electrode: usize,
    pub values: Vec<f64>,
    pub gauge: Gauge,
}

/// Transfer matrix from heart-node sources to electrode potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumetricOperator {
    /// Electrodes × heart nodes.
    pub matrix: DMatrix<f64>,
    /// Lumped heart-node volumes (mm³), the existence-condition row.
    pub constraint: DVector<f64>,
    pub heart_nodes: Vec<usize>,
    pub electrodes: Vec<usize>,
    pub quadrature: Quadrature,
    pub centred: bool,
    pub mesh_hash: String,
    pub conductivity_hash: String,
}

/// Mesh, factorized stiffness and the weights shared by all volumetric
/// forward computations on one discretization.
pub struct VolumeConductor {
    mesh: TetMesh,
    sigma: ConductivityMap,
    solver: NeumannSolver,
    /// Torso-boundary lumped area / total area, per mesh node (sums to 1).
    boundary_mass: Vec<f64>,
    heart_volumes: Vec<f64>,
}

impl VolumeConductor {
    pub fn new(mesh: &TetMesh, sigma: &ConductivityMap) -> Result<Self> {
        Self::with_solver(mesh, sigma, SolverKind::Cholesky)
    }

    pub fn with_solver(mesh: &TetMesh, sigma: &ConductivityMap, kind: SolverKind) -> Result<Self> {
        let k = assemble_stiffness(mesh, sigma)?;
        let weights = mesh.lumped_volumes(Region::All)?;
        let solver = NeumannSolver::new(k, weights, kind)?;
        let surface = mesh.boundary_surface(Region::All)?;
        let parents = surface.parent_nodes.as_ref().expect("boundary surface maps to parents");
        let areas = surface.lumped_areas();
        let total: f64 = areas.iter().sum();
        let mut boundary_mass = vec![0.0; mesh.n_vertices()];
        for (a, &p) in areas.iter().zip(parents) {
            boundary_mass[p] = a / total;
        }
        quantize_unit_sum(&mut boundary_mass);
        Ok(VolumeConductor {
            mesh: mesh.clone(),
            sigma: sigma.clone(),
            solver,
            boundary_mass,
            heart_volumes: mesh.heart_node_volumes()?,
        })
    }

    pub fn mesh(&self) -> &TetMesh {
        &self.mesh
    }

    pub fn solver(&self) -> &NeumannSolver {
        &self.solver
    }

    pub fn boundary_mass(&self) -> &[f64] {
        &self.boundary_mass
    }

    /// Lumped volumes of the heart nodes, in `heart_nodes()` order.
    pub fn heart_volumes(&self) -> &[f64] {
        &self.heart_volumes
    }

    pub fn is_boundary_node(&self, v: usize) -> bool {
        self.boundary_mass.get(v).is_some_and(|&b| b > 0.0)
    }

    /// Discrete Green load `δ_y − b`. Its floating-point sum is exactly zero
    /// in any order (see [`quantize_unit_sum`]).
    pub fn green_load(&self, y: usize) -> Result<Vec<f64>> {
        if !self.is_boundary_node(y) {
            return Err(Error::InvalidInput(format!("electrode node {y} is not on the torso boundary")));
        }
        let mut load: Vec<f64> = self.boundary_mass.iter().map(|b| -b).collect();
        load[y] += 1.0;
        Ok(load)
    }

    pub fn green_fields(&self, electrodes: &[usize]) -> Result<Vec<GreenField>> {
        let loads = electrodes.iter().map(|&y| self.green_load(y)).collect::<Result<Vec<_>>>()?;
        let mut fields = Vec::with_capacity(electrodes.len());
        // chunks bound the dense right-hand side held by the solver
        for (chunk_e, chunk_l) in electrodes.chunks(32).zip(loads.chunks(32)) {
            for (&y, sol) in chunk_e.iter().zip(self.solver.solve_batch(chunk_l)?) {
                let mut values = sol.values;
                solver::shift_to_mean_zero(&mut values, &self.boundary_mass);
                fields.push(GreenField {
                    electrode: y,
                    values,
                    gauge: Gauge::BoundaryMean,
                });
            }
        }
        Ok(fields)
    }

    pub fn green_field(&self, electrode: usize) -> Result<GreenField> {
        Ok(self.green_fields(&[electrode])?.pop().expect("one field"))
    }

    pub fn operator(&self, electrodes: &[usize], quadrature: Quadrature) -> Result<VolumetricOperator> {
        if electrodes.len() < 2 {
            return Err(Error::InvalidInput("need at least 2 electrodes".into()));
        }
        let heart = self.mesh.heart_nodes().to_vec();
        let fields = self.green_fields(electrodes)?;
        let mut b = DMatrix::zeros(electrodes.len(), heart.len());
        for (i, g) in fields.iter().enumerate() {
            for (j, &x) in heart.iter().enumerate() {
                b[(i, j)] = match quadrature {
                    Quadrature::Lumped => g.values[x] * self.heart_volumes[j],
                    Quadrature::Point => g.values[x],
                };
            }
        }
        centre_columns(&mut b);
        Ok(VolumetricOperator {
            matrix: b,
            constraint: DVector::from_column_slice(&self.heart_volumes),
            heart_nodes: heart,
            electrodes: electrodes.to_vec(),
            quadrature,
            centred: true,
            mesh_hash: self.mesh.content_hash(),
            conductivity_hash: self.sigma.content_hash(),
        })
    }

    /// Direct solve per sample of `-∇·(σ∇φ) = f`; returns common-referenced
    /// electrode potentials.
    pub fn forward_direct(&self, f: &SourceField, electrodes: &[usize]) -> Result<SignalBlock> {
        let heart = self.mesh.heart_nodes();
        if f.domain != Domain::HeartVolume || f.nodes != heart {
            return Err(Error::InvalidInput(
                "volumetric sources must be given on the heart nodes of the same mesh".into(),
            ));
        }
        for &e in electrodes {
            if e >= self.mesh.n_vertices() {
                return Err(Error::InvalidInput(format!("electrode node {e} out of range")));
            }
        }
        let t_count = f.n_samples();
        for t in 0..t_count {
            let (dot, scale) = (0..heart.len()).fold((0.0, 0.0), |(d, s), j| {
                let w = self.heart_volumes[j] * f.values[(j, t)];
                (d + w, s + w.abs())
            });
            if dot.abs() > COMPATIBILITY_TOL * scale {
                return Err(Error::InvalidInput(format!(
                    "sample {t}: source violates the existence condition (mᵀf = {dot:.3e})"
                )));
            }
        }
        let mut g = DMatrix::zeros(electrodes.len(), t_count);
        let samples: Vec<usize> = (0..t_count).collect();
        let solved: Vec<(usize, Vec<f64>)> = samples
            .par_chunks(16)
            .map(|chunk| -> Result<Vec<(usize, Vec<f64>)>> {
                let loads: Vec<Vec<f64>> = chunk
                    .iter()
                    .map(|&t| {
                        let mut load = vec![0.0; self.mesh.n_vertices()];
                        for (j, &x) in heart.iter().enumerate() {
                            load[x] = self.heart_volumes[j] * f.values[(j, t)];
                        }
                        load
                    })
                    .collect();
                let sols = self.solver.solve_batch(&loads)?;
                Ok(chunk
                    .iter()
                    .zip(sols)
                    .map(|(&t, s)| (t, electrodes.iter().map(|&e| s.values[e]).collect()))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        for (t, col) in solved {
            for (i, v) in col.into_iter().enumerate() {
                g[(i, t)] = v;
            }
        }
        let mut block = SignalBlock::with_index_ids(g, f.sample_rate)?;
        block.time_zero = f.time_zero;
        common_reference(&block)
    }
}

/// Rounds nonnegative weights summing to about 1 onto the grid `k·2⁻⁵²`,
/// moving the integer deficit onto the largest weight so `Σk = 2⁵²`. Sums of
/// such values stay below 2 in magnitude and are therefore exact.
fn quantize_unit_sum(w: &mut [f64]) {
    let unit = (1u64 << 52) as f64;
    let mut k: Vec<i64> = w.iter().map(|&x| (x * unit).round() as i64).collect();
    let deficit = (1i64 << 52) - k.iter().sum::<i64>();
    if let Some(big) = (0..k.len()).max_by_key(|&i| k[i]) {
        k[big] += deficit;
    }
    for (x, ki) in w.iter_mut().zip(k) {
        *x = ki as f64 / unit;
    }
}

/// Subtracts the electrode mean from every column.
pub fn centre_columns(b: &mut DMatrix<f64>) {
    let m = b.nrows() as f64;
    for mut col in b.column_iter_mut() {
        let mean = col.sum() / m;
        col.add_scalar_mut(-mean);
    }
}

pub fn assemble_volumetric(
    mesh: &TetMesh,
    sigma: &ConductivityMap,
    electrodes: &[usize],
    quadrature: Quadrature,
) -> Result<VolumetricOperator> {
    VolumeConductor::new(mesh, sigma)?.operator(electrodes, quadrature)
}

pub fn forward_direct(mesh: &TetMesh, sigma: &ConductivityMap, f: &SourceField, electrodes: &[usize]) -> Result<SignalBlock> {
    VolumeConductor::new(mesh, sigma)?.forward_direct(f, electrodes)
}

impl VolumetricOperator {
    pub fn n_electrodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.matrix.ncols()
    }

    /// `B f` per sample.
    pub fn apply(&self, f: &SourceField) -> Result<SignalBlock> {
        if f.n_nodes() != self.n_sources() {
            return Err(Error::Dimension {
                context: "volumetric operator columns vs source nodes",
                expected: self.n_sources(),
                found: f.n_nodes(),
            });
        }
        let mut block = SignalBlock::with_index_ids(&self.matrix * &f.values, f.sample_rate)?;
        block.time_zero = f.time_zero;
        Ok(block)
    }
}
