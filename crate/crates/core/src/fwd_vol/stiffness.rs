//! P1 tetrahedral stiffness matrix.

use std::collections::BTreeMap;

use nalgebra::Matrix3;

use crate::geom::TetMesh;
use crate::{Error, Result, Vec3};

use super::ConductivityMap;

/// Symmetric stiffness matrix stored as CSR off-diagonals plus a separate
/// diagonal. The diagonal is the negated off-diagonal row sum, accumulated
/// in the same order [`Stiffness::apply`] uses, so constants are mapped to
/// exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Stiffness {
    pub(crate) offsets: Vec<usize>,
    pub(crate) cols: Vec<usize>,
    pub(crate) vals: Vec<f64>,
    pub(crate) diag: Vec<f64>,
}

/// Gradients of the four barycentric coordinates and the volume of a tet.
pub fn p1_gradients(p: [Vec3; 4]) -> Result<([Vec3; 4], f64)> {
    let j = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    let det = j.determinant();
    if !(det > 0.0) {
        return Err(Error::InvalidMesh(format!("inverted or degenerate tetrahedron (6V = {det})")));
    }
    let inv = j.try_inverse().ok_or_else(|| Error::InvalidMesh("singular tetrahedron".into()))?;
    let g1 = inv.row(0).transpose();
    let g2 = inv.row(1).transpose();
    let g3 = inv.row(2).transpose();
    Ok(([-(g1 + g2 + g3), g1, g2, g3], det / 6.0))
}

impl Stiffness {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// `K x`, off-diagonals summed first.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let mut s = 0.0;
                for e in self.offsets[i]..self.offsets[i + 1] {
                    s += self.vals[e] * x[self.cols[e]];
                }
                s + self.diag[i] * x[i]
            })
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let row = &self.cols[self.offsets[i]..self.offsets[i + 1]];
        row.binary_search(&j)
            .map(|k| self.vals[self.offsets[i] + k])
            .unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Iterates stored entries `(row, col, value)` including the diagonal.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n()).flat_map(move |i| {
            std::iter::once((i, i, self.diag[i])).chain(
                (self.offsets[i]..self.offsets[i + 1]).map(move |e| (i, self.cols[e], self.vals[e])),
            )
        })
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

pub fn assemble_stiffness(mesh: &TetMesh, sigma: &ConductivityMap) -> Result<Stiffness> {
    sigma.validate()?;
    let n = mesh.n_vertices();
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for (t, tet) in mesh.tets.iter().enumerate() {
        let (grads, vol) = p1_gradients(tet.map(|v| mesh.vertices[v]))
            .map_err(|e| Error::InvalidMesh(format!("tet {t}: {e}")))?;
        let scale = sigma.value(mesh.regions[t]) * vol;
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    *rows[tet[a]].entry(tet[b]).or_insert(0.0) += scale * grads[a].dot(&grads[b]);
                }
            }
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut diag = Vec::with_capacity(n);
    offsets.push(0);
    for row in rows {
        let mut s = 0.0;
        for (c, v) in row {
            cols.push(c);
            vals.push(v);
            s += v;
        }
        diag.push(-s);
        offsets.push(cols.len());
    }
    Ok(Stiffness {
        offsets,
        cols,
        vals,
        diag,
    })
}
