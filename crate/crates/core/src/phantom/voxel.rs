//! Labelled voxel grids and their conversion to five-tet meshes.

use std::collections::HashMap;

use crate::geom::shapes::{five_tet_split, CORNERS};
use crate::geom::TetMesh;
use crate::{Result, Vec3};

/// Cube labels on a regular grid; `None` is outside the domain.
pub(crate) struct VoxelGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub pitch: f64,
    pub labels: Vec<Option<i32>>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], origin: Vec3, pitch: f64, label: impl Fn(Vec3) -> Option<i32>) -> Self {
        let mut labels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    labels.push(label(origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * pitch));
                }
            }
        }
        VoxelGrid {
            dims,
            origin,
            pitch,
            labels,
        }
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    /// Membership with out-of-grid cells counted as empty.
    fn member(&self, set: &dyn Fn(Option<i32>) -> bool, c: [isize; 3]) -> bool {
        let d = self.dims;
        if (0..3).any(|a| c[a] < 0 || c[a] >= d[a] as isize) {
            return false;
        }
        set(self.labels[self.index(c[0] as usize, c[1] as usize, c[2] as usize)])
    }

    /// Grows the set `{c : set(label(c))}` until it is well composed: no two
    /// cubes touch only along an edge or only at a corner, in the set or in
    /// its complement. The union of such cubes has a 2-manifold boundary.
    /// Added cells get `fill`. Returns the number of cells added.
    pub fn make_well_composed(&mut self, set: &dyn Fn(Option<i32>) -> bool, fill: i32) -> usize {
        let d = self.dims.map(|v| v as isize);
        let mut added = 0;
        loop {
            let mut changed = false;
            // every grid vertex, including the outer hull, with its 2×2×2 block
            for k in 0..=d[2] {
                for j in 0..=d[1] {
                    for i in 0..=d[0] {
                        let cells: Vec<[isize; 3]> = CORNERS
                            .iter()
                            .map(|c| [i - 1 + c[0] as isize, j - 1 + c[1] as isize, k - 1 + c[2] as isize])
                            .collect();
                        let inside: Vec<bool> = cells.iter().map(|&c| self.member(set, c)).collect();
                        if let Some(pick) = critical_fix(&inside) {
                            let c = cells[pick];
                            if (0..3).all(|a| c[a] >= 0 && c[a] < d[a]) {
                                let idx = self.index(c[0] as usize, c[1] as usize, c[2] as usize);
                                self.labels[idx] = Some(fill);
                                added += 1;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                return added;
            }
        }
    }

    pub fn count(&self, set: &dyn Fn(Option<i32>) -> bool) -> usize {
        self.labels.iter().filter(|&&l| set(l)).count()
    }

    /// Five-tet mesh of the labelled cells with compact vertex numbering.
    pub fn to_mesh(&self) -> Result<TetMesh> {
        let [nx, ny, _] = self.dims;
        let mut ids: HashMap<usize, usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut tets = Vec::new();
        let mut regions = Vec::new();
        for k in 0..self.dims[2] {
            for j in 0..ny {
                for i in 0..nx {
                    let Some(label) = self.labels[self.index(i, j, k)] else {
                        continue;
                    };
                    let corner = |c: usize, ids: &mut HashMap<usize, usize>, vertices: &mut Vec<Vec3>| {
                        let (a, b, e) = (i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]);
                        let key = (e * (ny + 1) + b) * (nx + 1) + a;
                        *ids.entry(key).or_insert_with(|| {
                            vertices.push(self.origin + Vec3::new(a as f64, b as f64, e as f64) * self.pitch);
                            vertices.len() - 1
                        })
                    };
                    for t in five_tet_split(i, j, k) {
                        tets.push(t.map(|c| corner(c, &mut ids, &mut vertices)));
                        regions.push(label);
                    }
                }
            }
        }
        TetMesh::new(vertices, tets, regions)
    }
}

/// For a 2×2×2 block (bit order x | y<<1 | z<<2) returns a cell to add when
/// the block holds a critical configuration, else `None`.
fn critical_fix(inside: &[bool]) -> Option<usize> {
    // edge configurations: the four cells around each of the 12 block-internal
    // edge segments meeting at the centre vertex, i.e. each 2×2 face slab
    for axis in 0..3 {
        let bit = 1 << axis;
        for layer in [0, bit] {
            let cells: Vec<usize> = (0..8).filter(|c| c & bit == layer).collect();
            // cells[0], cells[3] are diagonal, as are cells[1], cells[2]
            let s: Vec<bool> = cells.iter().map(|&c| inside[c]).collect();
            if s[0] && s[3] && !s[1] && !s[2] {
                return Some(cells[1]);
            }
            if s[1] && s[2] && !s[0] && !s[3] {
                return Some(cells[0]);
            }
        }
    }
    let n = inside.iter().filter(|&&v| v).count();
    for c in 0..8 {
        let opposite = 7 - c;
        if n == 2 && inside[c] && inside[opposite] {
            return Some(c ^ 1);
        }
        if n == 6 && !inside[c] && !inside[opposite] {
            return Some(c);
        }
    }
    None
}
