use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::{Error, Result, Vec3};

/// Region label carried by heart (myocardium) tetrahedra.
pub const HEART: i32 = 1;
/// Region label carried by every other tetrahedron of the torso volume.
pub const TORSO: i32 = 0;

const MIN_TRIANGLE_AREA: f64 = 1e-9;
const MIN_TET_VOLUME: f64 = 1e-12;

/// Selects a subset of tetrahedra by region label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    All,
    Label(i32),
}

impl Region {
    pub fn heart() -> Self {
        Region::Label(HEART)
    }

    pub fn contains(self, label: i32) -> bool {
        match self {
            Region::All => true,
            Region::Label(l) => l == label,
        }
    }
}

/// Triangulated surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Optional per-vertex integer labels (the "electrode" array: −1 = none).
    pub labels: Option<Vec<i32>>,
    /// For surfaces extracted from a volume mesh: volume-node index of each vertex.
    pub parent_nodes: Option<Vec<usize>>,
}

impl TriMesh {
    /// Builds a surface, rejecting out-of-range indices and degenerate triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriMesh {
            vertices,
            triangles,
            labels: None,
            parent_nodes: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} {tri:?} references vertex {bad} but only {n} vertices exist"
                )));
            }
            let area = self.triangle_area(t);
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} {tri:?} is degenerate (area {area:e} mm²)"
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::InvalidMesh(format!(
                    "{} vertex labels for {n} vertices",
                    labels.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Non-normalized normal, `(b − a) × (c − a)`; its length is twice the area.
    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.triangle_normal(t).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.vertices.iter().sum();
        sum / self.vertices.len() as f64
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// `V − E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.triangles.len() as i64
    }

    /// Checks that every edge is shared by exactly two triangles traversing it
    /// in opposite directions.
    pub fn check_closed(&self) -> Result<()> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                if directed.insert((u, v), t).is_some() {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({u}, {v}) traversed twice in the same direction (triangle {t})"
                    )));
                }
            }
        }
        for (&(u, v), &t) in &directed {
            if !directed.contains_key(&(v, u)) {
                return Err(Error::InvalidMesh(format!(
                    "edge ({u}, {v}) of triangle {t} is not shared by an opposite triangle"
                )));
            }
        }
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.check_closed().is_ok()
    }

    /// Volume enclosed by a closed, outward-oriented surface (divergence theorem).
    pub fn enclosed_volume(&self) -> f64 {
        let origin = self.centroid();
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                let (pa, pb, pc) = (
                    self.vertices[a] - origin,
                    self.vertices[b] - origin,
                    self.vertices[c] - origin,
                );
                pa.dot(&pb.cross(&pc)) / 6.0
            })
            .sum()
    }

    /// Per-vertex lumped area (each triangle contributes a third of its area
    /// to each corner).
    pub fn lumped_areas(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.vertices.len()];
        for t in 0..self.triangles.len() {
            let a = self.triangle_area(t) / 3.0;
            for &v in &self.triangles[t] {
                w[v] += a;
            }
        }
        w
    }

    /// Index of the vertex closest to `p` (lowest index on ties).
    pub fn nearest_vertex(&self, p: &Vec3) -> usize {
        nearest(&self.vertices, p, 0..self.vertices.len())
    }

    /// Applies `x ↦ R x + t` to every vertex.
    pub fn transformed(&self, rot: &nalgebra::Rotation3<f64>, shift: &Vec3) -> TriMesh {
        let mut m = self.clone();
        for v in &mut m.vertices {
            *v = rot * *v + shift;
        }
        m
    }

    /// Content hash of geometry and connectivity.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"trimesh");
        hash_points(&mut h, &self.vertices);
        for tri in &self.triangles {
            for &i in tri {
                h.update((i as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Tetrahedral volume mesh with region labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    pub vertices: Vec<Vec3>,
    /// Positively oriented tetrahedra.
    pub tets: Vec<[usize; 4]>,
    /// Region label per tetrahedron.
    pub regions: Vec<i32>,
    /// Per-vertex integer labels (the "electrode" array), if any.
    pub point_labels: Option<Vec<i32>>,
    heart_nodes: Vec<usize>,
}

impl TetMesh {
    /// Builds a volume mesh. Negatively oriented tetrahedra are flipped;
    /// out-of-range indices and degenerate tetrahedra are rejected.
    pub fn new(vertices: Vec<Vec3>, mut tets: Vec<[usize; 4]>, regions: Vec<i32>) -> Result<Self> {
        if regions.len() != tets.len() {
            return Err(Error::InvalidMesh(format!(
                "{} region labels for {} tetrahedra",
                regions.len(),
                tets.len()
            )));
        }
        let n = vertices.len();
        for (t, tet) in tets.iter_mut().enumerate() {
            if let Some(&bad) = tet.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "tetrahedron {t} {tet:?} references vertex {bad} but only {n} vertices exist"
                )));
            }
            let vol = signed_volume(&vertices, tet);
            if !(vol.abs() > MIN_TET_VOLUME) {
                return Err(Error::InvalidMesh(format!(
                    "tetrahedron {t} {tet:?} is degenerate (volume {vol:e} mm³)"
                )));
            }
            if vol < 0.0 {
                tet.swap(2, 3);
            }
        }
        let mut mesh = TetMesh {
            vertices,
            tets,
            regions,
            point_labels: None,
            heart_nodes: Vec::new(),
        };
        mesh.heart_nodes = mesh.region_nodes(Region::heart());
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    /// Vertices incident to at least one heart tetrahedron, ascending.
    pub fn heart_nodes(&self) -> &[usize] {
        &self.heart_nodes
    }

    /// Vertices incident to at least one tetrahedron of `region`, ascending.
    pub fn region_nodes(&self, region: Region) -> Vec<usize> {
        let mut used = vec![false; self.vertices.len()];
        for (tet, &r) in self.tets.iter().zip(&self.regions) {
            if region.contains(r) {
                for &v in tet {
                    used[v] = true;
                }
            }
        }
        (0..used.len()).filter(|&v| used[v]).collect()
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        signed_volume(&self.vertices, &self.tets[t])
    }

    pub fn volume(&self, region: Region) -> f64 {
        (0..self.tets.len())
            .filter(|&t| region.contains(self.regions[t]))
            .map(|t| self.tet_volume(t))
            .sum()
    }

    pub fn tet_centroid(&self, t: usize) -> Vec3 {
        self.tets[t].iter().map(|&v| self.vertices[v]).sum::<Vec3>() / 4.0
    }

    /// Lumped (mass-diagonal) nodal volumes over `region`: every selected
    /// tetrahedron contributes a quarter of its volume to each of its nodes.
    /// Returned for all vertices; nodes outside the region carry zero.
    pub fn lumped_volumes(&self, region: Region) -> Result<Vec<f64>> {
        let mut w = vec![0.0; self.vertices.len()];
        let mut any = false;
        for t in 0..self.tets.len() {
            if region.contains(self.regions[t]) {
                any = true;
                let q = self.tet_volume(t) / 4.0;
                for &v in &self.tets[t] {
                    w[v] += q;
                }
            }
        }
        if !any {
            return Err(Error::InvalidInput(format!("region {region:?} selects no tetrahedra")));
        }
        Ok(w)
    }

    /// Lumped volumes restricted to the heart nodes, in `heart_nodes()` order.
    pub fn heart_node_volumes(&self) -> Result<Vec<f64>> {
        let w = self.lumped_volumes(Region::heart())?;
        Ok(self.heart_nodes.iter().map(|&v| w[v]).collect())
    }

    /// Surface of the selected tetrahedra: faces belonging to exactly one
    /// selected tetrahedron, oriented outward. Vertices are renumbered
    /// compactly; `parent_nodes` maps back to volume vertices.
    pub fn boundary_surface(&self, region: Region) -> Result<TriMesh> {
        // outward faces of a positively oriented tet (a, b, c, d)
        const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];
        let mut faces: HashMap<[usize; 3], (usize, [usize; 3])> = HashMap::new();
        let mut selected = 0usize;
        for (t, tet) in self.tets.iter().enumerate() {
            if !region.contains(self.regions[t]) {
                continue;
            }
            selected += 1;
            for f in FACES {
                let oriented = [tet[f[0]], tet[f[1]], tet[f[2]]];
                let mut key = oriented;
                key.sort_unstable();
                faces
                    .entry(key)
                    .and_modify(|e| e.0 += 1)
                    .or_insert((1, oriented));
            }
        }
        if selected == 0 {
            return Err(Error::InvalidInput(format!("region {region:?} selects no tetrahedra")));
        }
        let mut boundary: Vec<([usize; 3], [usize; 3])> = faces
            .into_iter()
            .filter(|(_, (count, _))| *count == 1)
            .map(|(key, (_, oriented))| (key, oriented))
            .collect();
        boundary.sort_unstable();

        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut parents = Vec::new();
        let mut triangles = Vec::with_capacity(boundary.len());
        let mut local = |v: usize, parents: &mut Vec<usize>| {
            *remap.entry(v).or_insert_with(|| {
                parents.push(v);
                parents.len() - 1
            })
        };
        for (_, [a, b, c]) in &boundary {
            triangles.push([
                local(*a, &mut parents),
                local(*b, &mut parents),
                local(*c, &mut parents),
            ]);
        }
        let vertices = parents.iter().map(|&v| self.vertices[v]).collect();
        let mut surf = TriMesh::new(vertices, triangles)?;
        if let Some(labels) = &self.point_labels {
            surf.labels = Some(parents.iter().map(|&v| labels[v]).collect());
        }
        surf.parent_nodes = Some(parents);
        surf.check_closed()?;
        Ok(surf)
    }

    /// Index of the vertex in `candidates` closest to `p` (lowest index on ties).
    pub fn nearest_node(&self, p: &Vec3, candidates: &[usize]) -> usize {
        nearest(&self.vertices, p, candidates.iter().copied())
    }

    /// Applies `x ↦ R x + t` to every vertex.
    pub fn transformed(&self, rot: &nalgebra::Rotation3<f64>, shift: &Vec3) -> TetMesh {
        let mut m = self.clone();
        for v in &mut m.vertices {
            *v = rot * *v + shift;
        }
        m
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"tetmesh");
        hash_points(&mut h, &self.vertices);
        for (tet, r) in self.tets.iter().zip(&self.regions) {
            for &i in tet {
                h.update((i as u64).to_le_bytes());
            }
            h.update(r.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub(crate) fn signed_volume(vertices: &[Vec3], tet: &[usize; 4]) -> f64 {
    let a = vertices[tet[0]];
    let (b, c, d) = (vertices[tet[1]] - a, vertices[tet[2]] - a, vertices[tet[3]] - a);
    b.dot(&c.cross(&d)) / 6.0
}

fn nearest(vertices: &[Vec3], p: &Vec3, candidates: impl Iterator<Item = usize>) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for v in candidates {
        let d = (vertices[v] - p).norm_squared();
        if d < best.0 {
            best = (d, v);
        }
    }
    best.1
}

fn hash_points(h: &mut Sha256, pts: &[Vec3]) {
    for p in pts {
        for k in 0..3 {
            h.update(p[k].to_le_bytes());
        }
    }
}
