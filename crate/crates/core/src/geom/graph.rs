//! Edge-graph shortest paths on meshes.
//!
//! Geodesic distances are approximated by Dijkstra over mesh edges weighted
//! by Euclidean length. The result is an upper bound of the true geodesic
//! and never shorter than the straight line.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::mesh::{Region, TetMesh, TriMesh};
use crate::{Error, Result, Vec3};

/// Undirected weighted graph over a subset of mesh nodes (CSR adjacency).
/// Node ids are the original mesh vertex indices.
#[derive(Debug, Clone)]
pub struct MeshGraph {
    positions: Vec<Vec3>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    member: Vec<bool>,
}

impl MeshGraph {
    pub fn from_edges(positions: &[Vec3], edges: &[(usize, usize)]) -> Self {
        let n = positions.len();
        let mut deg = vec![0usize; n];
        let mut member = vec![false; n];
        for &(a, b) in edges {
            deg[a] += 1;
            deg[b] += 1;
            member[a] = true;
            member[b] = true;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0usize; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        for &(a, b) in edges {
            let w = (positions[a] - positions[b]).norm();
            targets[fill[a]] = b;
            weights[fill[a]] = w;
            fill[a] += 1;
            targets[fill[b]] = a;
            weights[fill[b]] = w;
            fill[b] += 1;
        }
        MeshGraph {
            positions: positions.to_vec(),
            offsets,
            targets,
            weights,
            member,
        }
    }

    /// Edges of the tetrahedra in `region` (volumetric through-wall paths).
    pub fn from_tets(mesh: &TetMesh, region: Region) -> Self {
        let mut edges = Vec::new();
        for (tet, &r) in mesh.tets.iter().zip(&mesh.regions) {
            if region.contains(r) {
                for a in 0..4 {
                    for b in a + 1..4 {
                        edges.push((tet[a].min(tet[b]), tet[a].max(tet[b])));
                    }
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Self::from_edges(&mesh.vertices, &edges)
    }

    /// Edges of a surface triangulation.
    pub fn from_surface(mesh: &TriMesh) -> Self {
        Self::from_edges(&mesh.vertices, &mesh.edges())
    }

    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.member.get(node).copied().unwrap_or(false)
    }

    pub fn position(&self, node: usize) -> Vec3 {
        self.positions[node]
    }

    /// Member node closest to `p`.
    pub fn snap(&self, p: &Vec3) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for v in (0..self.positions.len()).filter(|&v| self.member[v]) {
            let d = (self.positions[v] - p).norm_squared();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, v));
            }
        }
        best.map(|(_, v)| v)
    }

    /// Distances from the nearest of `sources` to every node
    /// (`f64::INFINITY` when unreachable).
    pub fn distances_from(&self, sources: &[usize]) -> Vec<f64> {
        self.dijkstra(sources, None)
    }

    /// Shortest edge-path length between `a` and `b`.
    pub fn distance(&self, a: usize, b: usize) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        let d = self.dijkstra(&[a], Some(b))[b];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Unreachable(a, b))
        }
    }

    fn dijkstra(&self, sources: &[usize], target: Option<usize>) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.positions.len()];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            dist[s] = 0.0;
            heap.push(Entry { dist: 0.0, node: s });
        }
        while let Some(Entry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            if Some(node) == target {
                break;
            }
            for e in self.offsets[node]..self.offsets[node + 1] {
                let next = self.targets[e];
                let nd = d + self.weights[e];
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(Entry { dist: nd, node: next });
                }
            }
        }
        dist
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    dist: f64,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on distance, ties broken by node id for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
