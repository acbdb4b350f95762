//! Procedural meshes: test fixtures, the cube-to-ball map, icospheres and
//! the five-tetrahedron cube split shared with the phantom voxelizer.

use std::collections::HashMap;

use super::mesh::{TetMesh, TriMesh, HEART};
use crate::Vec3;

/// Unit cube `[0,1]³` split into six tetrahedra around the main diagonal.
pub fn unit_cube_6() -> TetMesh {
    let v: Vec<Vec3> = (0..8)
        .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    // paths 0 → 7 through the cube edges
    let tets = vec![
        [0, 1, 3, 7],
        [0, 1, 5, 7],
        [0, 2, 3, 7],
        [0, 2, 6, 7],
        [0, 4, 5, 7],
        [0, 4, 6, 7],
    ];
    TetMesh::new(v, tets, vec![HEART; 6]).expect("unit cube is valid")
}

/// Local corner offsets of a cube, indexed by bit pattern `x | y<<1 | z<<2`.
pub(crate) const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Five-tetrahedron split of the cube with lower corner `(i, j, k)`.
///
/// The central tetrahedron always uses the corners of even global parity, so
/// neighbouring cubes split their shared face along the same diagonal and the
/// parity alternates from cube to cube. Returned as local corner indices.
pub(crate) fn five_tet_split(i: usize, j: usize, k: usize) -> [[usize; 4]; 5] {
    let parity = |c: usize| (i + j + k + CORNERS[c].iter().sum::<usize>()) % 2;
    let (even, odd): (Vec<usize>, Vec<usize>) = (0..8).partition(|&c| parity(c) == 0);
    let mut out = [[0; 4]; 5];
    out[0] = [even[0], even[1], even[2], even[3]];
    for (n, &c) in odd.iter().enumerate() {
        // the three face neighbours of an odd corner are the even corners
        // differing in exactly one bit
        out[n + 1] = [c, c ^ 1, c ^ 2, c ^ 4];
    }
    out
}

/// Structured `nx × ny × nz` box of cubes of side `h`, lower corner at the
/// origin. `five` selects the alternating 5-tet split, otherwise 6 tets per
/// cube. All tets are labelled heart.
pub fn box_grid(nx: usize, ny: usize, nz: usize, h: f64, five: bool) -> TetMesh {
    let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                v.push(Vec3::new(i as f64 * h, j as f64 * h, k as f64 * h));
            }
        }
    }
    let mut tets = Vec::new();
    let six = [
        [0, 1, 3, 7],
        [0, 1, 5, 7],
        [0, 2, 3, 7],
        [0, 2, 6, 7],
        [0, 4, 5, 7],
        [0, 4, 6, 7],
    ];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let g = |c: usize| id(i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]);
                if five {
                    for t in five_tet_split(i, j, k) {
                        tets.push(t.map(g));
                    }
                } else {
                    for t in six {
                        tets.push(t.map(g));
                    }
                }
            }
        }
    }
    let n = tets.len();
    TetMesh::new(v, tets, vec![HEART; n]).expect("box grid is valid")
}

/// Ball of radius `r` meshed by mapping a `[-1,1]³` grid with `n` cells per
/// side (n even) through `p ↦ p·‖p‖∞/‖p‖₂`; boundary nodes land exactly on
/// the sphere and the centre is a node.
pub fn ball(n: usize, r: f64) -> TetMesh {
    assert!(n >= 2 && n % 2 == 0, "ball needs an even cell count");
    let mut m = box_grid(n, n, n, 2.0 / n as f64, true);
    for p in &mut m.vertices {
        let q = *p - Vec3::new(1.0, 1.0, 1.0);
        let inf = q.x.abs().max(q.y.abs()).max(q.z.abs());
        let two = q.norm();
        *p = if two > 0.0 { q * (r * inf / two) } else { Vec3::zeros() };
    }
    let n = m.tets.len();
    TetMesh::new(m.vertices, m.tets, vec![HEART; n]).expect("ball map keeps tets valid")
}

/// Icosphere of the given radius and centre, outward oriented.
/// Level `s` has `10·4^s + 2` vertices and `20·4^s` triangles.
pub fn icosphere(subdivisions: usize, radius: f64, centre: Vec3) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| centre + v * radius).collect();
    TriMesh::new(verts, faces).expect("icosphere is valid")
}

/// Icosphere scaled to an axis-aligned ellipsoid.
pub fn ellipsoid_surface(subdivisions: usize, semi_axes: Vec3, centre: Vec3) -> TriMesh {
    let mut m = icosphere(subdivisions, 1.0, Vec3::zeros());
    for v in &mut m.vertices {
        *v = centre + v.component_mul(&semi_axes);
    }
    m
}
