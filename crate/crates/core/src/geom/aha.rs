//! AHA 17-segment partition of the left ventricle.
//!
//! The long axis runs from the base centroid (axial coordinate 0) to the apex
//! (1). Rings: basal `[0, 1/3)`, mid `[1/3, 2/3)`, apical `[2/3, 0.95)` and
//! the apical cap `[0.95, 1]`; points beyond either end are clamped into the
//! first or last band. The circumferential angle is measured from the RV
//! insertion direction projected onto the short-axis plane; six-sector rings
//! are centred on multiples of 60° (boundaries at odd multiples of 30°), the
//! four-sector apical ring on multiples of 90°.

use super::mesh::TetMesh;
use crate::{Error, Result, Vec3};

const BASAL_END: f64 = 1.0 / 3.0;
const MID_END: f64 = 2.0 / 3.0;
const CAP_START: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentModel {
    pub apex: Vec3,
    pub base_centroid: Vec3,
    /// Unit reference direction, orthogonal to the long axis.
    pub rv_dir: Vec3,
    /// Segment id (1..=17) per heart node, in `TetMesh::heart_nodes()` order.
    pub node_segments: Vec<u8>,
}

impl SegmentModel {
    pub fn new(apex: Vec3, base_centroid: Vec3, rv_dir: Vec3) -> Result<Self> {
        let axis = apex - base_centroid;
        let len = axis.norm();
        if !(len > 1e-9) {
            return Err(Error::InvalidInput("degenerate long axis: apex equals base centroid".into()));
        }
        let axis = axis / len;
        let ortho = rv_dir - axis * rv_dir.dot(&axis);
        if !(ortho.norm() > 1e-9 * rv_dir.norm().max(1.0)) {
            return Err(Error::InvalidInput("degenerate axis: rv direction parallel to long axis".into()));
        }
        Ok(SegmentModel {
            apex,
            base_centroid,
            rv_dir: ortho.normalize(),
            node_segments: Vec::new(),
        })
    }

    /// Normalized axial coordinate: 0 at the base centroid, 1 at the apex.
    pub fn axial(&self, p: &Vec3) -> f64 {
        let axis = self.apex - self.base_centroid;
        (p - self.base_centroid).dot(&axis) / axis.norm_squared()
    }

    /// Circumferential angle in degrees, `[0, 360)`.
    pub fn angle(&self, p: &Vec3) -> f64 {
        let axis = (self.apex - self.base_centroid).normalize();
        let e2 = axis.cross(&self.rv_dir);
        let d = p - self.base_centroid;
        let deg = d.dot(&e2).atan2(d.dot(&self.rv_dir)).to_degrees();
        if deg < 0.0 {
            deg + 360.0
        } else {
            deg
        }
    }

    /// Segment id of an arbitrary point.
    pub fn classify(&self, p: &Vec3) -> u8 {
        let s = self.axial(p);
        if s >= CAP_START {
            return 17;
        }
        let theta = self.angle(p);
        let sector = |n: usize| {
            let width = 360.0 / n as f64;
            (((theta + width / 2.0) % 360.0) / width).floor() as u8 % n as u8
        };
        if s < BASAL_END {
            1 + sector(6)
        } else if s < MID_END {
            7 + sector(6)
        } else {
            13 + sector(4)
        }
    }

    /// Heart-node indices (positions in `heart_nodes()`) assigned to `segment`.
    pub fn members(&self, segment: u8) -> Vec<usize> {
        (0..self.node_segments.len())
            .filter(|&i| self.node_segments[i] == segment)
            .collect()
    }
}

/// Assigns every heart node of `mesh` to one of the 17 segments.
pub fn aha17_segments(mesh: &TetMesh, apex: Vec3, base_centroid: Vec3, rv_dir: Vec3) -> Result<SegmentModel> {
    let mut model = SegmentModel::new(apex, base_centroid, rv_dir)?;
    model.node_segments = mesh
        .heart_nodes()
        .iter()
        .map(|&v| model.classify(&mesh.vertices[v]))
        .collect();
    Ok(model)
}
