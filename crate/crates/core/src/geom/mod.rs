//! Meshes, mesh I/O, graph distances and the AHA segment model.

mod aha;
mod graph;
mod mesh;
pub mod shapes;
mod solid_angle;
pub mod vtk;

pub use aha::{aha17_segments, SegmentModel};
pub use graph::MeshGraph;
pub use mesh::{Region, TetMesh, TriMesh, HEART, TORSO};
pub use solid_angle::{solid_angle, PLANE_TOLERANCE};
