//! Cardiac activation imaging from body-surface potentials.
//!
//! Two inverse formulations share one pipeline:
//!
//! * **epicardial**: a boundary-element discretization of the Laplace Cauchy
//!   problem between torso and heart surfaces maps heart-surface potentials to
//!   electrode potentials (`A h = g`);
//! * **volumetric**: Neumann Green's functions of the Poisson problem,
//!   computed with P1 finite elements, map volumetric cardiac sources to
//!   electrode potentials (`B f = g`) subject to the source existence
//!   condition `mᵀ f = 0`.
//!
//! Around them sit signal preprocessing ([`sigproc`]), Tikhonov inversion with
//! L-curve selection ([`inverse`]), activation-time mapping and origin
//! localization ([`activation`]), a synthetic torso/heart phantom
//! ([`phantom`]) and the comparison harness ([`bench`]).

pub mod activation;
pub mod bench;
mod error;
pub mod field;
pub mod fwd_epi;
pub mod fwd_vol;
pub mod geom;
pub mod inverse;
pub mod io;
pub mod phantom;
pub mod sigproc;

pub use error::{Error, Result};
pub use field::{Domain, SourceField};

/// 3D point / vector in millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;
