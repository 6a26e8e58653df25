//! Two-phase compressible viscous MHD contact discontinuities in Lagrangian
//! coordinates on a periodic slab: simulator, initial-data pipeline, and
//! structural diagnostics.
//!
//! The flow map is evolved per phase; density, pressure, and magnetic field
//! are reconstructed from the map and the reference data, so the transported
//! constraints (mass, magnetic flux through material surfaces) hold by
//! construction rather than by accident of the time stepper.

pub mod boundary;
pub mod case;
pub mod compat;
pub mod constitutive;
pub mod deriv;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod good_unknowns;
pub mod grid;
pub mod integrator;
pub mod jet;
pub mod mollify;
pub mod norms;
pub mod psi;
pub mod seeding;
pub mod smoothing;

pub use error::{Result, SimError};
