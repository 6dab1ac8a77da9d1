//! Numerical toolkit for Hamiltonian flows with a collision singularity at
//! the origin: exterior algebra, adaptive integration, surface families near
//! the origin, their areas and transition measures, and a discrete model.

pub mod discrete;
pub mod error;
pub mod flow;
pub mod forms;
pub mod hamiltonian;
pub mod measures;
pub mod rng;
pub mod sections;

pub use error::{Error, Result};
pub use hamiltonian::{HamiltonianSystem, Perturbation, PhasePoint, PotentialSpec, ScalarField};
