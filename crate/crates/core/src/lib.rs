//! Large-deviation functions of the heat exchanged between Gaussian
//! harmonic networks and their baths.
//!
//! The biased dynamics of a network of linearly coupled oscillators stays
//! Gaussian, so the scaled cumulant generating function `θ(s)` of the
//! quanta exchanged with one bath follows from the stabilizing solution of
//! an algebraic Riccati equation. A truncated Fock-space generator gives an
//! independent check for one- and two-mode networks.

pub mod config;
pub mod error;
pub mod exec;
pub mod fock;
pub mod ftcheck;
pub mod ldf;
pub mod linalg;
pub mod model;
pub mod phasespace;
pub mod presets;
pub mod solver;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use model::{BathSpec, CountingSpec, CouplingKind, CouplingSpec, DriveSpec, NetworkSpec, OscillatorSpec};
pub use phasespace::{BiasMatrices, PhaseSpaceSystem};
pub use solver::BiasedCovariance;
