//! Reconstruction of power-grid topology and line parameters from nodal
//! measurements in the DC approximation.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] holds the data model: topologies, nodal susceptance matrices,
//!   knowledge masks, and reconstruction reports.
//! * [`dc`] is the DC power-flow forward model and synthetic data generator.
//! * [`solver`] is the numerical core: rank, nullspace, least squares, and a
//!   dense simplex used for 1-norm minimisation over affine solution spaces.
//! * [`estimation`] recovers phase angles from flow and injection
//!   measurements (classical DC state estimation).
//! * [`reconstruction`] implements the row-wise and the iterative
//!   compressed-sensing reconstruction of the susceptance matrix.

pub mod dc;
pub mod estimation;
pub mod grid;
pub mod reconstruction;
pub mod solver;

mod fmt;

pub use dc::{FlowMeasurementSet, MeasurementSet};
pub use grid::{
    GridTopology, KnowledgeMask, Line, ReconstructionOutcome, ReconstructionReport, RowResolution, SusceptanceMatrix,
};
pub use reconstruction::SuccessPolicy;
