//! One-dimensional Kac model with a random magnetic field: mean-field
//! phase structure, the continuum excess free energy and its instanton,
//! block field statistics, random-walk localization of the interface,
//! polymer cluster expansion, and a heat-bath Gibbs sampler.

pub mod cluster;
pub mod cw_phase;
pub mod error;
pub mod field;
pub mod gibbs;
pub mod numeric;
pub mod pipeline;
pub mod profile;
pub mod walk;

pub use cw_phase::{phase_constants, PhaseConstants, PhasePoint};
pub use error::{Error, Result};
pub use profile::{BoundaryCondition, Profile, Side};
