//! Numerical laboratory for mollified Euclidean φ⁴ fields on a periodic grid.

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod action;
pub mod dyson;
pub mod error;
pub mod free_field;
pub mod inequalities;
pub mod io;
pub mod lattice;
pub mod ldp;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use action::{ActionModel, Couplings, RenormSchedule};
pub use error::{Error, Result};
pub use free_field::{FreeSampler, WickConstants};
pub use lattice::{FieldConfig, Grid, Lattice, LatticeField, MollifierKernel, TestFunction};
pub use sampler::{ChainConfig, SampleStream, UpdateKind};
pub use stats::MomentEstimate;
