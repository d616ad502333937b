//! Material point method engine for particle-based variational inference.
//!
//! Particles are treated as an elastic continuum pushed by the score
//! ∇ log p of a target density. Each iteration runs a full MPM cycle
//! (particle-to-grid, grid forces, grid-to-particle) and the particle cloud
//! relaxes toward a sample of the target.
//!
//! The numerical core is generic over [`scalar::Real`]; the aliases at the
//! crate root fix the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod constitutive;
pub mod diag;
pub mod error;
pub mod grid;
pub mod interp;
pub mod sampler;
pub mod scalar;
pub mod snapshot;
pub mod target;
pub mod tensor;
pub mod transfer;

pub use config::{ConfigError, ConfigIssue, SimConfig};
pub use diag::{kde_1d, histogram, mmd_rbf, moments, sample_stats, MmdEstimator, SampleStats};
pub use error::{Error, MpmError};
pub use interp::KernelKind;
pub use sampler::{RunSummary, StopReason, TelemetryRow};
pub use scalar::Real;
pub use snapshot::{read_snapshot, write_snapshot, Snapshot};
pub use transfer::{Execution, TransferScheme};

pub type Vector = tensor::VecN<f64>;
pub type Matrix = tensor::MatN<f64>;
pub type GridSpec = grid::GridSpec<f64>;
pub type Grid = grid::Grid<f64>;
pub type Particle = transfer::Particle<f64>;
pub type ConstitutiveModel = constitutive::ConstitutiveModel<f64>;
pub type TargetDensity = target::TargetDensity<f64>;
pub type Sampler = sampler::Sampler<f64>;
