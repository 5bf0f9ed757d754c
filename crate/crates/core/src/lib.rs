//! Dense order-3 tensor completion.
//!
//! A robust Tucker-completion solver (ADMM over core, factors, sparse
//! outliers and dual), the sample-count bounds that say when exact recovery
//! is possible, sampling and corruption models for volumetric acquisitions,
//! reference quality metrics, and a phase-transition harness.

pub mod error;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod phantom;
pub mod phase;
pub mod rng;
pub mod sampling;
pub mod solver;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use matrix::{khatri_rao, Matrix};
pub use sampling::{corrupt, CorruptionSpec, MaskLaw, SamplingMask};
pub use solver::{solve, SolveReport, SolverConfig, TuckerFactors};
pub use tensor::{DenseTensor3, Dims, Mode};
