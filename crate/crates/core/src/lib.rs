//! Nonlocal diffusion with a free boundary on radially symmetric domains.
//!
//! The crate covers kernel reductions and tables, principal eigenvalues on
//! balls, semi-wave speeds, the free-boundary time stepper and the fitting
//! helpers used to read spreading rates off trajectories.

// `!(x > 0.0)` rejects NaN on purpose; indexed loops mirror the stencils.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod kernel;
pub mod quadrature;
pub mod tables;
pub mod nonlinearity;
pub mod eigen;
mod operator;
pub mod semiwave;
pub mod solver;
pub mod analysis;
pub mod config;

pub use error::{Error, Result};
pub use kernel::{KernelKind, RadialKernel, ValidationReport};
pub use nonlinearity::Nonlinearity;
pub use tables::KernelTables;
pub use eigen::{EigenMethod, EigenOptions, EigenProblem, EigenResult};
pub use semiwave::{Kernel1d, SemiWaveOptions, SemiWaveProblem, SemiWaveSolution};
pub use solver::{InitialData, Record, RunConfig, SimState, Simulator, TimeScheme, Trajectory, Verdict};
pub use config::Config;
pub use analysis::{FitModel, FitResult, FitWindow, SweepParam, SweepRow};
