//! Numerical laboratory for front dynamics in gradient-flow reaction-diffusion
//! systems `v_t - v_xx = -ε^{-2} ∇V(v)` with multi-well potentials.

pub mod diagnostics;
pub mod error;
pub mod evolve;
pub mod frontset;
pub mod grid;
pub mod harness;
pub mod potential;
pub mod stationary;
mod tridiag;

pub use diagnostics::{Constants, TrackerLog, Verdict};
pub use error::{Error, Result};
pub use evolve::{Boundary, Integrator, Probe, Trajectory};
pub use frontset::{Covering, FrontSet};
pub use grid::{DensityProfile, Field, Grid1D, TestFunction};
pub use harness::{ExperimentConfig, SweepReport};
pub use potential::{Potential, PotentialKind, WellConstants};
pub use stationary::{ODEState, StationaryProfile, StructureReport};
pub use tridiag::{thomas_solve, thomas_solve_in_place, TridiagFactor};
