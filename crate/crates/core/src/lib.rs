//! Parallel machinery of a latitude-longitude finite-difference dynamical
//! core, at desk scale.
//!
//! - [`grid`]: C-grid geometry, zonal spacings, CFL bounds.
//! - [`decomp`]: 3D process topology, rank ordering, the analytic
//!   communication-volume model.
//! - [`leap`]: adaptive leap intervals and leap-format zonal differences.
//! - [`filters`]: conventional zonal filters and the per-row schedule.
//! - [`halo`]: shifting-window halo planning and message aggregation.
//! - [`runtime`]: a deterministic simulated message-passing runtime.
//! - [`vertical`]: σ-surface vertical velocity, gather-based and refactored.
//! - [`dycore`]: a toy dynamical core wiring all of the above together.
//! - [`config`] and [`commands`]: the batch front end behind the `leapgrid` binary.

pub mod commands;
pub mod config;
pub mod decomp;
pub mod dycore;
pub mod error;
pub mod filters;
pub mod grid;
pub mod halo;
pub mod leap;
pub mod runtime;
pub mod vertical;

pub use error::{Error, Result};
