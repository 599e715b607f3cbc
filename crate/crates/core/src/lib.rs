//! Numerical laboratory for the 3-wave kinetic equation of elastic beam
//! waves on the discretized 3-torus: broadened resonant-triad enumeration,
//! decomposition of wavevector space into no-collision and collisional
//! invariant regions, collision-operator evaluation with conservation and
//! entropy diagnostics, time integration, and local-equilibrium solves.

pub mod accum;
pub mod config;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod io;
pub mod lattice;
pub mod operator;
pub mod regions;
pub mod resonance;
pub mod run;

pub use error::{Error, Result};
