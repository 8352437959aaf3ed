//! Parallel-in-time multilevel Krylov solvers for the heat equation.
//!
//! The all-at-once θ-scheme system is solved with FGMRES preconditioned by a
//! shifted deflation operator built from time, time-space, or MGRIT-style
//! intergrid pairs. Parallel cost is simulated by a deterministic ledger.

pub mod acceptance;
pub mod bench;
pub mod config;
pub mod error;
pub mod exec;
pub mod intergrid;
pub mod linalg;
pub mod mk;
pub mod parareal;
pub mod parcost;
pub mod spatial;
pub mod spectral;
pub mod storage;
pub mod theta;

pub use error::{Error, Result};
