//! Simulation and numerical diagnostics for ergodic Brownian diffusions and
//! their duplicated (two-point motion) systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: SDE coefficients and the builtin model zoo.
//! * [`schedule`]: decreasing step sequences, correlated noise for the
//!   Richardson-Romberg pair of Euler schemes.
//! * [`engine`]: Euler-Maruyama integrators (single, coupled pair, continuous
//!   emulation of the duplicated system).
//! * [`empirical`]: online weighted empirical and coupling measures.
//! * [`confluence`]: NILS exponents, pseudo-scale functions, one-dimensional
//!   scale/speed, criterion batteries and the Hörmander rank diagnostic.
//! * [`transport`]: discrete Kantorovich primal/dual for the u.s.c. NILS cost.
//! * [`harness`]: Poisson solver, bias functionals and CLT replication studies.
//! * [`cli`]: configuration parsing and subcommand dispatch.

pub mod cli;
pub mod confluence;
pub mod empirical;
pub mod engine;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod schedule;
pub mod transport;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::Model;
