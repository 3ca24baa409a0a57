//! Experiment orchestration: replicated CLT studies of the decreasing-step
//! and Richardson-Romberg estimators, their predicted variance and bias
//! constants, and the one-dimensional Poisson solver behind them.

pub mod chebyshev;
pub mod isserlis;
pub mod poisson;
pub mod clt;
pub mod counterexample;
