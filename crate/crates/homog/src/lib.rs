//! Effective thermal conductivity of a square periodic two-phase cell.
//!
//! The cell is `[0, 2pi]^2` with a `pi x pi` inclusion in the middle. Four
//! neural solvers (strong/weak residual, primal potential / dual stream
//! function) produce trial fields; a P1 finite element solver on the same
//! cell is the benchmark; projecting any trial field onto the P1 space gives
//! guaranteed upper and lower bounds on the effective conductivity, and the
//! primal-dual gap flags runs that silently converged to the wrong answer.

pub mod autodiff;
pub mod batch;
pub mod bounds;
pub mod config;
pub mod fem;
pub mod losses;
pub mod material;
pub mod network;
pub mod par;
pub mod quadrature;
pub mod report;
pub mod run;
pub mod suite;
pub mod test_bases;
pub mod train;
