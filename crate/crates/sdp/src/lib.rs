//! Small dense block-diagonal semidefinite programming.
//!
//! * [`SdpProblem`] holds a program in primal standard form with dense PSD
//!   blocks and diagonal (LP) blocks.
//! * [`solve`] runs a primal-dual interior-point method (HKM direction,
//!   Mehrotra predictor-corrector).
//! * [`validate_solution`] recomputes residuals from scratch.
//! * [`sdpa`] reads and writes the SDPA sparse text format.

pub mod instances;
mod linalg;
mod problem;
pub mod sdpa;
mod solver;
mod validate;

pub use linalg::{min_eigenvalue, sym_eigen, symmetrize};
pub use problem::{block_frobenius, block_inner, BlockKind, BlockMatrix, Entry, SdpProblem, SparseSym};
pub use solver::{solve, Residuals, SdpSolution, SolveStatus, SolverOptions};
pub use validate::{validate_point, validate_solution, ResidualReport};

#[derive(Debug, thiserror::Error)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("solver options must be positive (step fraction in (0, 1))")]
    InvalidOptions,
    #[error("equality constraint {row} is a combination of others with mismatched right-hand side (off by {residual:.3e})")]
    InconsistentConstraints { row: usize, residual: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}
