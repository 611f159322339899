//! Learning stabilizing state feedback for polynomial systems from data.
//!
//! The plant class is `dx/dt = A Z(x) + B u` with a known monomial vector
//! `Z(x)` and unknown `A`, `B`. One open-loop experiment gives sampled inputs,
//! states and state derivatives. From those alone, [`soscompile`] builds a
//! sum-of-squares program, [`ddsos_sdp`] solves it, and [`control`] turns the
//! solution into a controller `u = F(x) Z(x)` with a Lyapunov function
//! `V(x) = Z(x)^T P^-1 Z(x)`.
//!
//! Only [`plant`] and the test helpers [`data::closed_loop_identity_residual`],
//! [`control::plant_side_vdot`] and [`control::verify_closed_loop`] ever see
//! `A` and `B`.

pub mod control;
pub mod data;
pub mod plant;
pub mod poly;
pub mod soscompile;

pub use ddsos_sdp as sdp;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid monomial vector: {0}")]
    MonomialVector(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation diverged at t = {time:.6}")]
    BlowUp { time: f64 },
    #[error("only {samples} samples for {n_monomials} monomials: the data matrix needs T >= N columns")]
    TooFewSamples { samples: usize, n_monomials: usize },
    #[error("data matrix is not full row rank: rank {rank} < N = {n_monomials} (sigma_min {sigma_min:.3e}, tolerance {tol:.3e})")]
    RankDeficient { rank: usize, n_monomials: usize, sigma_min: f64, tol: f64 },
    #[error("G(x) violates Z0T G(x) = I (max coefficient error {0:.3e})")]
    NotRightInverse(f64),
    #[error("{0}")]
    Compile(String),
    #[error("program infeasible: best margin t* = {margin:.3e}")]
    Infeasible { margin: f64 },
    #[error("solver stopped with status {status}: {message}")]
    Solver { status: ddsos_sdp::SolveStatus, message: String },
    #[error("extraction failed: {0}")]
    Extraction(String),
    #[error(transparent)]
    Sdp(#[from] ddsos_sdp::SdpError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}
