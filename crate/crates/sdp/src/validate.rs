//! Residual report for an arbitrary primal-dual point.
//!
//! Deliberately dense and naive: every constraint matrix is expanded and every
//! trace is formed explicitly, so the numbers do not share code paths with the
//! sparse kernels used inside the solver.

use nalgebra::DMatrix;

use crate::linalg::min_eigenvalue;
use crate::problem::{BlockMatrix, SdpProblem, SparseSym};
use crate::solver::SdpSolution;

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    /// `max_i |<A_i, X> - b_i|`.
    pub primal_infeasibility: f64,
    /// `||C - S - sum_i y_i A_i||_F`.
    pub dual_infeasibility: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `<C, X> - b^T y`.
    pub duality_gap: f64,
    /// Smallest eigenvalue over all blocks of `X`.
    pub min_eig_x: f64,
    /// Smallest eigenvalue over all blocks of `S`.
    pub min_eig_s: f64,
    /// Largest asymmetry `|X_ij - X_ji|` found in a dense block of `X` or `S`.
    pub max_asymmetry: f64,
}

fn expand(m: &SparseSym, block: usize, dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    for e in m.entries().iter().filter(|e| e.block == block) {
        out[(e.row, e.col)] += e.value;
        if e.row != e.col {
            out[(e.col, e.row)] += e.value;
        }
    }
    out
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a.transpose() * b).trace()
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn validate_solution(prob: &SdpProblem, sol: &SdpSolution) -> ResidualReport {
    validate_point(prob, &sol.x, &sol.y, &sol.s)
}

pub fn validate_point(prob: &SdpProblem, x: &[BlockMatrix], y: &[f64], s: &[BlockMatrix]) -> ResidualReport {
    let dense_x: Vec<DMatrix<f64>> = x.iter().map(BlockMatrix::to_dense).collect();
    let dense_s: Vec<DMatrix<f64>> = s.iter().map(BlockMatrix::to_dense).collect();
    let dims: Vec<usize> = prob.blocks.iter().map(|k| k.dim()).collect();

    let mut primal: f64 = 0.0;
    for (a, b) in prob.constraints.iter().zip(&prob.b) {
        let v: f64 = (0..dims.len())
            .map(|blk| trace_product(&expand(a, blk, dims[blk]), &dense_x[blk]))
            .sum();
        primal = primal.max((v - b).abs());
    }

    let mut dual_sq = 0.0;
    let mut pobj = 0.0;
    for blk in 0..dims.len() {
        let c = expand(&prob.c, blk, dims[blk]);
        pobj += trace_product(&c, &dense_x[blk]);
        let mut r = c - &dense_s[blk];
        for (a, yi) in prob.constraints.iter().zip(y) {
            r -= expand(a, blk, dims[blk]) * *yi;
        }
        dual_sq += r.norm_squared();
    }
    let dobj: f64 = prob.b.iter().zip(y).map(|(b, y)| b * y).sum();

    ResidualReport {
        primal_infeasibility: primal,
        dual_infeasibility: dual_sq.sqrt(),
        primal_objective: pobj,
        dual_objective: dobj,
        duality_gap: pobj - dobj,
        min_eig_x: dense_x.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min),
        min_eig_s: dense_s.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min),
        max_asymmetry: dense_x
            .iter()
            .chain(&dense_s)
            .map(asymmetry)
            .fold(0.0, f64::max),
    }
}
