//! Infeasible-start primal-dual interior-point method.
//!
//! Each iteration solves the Newton system for the HKM search direction
//! (`dX = sigma*mu*S^-1 - X - X dS S^-1`, symmetrized) through the Schur
//! complement `M_ij = tr(A_i X A_j S^-1)`, with a Mehrotra predictor-corrector
//! choice of the centering parameter. Dual problem and sign convention:
//!
//! ```text
//!   maximize  b^T y   subject to  sum_i y_i A_i + S = C,  S >= 0
//! ```
//!
//! so at any primal/dual feasible pair `<C, X> - b^T y = <X, S> >= 0`.
//!
//! Starting point: `X0 = xi * I`, `S0 = eta * I`, `y0 = 0` with
//!
//! ```text
//!   xi  = max(10, sqrt(n), max_i sqrt(n) (1 + |b_i|) / (1 + ||A_i||_F))
//!   eta = max(10, sqrt(n), ||C||_F, max_i ||A_i||_F)
//! ```
//!
//! where `n` is the total block dimension and the `A_i` are the row-normalized
//! constraint matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::linalg::{max_step, symmetrize};
use crate::problem::{block_frobenius, block_inner, BlockKind, BlockMatrix, SdpProblem, SparseSym};
use crate::SdpError;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Absolute bound on `max_i |<A_i, X> - b_i|`; the dual residual is measured
    /// relative to `1 + ||C||_F`.
    pub tol_feas: f64,
    /// Bound on `|pobj - dobj| / (1 + |pobj| + |dobj|)`.
    pub tol_gap: f64,
    pub tol_psd: f64,
    pub max_iters: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_psd: 1e-9,
            max_iters: 100,
            step_fraction: 0.98,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SdpError> {
        let ok = self.tol_feas > 0.0
            && self.tol_gap > 0.0
            && self.tol_psd > 0.0
            && self.max_iters > 0
            && self.step_fraction > 0.0
            && self.step_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(SdpError::InvalidOptions)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    InfeasibleDetected,
    MaxIterations,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::InfeasibleDetected => "infeasible-detected",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

/// Residuals of a primal-dual point, always in the units of the original problem.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residuals {
    /// `max_i |<A_i, X> - b_i|`.
    pub primal: f64,
    /// `||C - S - sum_i y_i A_i||_F`.
    pub dual: f64,
    /// `<C, X> - b^T y`.
    pub gap: f64,
    pub rel_gap: f64,
    pub min_eig_x: f64,
    pub min_eig_s: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<BlockMatrix>,
    pub y: Vec<f64>,
    pub s: Vec<BlockMatrix>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    /// Condition estimate of the last Schur complement factorization.
    pub schur_condition: f64,
    pub message: String,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Problem data with every constraint row scaled to unit Frobenius norm.
struct Scaled {
    blocks: Vec<BlockKind>,
    a: Vec<SparseSym>,
    b: DVector<f64>,
    row_norms: Vec<f64>,
    c: SparseSym,
    /// Per dense block: `(constraint, entries of A_i in both triangles)`.
    dense_terms: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>>,
    /// Per diagonal block and diagonal position: `(constraint, coefficient)`.
    diag_terms: Vec<Vec<Vec<(usize, f64)>>>,
}

impl Scaled {
    fn new(prob: &SdpProblem) -> Result<Self, SdpError> {
        let mut a = Vec::with_capacity(prob.constraints.len());
        let mut b = DVector::zeros(prob.constraints.len());
        let mut row_norms = Vec::with_capacity(prob.constraints.len());
        for (i, ai) in prob.constraints.iter().enumerate() {
            let n = ai.frobenius_norm();
            if n == 0.0 {
                return Err(SdpError::InvalidProblem(format!("constraint {} is identically zero", i + 1)));
            }
            a.push(ai.scaled(1.0 / n));
            b[i] = prob.b[i] / n;
            row_norms.push(n);
        }
        let mut dense_terms: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>> = vec![Vec::new(); prob.blocks.len()];
        let mut diag_terms: Vec<Vec<Vec<(usize, f64)>>> = prob
            .blocks
            .iter()
            .map(|k| match k {
                BlockKind::Diag(n) => vec![Vec::new(); *n],
                BlockKind::Psd(_) => Vec::new(),
            })
            .collect();
        for (i, ai) in a.iter().enumerate() {
            let mut per_block: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); prob.blocks.len()];
            for e in ai.entries() {
                match prob.blocks[e.block] {
                    BlockKind::Psd(_) => {
                        per_block[e.block].push((e.row, e.col, e.value));
                        if e.row != e.col {
                            per_block[e.block].push((e.col, e.row, e.value));
                        }
                    }
                    BlockKind::Diag(_) => diag_terms[e.block][e.row].push((i, e.value)),
                }
            }
            for (blk, entries) in per_block.into_iter().enumerate() {
                if !entries.is_empty() {
                    dense_terms[blk].push((i, entries));
                }
            }
        }
        Ok(Self {
            blocks: prob.blocks.clone(),
            a,
            b,
            row_norms,
            c: prob.c.clone(),
            dense_terms,
            diag_terms,
        })
    }

    fn m(&self) -> usize {
        self.a.len()
    }

    fn apply(&self, x: &[BlockMatrix]) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.a.iter().map(|ai| ai.inner(x)))
    }

    /// `sum_i y_i A_i`.
    fn adjoint(&self, y: &DVector<f64>) -> Vec<BlockMatrix> {
        let mut out: Vec<BlockMatrix> = self.blocks.iter().map(|k| BlockMatrix::zeros(*k)).collect();
        for (i, ai) in self.a.iter().enumerate() {
            if y[i] != 0.0 {
                ai.add_to(y[i], &mut out);
            }
        }
        out
    }

    /// `<A_i, W>` for a possibly nonsymmetric `W`.
    fn apply_general(&self, w: &[BlockMatrix]) -> DVector<f64> {
        self.apply(w)
    }
}

/// Per-block factorization data for the current iterate.
enum BlockFactor {
    Dense {
        chol_x: Cholesky<f64, Dyn>,
        chol_s: Cholesky<f64, Dyn>,
        s_inv: DMatrix<f64>,
    },
    Diag,
}

fn factor_blocks(x: &[BlockMatrix], s: &[BlockMatrix]) -> Option<Vec<BlockFactor>> {
    x.iter()
        .zip(s)
        .map(|(xb, sb)| match (xb, sb) {
            (BlockMatrix::Dense(xm), BlockMatrix::Dense(sm)) => {
                let chol_x = Cholesky::new(xm.clone())?;
                let chol_s = Cholesky::new(sm.clone())?;
                let mut s_inv = chol_s.inverse();
                symmetrize(&mut s_inv);
                Some(BlockFactor::Dense { chol_x, chol_s, s_inv })
            }
            (BlockMatrix::Diag(xd), BlockMatrix::Diag(sd)) => {
                if xd.iter().chain(sd.iter()).all(|v| *v > 0.0 && v.is_finite()) {
                    Some(BlockFactor::Diag)
                } else {
                    None
                }
            }
            _ => None,
        })
        .collect()
}

fn schur_complement(sc: &Scaled, x: &[BlockMatrix], s: &[BlockMatrix], f: &[BlockFactor]) -> DMatrix<f64> {
    let m = sc.m();
    let mut mat = DMatrix::zeros(m, m);
    for (blk, factor) in f.iter().enumerate() {
        match (factor, &x[blk], &s[blk]) {
            (BlockFactor::Dense { s_inv, .. }, BlockMatrix::Dense(xm), _) => {
                let terms = &sc.dense_terms[blk];
                let k = xm.nrows();
                for (j, ej) in terms {
                    if ej.len() > 2 * k {
                        // Dense route: G = X A_j S^-1, then M_ij = sum_{(p,q,a) in A_i} a G[q, p].
                        let mut aj = DMatrix::zeros(k, k);
                        for &(r, c, v) in ej {
                            aj[(r, c)] += v;
                        }
                        let g = xm * aj * s_inv;
                        for (i, ei) in terms {
                            let v: f64 = ei.iter().map(|&(p, q, a)| a * g[(q, p)]).sum();
                            mat[(*i, *j)] += v;
                        }
                    } else {
                        for (i, ei) in terms {
                            let mut v = 0.0;
                            for &(p, q, a) in ei {
                                for &(r, s_, b) in ej {
                                    v += a * b * xm[(q, r)] * s_inv[(s_, p)];
                                }
                            }
                            mat[(*i, *j)] += v;
                        }
                    }
                }
            }
            (BlockFactor::Diag, BlockMatrix::Diag(xd), BlockMatrix::Diag(sd)) => {
                for (d, list) in sc.diag_terms[blk].iter().enumerate() {
                    let w = xd[d] / sd[d];
                    for &(i, a) in list {
                        for &(j, b) in list {
                            mat[(i, j)] += a * b * w;
                        }
                    }
                }
            }
            _ => unreachable!("block kinds are consistent"),
        }
    }
    symmetrize(&mut mat);
    mat
}

/// Cholesky of the Schur complement, with a small diagonal shift as a fallback.
fn factor_schur(mat: DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let maxdiag = mat.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut shift = 0.0;
    for attempt in 0..4 {
        let mut shifted = mat.clone();
        if shift > 0.0 {
            for i in 0..shifted.nrows() {
                shifted[(i, i)] += shift;
            }
        }
        if let Some(ch) = Cholesky::new(shifted) {
            let l = ch.l();
            let d = l.diagonal();
            let (mn, mx) = d
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(mn, mx), v| (mn.min(v.abs()), mx.max(v.abs())));
            let cond = if mn > 0.0 { (mx / mn).powi(2) } else { f64::INFINITY };
            return Some((ch, cond));
        }
        shift = maxdiag * 1e-14 * 100f64.powi(attempt);
    }
    None
}

struct Direction {
    dx: Vec<BlockMatrix>,
    dy: DVector<f64>,
    ds: Vec<BlockMatrix>,
}

/// Solves the Newton system for target `sigma * mu` with an optional second-order
/// correction `corr = dXa dSa`.
#[allow(clippy::too_many_arguments)]
fn direction(
    sc: &Scaled,
    x: &[BlockMatrix],
    s: &[BlockMatrix],
    f: &[BlockFactor],
    schur: &Cholesky<f64, Dyn>,
    rp: &DVector<f64>,
    rd: &[BlockMatrix],
    sigma_mu: f64,
    corr: Option<&[BlockMatrix]>,
) -> Direction {
    // W = sigma*mu*S^-1 - X - X Rd S^-1 - corr S^-1
    let w: Vec<BlockMatrix> = (0..x.len())
        .map(|b| match (&f[b], &x[b], &s[b], &rd[b]) {
            (BlockFactor::Dense { s_inv, .. }, BlockMatrix::Dense(xm), _, BlockMatrix::Dense(r)) => {
                let mut w = s_inv * sigma_mu - xm - xm * r * s_inv;
                if let Some(BlockMatrix::Dense(c)) = corr.map(|c| &c[b]) {
                    w -= c * s_inv;
                }
                BlockMatrix::Dense(w)
            }
            (BlockFactor::Diag, BlockMatrix::Diag(xd), BlockMatrix::Diag(sd), BlockMatrix::Diag(r)) => {
                let mut w = DVector::zeros(xd.len());
                for d in 0..xd.len() {
                    w[d] = sigma_mu / sd[d] - xd[d] - xd[d] * r[d] / sd[d];
                }
                if let Some(BlockMatrix::Diag(c)) = corr.map(|c| &c[b]) {
                    for d in 0..xd.len() {
                        w[d] -= c[d] / sd[d];
                    }
                }
                BlockMatrix::Diag(w)
            }
            _ => unreachable!(),
        })
        .collect();
    let rhs = rp - sc.apply_general(&w);
    let dy = schur.solve(&rhs);
    let aty = sc.adjoint(&dy);
    let ds: Vec<BlockMatrix> = rd
        .iter()
        .zip(&aty)
        .map(|(r, a)| match (r, a) {
            (BlockMatrix::Dense(r), BlockMatrix::Dense(a)) => BlockMatrix::Dense(r - a),
            (BlockMatrix::Diag(r), BlockMatrix::Diag(a)) => BlockMatrix::Diag(r - a),
            _ => unreachable!(),
        })
        .collect();
    let dx: Vec<BlockMatrix> = (0..x.len())
        .map(|b| match (&f[b], &x[b], &s[b], &w[b], &aty[b]) {
            (BlockFactor::Dense { s_inv, .. }, BlockMatrix::Dense(xm), _, BlockMatrix::Dense(w), BlockMatrix::Dense(a)) => {
                let mut d = w + xm * a * s_inv;
                symmetrize(&mut d);
                BlockMatrix::Dense(d)
            }
            (BlockFactor::Diag, BlockMatrix::Diag(xd), BlockMatrix::Diag(sd), BlockMatrix::Diag(w), BlockMatrix::Diag(a)) => {
                BlockMatrix::Diag(DVector::from_iterator(
                    xd.len(),
                    (0..xd.len()).map(|d| w[d] + xd[d] * a[d] / sd[d]),
                ))
            }
            _ => unreachable!(),
        })
        .collect();
    Direction { dx, dy, ds }
}

fn step_length(v: &[BlockMatrix], dv: &[BlockMatrix], f: &[BlockFactor], primal: bool) -> f64 {
    let mut alpha = f64::INFINITY;
    for b in 0..v.len() {
        let a = match (&f[b], &v[b], &dv[b]) {
            (BlockFactor::Dense { chol_x, chol_s, .. }, _, BlockMatrix::Dense(d)) => {
                max_step(if primal { chol_x } else { chol_s }, d)
            }
            (BlockFactor::Diag, BlockMatrix::Diag(xd), BlockMatrix::Diag(d)) => xd
                .iter()
                .zip(d.iter())
                .filter(|(_, dd)| **dd < 0.0)
                .map(|(xv, dd)| -xv / dd)
                .fold(f64::INFINITY, f64::min),
            _ => unreachable!(),
        };
        alpha = alpha.min(a);
    }
    alpha
}

fn axpy_blocks(target: &mut [BlockMatrix], alpha: f64, d: &[BlockMatrix]) {
    for (t, d) in target.iter_mut().zip(d) {
        match (t, d) {
            (BlockMatrix::Dense(t), BlockMatrix::Dense(d)) => *t += d * alpha,
            (BlockMatrix::Diag(t), BlockMatrix::Diag(d)) => *t += d * alpha,
            _ => unreachable!(),
        }
    }
}

fn product_blocks(a: &[BlockMatrix], b: &[BlockMatrix]) -> Vec<BlockMatrix> {
    a.iter()
        .zip(b)
        .map(|(a, b)| match (a, b) {
            (BlockMatrix::Dense(a), BlockMatrix::Dense(b)) => BlockMatrix::Dense(a * b),
            (BlockMatrix::Diag(a), BlockMatrix::Diag(b)) => BlockMatrix::Diag(a.component_mul(b)),
            _ => unreachable!(),
        })
        .collect()
}

/// Residuals and objectives of `(X, y, S)` against the original problem.
pub(crate) fn evaluate(prob: &SdpProblem, x: &[BlockMatrix], y: &[f64], s: &[BlockMatrix]) -> (Residuals, f64, f64) {
    let primal = prob
        .constraints
        .iter()
        .zip(&prob.b)
        .map(|(a, b)| (a.inner(x) - b).abs())
        .fold(0.0f64, f64::max);
    let mut rd: Vec<BlockMatrix> = prob.blocks.iter().map(|k| BlockMatrix::zeros(*k)).collect();
    prob.c.add_to(1.0, &mut rd);
    for (a, yi) in prob.constraints.iter().zip(y) {
        a.add_to(-yi, &mut rd);
    }
    for (r, sb) in rd.iter_mut().zip(s) {
        match (r, sb) {
            (BlockMatrix::Dense(r), BlockMatrix::Dense(sm)) => *r -= sm,
            (BlockMatrix::Diag(r), BlockMatrix::Diag(sd)) => *r -= sd,
            _ => unreachable!(),
        }
    }
    let pobj = prob.c.inner(x);
    let dobj: f64 = prob.b.iter().zip(y).map(|(b, y)| b * y).sum();
    let gap = pobj - dobj;
    let res = Residuals {
        primal,
        dual: block_frobenius(&rd),
        gap,
        rel_gap: gap.abs() / (1.0 + pobj.abs() + dobj.abs()),
        min_eig_x: x.iter().map(BlockMatrix::min_eigenvalue).fold(f64::INFINITY, f64::min),
        min_eig_s: s.iter().map(BlockMatrix::min_eigenvalue).fold(f64::INFINITY, f64::min),
    };
    (res, pobj, dobj)
}

/// Solves `prob`; see the module docs for the algorithm and conventions.
///
/// Constraints must be linearly independent (see
/// [`SdpProblem::eliminate_redundant`]). Only malformed input is an `Err`;
/// numerical trouble is reported through [`SdpSolution::status`] together with
/// the best iterate seen.
pub fn solve(prob: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    prob.validate()?;
    opts.validate()?;
    let sc = Scaled::new(prob)?;
    let m = sc.m();
    let n_tot = prob.total_dim() as f64;
    let c_norm = prob.c.frobenius_norm();

    let max_a = sc.a.iter().map(SparseSym::frobenius_norm).fold(0.0f64, f64::max);
    let mut xi = 10f64.max(n_tot.sqrt());
    for (i, a) in sc.a.iter().enumerate() {
        xi = xi.max(n_tot.sqrt() * (1.0 + sc.b[i].abs()) / (1.0 + a.frobenius_norm()));
    }
    let eta = 10f64.max(n_tot.sqrt()).max(c_norm).max(max_a);

    let mut x: Vec<BlockMatrix> = sc.blocks.iter().map(|k| BlockMatrix::identity(*k, xi)).collect();
    let mut s: Vec<BlockMatrix> = sc.blocks.iter().map(|k| BlockMatrix::identity(*k, eta)).collect();
    let mut y = DVector::<f64>::zeros(m);

    let unscale_y = |y: &DVector<f64>| -> Vec<f64> { y.iter().zip(&sc.row_norms).map(|(v, n)| v / n).collect() };

    let mut best: Option<(f64, SdpSolution)> = None;
    let mut status = SolveStatus::MaxIterations;
    let mut message = String::new();
    let mut schur_condition = 0.0;
    let mut iterations = 0;

    for iter in 0..=opts.max_iters {
        iterations = iter;
        let y_orig = unscale_y(&y);
        let (res, pobj, dobj) = evaluate(prob, &x, &y_orig, &s);
        let dual_rel = res.dual / (1.0 + c_norm);
        let merit = (res.primal / opts.tol_feas)
            .max(dual_rel / opts.tol_feas)
            .max(res.rel_gap / opts.tol_gap);
        let candidate = SdpSolution {
            status: SolveStatus::MaxIterations,
            x: x.clone(),
            y: y_orig,
            s: s.clone(),
            primal_objective: pobj,
            dual_objective: dobj,
            residuals: res,
            iterations: iter,
            schur_condition,
            message: String::new(),
        };
        if best.as_ref().is_none_or(|(bm, _)| merit <= *bm) {
            best = Some((merit, candidate));
        }
        if merit <= 1.0 {
            status = SolveStatus::Optimal;
            break;
        }
        if dobj.abs() > 1e12 || pobj.abs() > 1e12 {
            status = SolveStatus::InfeasibleDetected;
            message = format!("objective diverging (primal {pobj:.3e}, dual {dobj:.3e})");
            break;
        }
        if iter == opts.max_iters {
            break;
        }

        let Some(factors) = factor_blocks(&x, &s) else {
            status = SolveStatus::NumericalFailure;
            message = "iterate left the cone interior".into();
            break;
        };
        let rp = &sc.b - sc.apply(&x);
        let mut rd: Vec<BlockMatrix> = sc.blocks.iter().map(|k| BlockMatrix::zeros(*k)).collect();
        sc.c.add_to(1.0, &mut rd);
        let aty = sc.adjoint(&y);
        for ((r, a), sb) in rd.iter_mut().zip(&aty).zip(&s) {
            match (r, a, sb) {
                (BlockMatrix::Dense(r), BlockMatrix::Dense(a), BlockMatrix::Dense(sm)) => *r -= a + sm,
                (BlockMatrix::Diag(r), BlockMatrix::Diag(a), BlockMatrix::Diag(sd)) => *r -= a + sd,
                _ => unreachable!(),
            }
        }
        let mu = block_inner(&x, &s) / n_tot;

        let schur_mat = schur_complement(&sc, &x, &s, &factors);
        let Some((schur, cond)) = factor_schur(schur_mat) else {
            status = SolveStatus::NumericalFailure;
            message = "Schur complement is numerically singular".into();
            schur_condition = f64::INFINITY;
            break;
        };
        schur_condition = cond;

        // Predictor.
        let pred = direction(&sc, &x, &s, &factors, &schur, &rp, &rd, 0.0, None);
        let ap = step_length(&x, &pred.dx, &factors, true).min(1.0);
        let ad = step_length(&s, &pred.ds, &factors, false).min(1.0);
        let mut xa = x.clone();
        axpy_blocks(&mut xa, ap, &pred.dx);
        let mut sa = s.clone();
        axpy_blocks(&mut sa, ad, &pred.ds);
        let mu_aff = block_inner(&xa, &sa) / n_tot;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let corr = product_blocks(&pred.dx, &pred.ds);
        let dir = direction(&sc, &x, &s, &factors, &schur, &rp, &rd, sigma * mu, Some(&corr));
        let ap = (opts.step_fraction * step_length(&x, &dir.dx, &factors, true)).min(1.0);
        let ad = (opts.step_fraction * step_length(&s, &dir.ds, &factors, false)).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            status = SolveStatus::NumericalFailure;
            message = format!("step length collapsed at iteration {iter}");
            break;
        }
        axpy_blocks(&mut x, ap, &dir.dx);
        y.axpy(ad, &dir.dy, 1.0);
        axpy_blocks(&mut s, ad, &dir.ds);
    }

    let (_, mut sol) = best.expect("at least one iterate evaluated");
    // The best iterate may satisfy every tolerance even when the loop ended otherwise.
    let dual_rel = sol.residuals.dual / (1.0 + c_norm);
    if sol.residuals.primal <= opts.tol_feas && dual_rel <= opts.tol_feas && sol.residuals.rel_gap <= opts.tol_gap {
        status = SolveStatus::Optimal;
    }
    sol.status = status;
    sol.iterations = iterations;
    sol.schur_condition = schur_condition;
    sol.message = message;
    Ok(sol)
}
