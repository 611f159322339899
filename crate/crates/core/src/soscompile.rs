//! Compiles the data-driven SOS conditions into a standard-form SDP.
//!
//! Given data `(U, X0, X1, Z0T)`, the search is for a `T x N` matrix
//! polynomial `Y(x)` with
//!
//! * `Z0T Y(x) = P` constant, symmetric, `P >= mu I`, and
//! * `Q(x) = -(J X1 Y(x) + Y(x)^T X1^T J^T) - eps(x) I` SOS, `J = dZ/dx`.
//!
//! `Q` is SOS iff `y^T Q(x) y` is SOS in `(x, y)`, which is a Gram condition
//! over the extended basis `{ y_i m_a(x) }`:
//!
//! ```text
//!   Q_ik(x) = sum_{a, b} Theta[(i,a), (k,b)] m_a(x) m_b(x),   Theta >= 0
//! ```
//!
//! # Program shape
//!
//! Feasibility is posed as margin maximization: maximize `t` subject to
//! `P - (mu + t) I >= 0`, `Theta - t I >= 0` and every equality. The decision
//! is accepted iff `t* >= -1e-8` ([`FEASIBILITY_TOL`]). Scaling `Y` scales the
//! margin, so the coefficients of `Y` are confined to an L1 ball of radius
//! [`SosOptions::radius`] (and `|t|` to the same radius). Feasibility of the
//! original cone condition is therefore decided inside that ball.
//!
//! Blocks, in order:
//!
//! 1. `P - (mu + t) I`, dense `N x N`;
//! 2. `Theta - t I`, dense over the reduced extended basis;
//! 3. one diagonal block `[v+, v-, t+, t-, s_v, s_t]` holding every free
//!    scalar as a difference of nonnegatives, plus the two ball slacks.
//!
//! Extended basis elements `(i, m)` whose square `m^2` cannot appear in `Q_ii`
//! (its coefficient is identically zero and no other pair produces it) force a
//! zero row and column of `Theta`; they are removed before assembly, repeatedly
//! until nothing changes.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use ddsos_sdp::{BlockKind, BlockMatrix, SdpProblem, SdpSolution, SolveStatus, SolverOptions, SparseSym};

use crate::data::DataMatrices;
use crate::poly::{monomial_basis, MatrixPolynomial, Monomial, MonomialVector, Polynomial};
use crate::Error;

/// Acceptance threshold on the margin `t*`.
pub const FEASIBILITY_TOL: f64 = -1e-8;

/// Row tolerance for redundant-equality elimination.
pub const REDUNDANCY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SosOptions {
    /// Degree of `Y(x)`.
    pub dy: u32,
    /// Lower bound on the eigenvalues of `P`.
    pub mu: f64,
    /// Fixed SOS polynomial subtracted from the diagonal of `Q`.
    pub epsilon: Polynomial,
    /// Extra degree for the Gram basis beyond `ceil(deg Q / 2)`.
    pub gram_degree_pad: u32,
    /// L1 radius bounding the decision coefficients and the margin.
    pub radius: f64,
}

impl SosOptions {
    /// `dy = 1`, `mu = 1e-3`, `eps = 1e-5 (x1^2 + ... + xn^2)`, no pad, radius 10.
    pub fn default_for(n: usize) -> Self {
        let mut eps = Polynomial::zero(n);
        for i in 0..n {
            let mut e = vec![0; n];
            e[i] = 2;
            eps.add_term(Monomial::new(e), 1e-5);
        }
        Self { dy: 1, mu: 1e-3, epsilon: eps, gram_degree_pad: 0, radius: 10.0 }
    }

    pub fn validate(&self, n: usize) -> Result<(), Error> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if self.epsilon.nvars() != n {
            return Err(Error::Dimension(format!("epsilon has {} variables, expected {n}", self.epsilon.nvars())));
        }
        for (m, c) in self.epsilon.terms() {
            if c < 0.0 || m.sqrt().is_none() {
                return Err(Error::Config(format!(
                    "epsilon must be a nonnegative combination of squared monomials; term {c}*{m} is not"
                )));
            }
        }
        Ok(())
    }
}

/// `c + sum_v a_v z_v` over decision variables `z`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub coeffs: BTreeMap<usize, f64>,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, coeffs: BTreeMap::new() }
    }

    pub fn var(v: usize, c: f64) -> Self {
        let mut a = Self::default();
        a.add_var(v, c);
        a
    }

    pub fn add_var(&mut self, v: usize, c: f64) {
        if c == 0.0 {
            return;
        }
        let e = self.coeffs.entry(v).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.coeffs.remove(&v);
        }
    }

    pub fn add_scaled(&mut self, other: &Affine, s: f64) {
        self.constant += s * other.constant;
        for (&v, &c) in &other.coeffs {
            self.add_var(v, s * c);
        }
    }

    /// No variables and a zero constant.
    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.coeffs.is_empty()
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(&v, &c)| c * values[v]).sum::<f64>()
    }
}

/// Polynomial in `x` whose coefficients are [`Affine`] in the decision variables.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePoly {
    n: usize,
    terms: BTreeMap<Monomial, Affine>,
}

impl AffinePoly {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    pub fn from_polynomial(p: &Polynomial) -> Self {
        let mut out = Self::zero(p.nvars());
        for (m, c) in p.terms() {
            out.add(m.clone(), &Affine::constant(c), 1.0);
        }
        out
    }

    pub fn add(&mut self, m: Monomial, a: &Affine, s: f64) {
        let e = self.terms.entry(m.clone()).or_default();
        e.add_scaled(a, s);
        if e.is_zero() {
            self.terms.remove(&m);
        }
    }

    pub fn add_poly(&mut self, other: &AffinePoly, s: f64) {
        for (m, a) in &other.terms {
            self.add(m.clone(), a, s);
        }
    }

    pub fn mul_poly(&self, p: &Polynomial) -> AffinePoly {
        let mut out = AffinePoly::zero(self.n);
        for (m, a) in &self.terms {
            for (pm, pc) in p.terms() {
                out.add(m.mul(pm), a, pc);
            }
        }
        out
    }

    pub fn coeff(&self, m: &Monomial) -> Option<&Affine> {
        self.terms.get(m)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Affine)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn eval_vars(&self, values: &[f64]) -> Polynomial {
        Polynomial::from_terms(self.n, self.terms.iter().map(|(m, a)| (m.clone(), a.eval(values))))
    }
}

/// Matrix of [`AffinePoly`], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMatrix {
    rows: usize,
    cols: usize,
    n: usize,
    entries: Vec<AffinePoly>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize, n: usize) -> Self {
        Self { rows, cols, n, entries: vec![AffinePoly::zero(n); rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &AffinePoly {
        &self.entries[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut AffinePoly {
        &mut self.entries[i * self.cols + j]
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(AffinePoly::degree).max().unwrap_or(0)
    }

    /// `M * self` for a constant `M`.
    pub fn left_const(&self, m: &DMatrix<f64>) -> AffineMatrix {
        assert_eq!(m.ncols(), self.rows);
        let mut out = AffineMatrix::zeros(m.nrows(), self.cols, self.n);
        for i in 0..m.nrows() {
            for j in 0..self.cols {
                let acc = out.get_mut(i, j);
                for k in 0..self.rows {
                    if m[(i, k)] != 0.0 {
                        acc.add_poly(self.get(k, j), m[(i, k)]);
                    }
                }
            }
        }
        out
    }

    /// `M(x) * self` for a polynomial matrix `M`.
    pub fn left_poly(&self, m: &MatrixPolynomial) -> AffineMatrix {
        assert_eq!(m.cols(), self.rows);
        let mut out = AffineMatrix::zeros(m.rows(), self.cols, self.n);
        for i in 0..m.rows() {
            for j in 0..self.cols {
                for k in 0..self.rows {
                    if !m.get(i, k).is_zero() {
                        let prod = self.get(k, j).mul_poly(m.get(i, k));
                        out.get_mut(i, j).add_poly(&prod, 1.0);
                    }
                }
            }
        }
        out
    }

    pub fn add(&mut self, other: &AffineMatrix, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.add_poly(b, s);
        }
    }

    pub fn transpose(&self) -> AffineMatrix {
        let mut out = AffineMatrix::zeros(self.cols, self.rows, self.n);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *out.get_mut(j, i) = self.get(i, j).clone();
            }
        }
        out
    }

    /// Every monomial appearing in some entry.
    pub fn support(&self) -> BTreeSet<Monomial> {
        self.entries.iter().flat_map(|p| p.terms.keys().cloned()).collect()
    }

    pub fn eval_vars(&self, values: &[f64]) -> MatrixPolynomial {
        let entries = self.entries.iter().map(|p| p.eval_vars(values)).collect();
        MatrixPolynomial::from_entries(self.rows, self.cols, entries).expect("shape preserved")
    }
}

/// A matrix polynomial whose coefficients are fresh decision variables:
/// entry `(r, c)` is `sum_b z[var(r, c, b)] * basis[b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicMatrix {
    pub rows: usize,
    pub cols: usize,
    pub n: usize,
    pub basis: Vec<Monomial>,
    pub offset: usize,
}

impl SymbolicMatrix {
    pub fn new(rows: usize, cols: usize, n: usize, degree: u32, offset: usize) -> Self {
        Self { rows, cols, n, basis: monomial_basis(n, degree), offset }
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols * self.basis.len()
    }

    pub fn var(&self, r: usize, c: usize, b: usize) -> usize {
        self.offset + (r * self.cols + c) * self.basis.len() + b
    }

    /// Variable index of the coefficient of `m` in entry `(r, c)`.
    pub fn index_of(&self, r: usize, c: usize, m: &Monomial) -> Option<usize> {
        self.basis.iter().position(|b| b == m).map(|b| self.var(r, c, b))
    }

    pub fn as_affine(&self) -> AffineMatrix {
        let mut out = AffineMatrix::zeros(self.rows, self.cols, self.n);
        for r in 0..self.rows {
            for c in 0..self.cols {
                for (b, m) in self.basis.iter().enumerate() {
                    out.get_mut(r, c).add(m.clone(), &Affine::var(self.var(r, c, b), 1.0), 1.0);
                }
            }
        }
        out
    }

    pub fn assemble(&self, values: &[f64]) -> MatrixPolynomial {
        let mut out = MatrixPolynomial::zeros(self.rows, self.cols, self.n);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let p = Polynomial::from_terms(
                    self.n,
                    self.basis.iter().enumerate().map(|(b, m)| (m.clone(), values[self.var(r, c, b)])),
                );
                out.set(r, c, p);
            }
        }
        out
    }

    /// Inverse of [`SymbolicMatrix::assemble`]; terms outside the basis are an error.
    pub fn values_from(&self, y: &MatrixPolynomial, values: &mut [f64]) -> Result<(), Error> {
        if y.rows() != self.rows || y.cols() != self.cols {
            return Err(Error::Dimension(format!("expected a {}x{} matrix", self.rows, self.cols)));
        }
        for r in 0..self.rows {
            for c in 0..self.cols {
                for (m, v) in y.get(r, c).terms() {
                    let idx = self.index_of(r, c, m).ok_or_else(|| {
                        Error::Dimension(format!("term {m} exceeds the degree of the symbolic matrix"))
                    })?;
                    values[idx] = v;
                }
            }
        }
        Ok(())
    }
}

/// `-(J M + M^T J^T) - eps I` for `M` an `n x N` affine matrix.
pub fn q_from_closed_loop(z: &MonomialVector, m: &AffineMatrix, eps: &Polynomial) -> AffineMatrix {
    let w = m.left_poly(&z.jacobian());
    let mut q = AffineMatrix::zeros(z.len(), z.len(), z.nvars());
    q.add(&w, -1.0);
    q.add(&w.transpose(), -1.0);
    let e = AffinePoly::from_polynomial(eps);
    for i in 0..z.len() {
        q.get_mut(i, i).add_poly(&e, -1.0);
    }
    q
}

/// `Q(x) = -(J X1 Y(x) + Y(x)^T X1^T J^T) - eps(x) I`, affine in the coefficients of `Y`.
pub fn build_q_template(dm: &DataMatrices, y: &SymbolicMatrix, eps: &Polynomial) -> AffineMatrix {
    q_from_closed_loop(dm.z(), &y.as_affine().left_const(&dm.record.x1), eps)
}

/// Same matrix as [`build_q_template`], computed with plain polynomial arithmetic
/// from a concrete `Y`.
pub fn q_matrix(z: &MonomialVector, closed_loop: &MatrixPolynomial, eps: &Polynomial) -> MatrixPolynomial {
    let w = z.jacobian().try_mul(closed_loop).expect("shapes conform");
    let mut q = w.try_add(&w.transpose()).expect("square").scale(-1.0);
    for i in 0..z.len() {
        let d = q.get(i, i) - eps;
        q.set(i, i, d);
    }
    q
}

/// Where an equality row came from.
#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintOrigin {
    /// Coefficient of a nonconstant monomial in `(Z0T Y)[i][j]` must vanish.
    Constancy { i: usize, j: usize, monomial: Monomial },
    /// `P[i][j] = P[j][i]`.
    Symmetry { i: usize, j: usize },
    /// Ties entry `(i, j)` of the `P` block to `P - (mu + t) I`.
    PBlock { i: usize, j: usize },
    /// Coefficient of `monomial` in `Q[i][k]`.
    Gram { i: usize, k: usize, monomial: Monomial },
    /// L1 ball on the decision coefficients.
    CoefficientBall,
    /// Bound on `|t|`.
    MarginBall,
}

/// Gram matrix over an extended basis `{ y_i m(x) }`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    /// `(i, m)` pairs; `i` indexes the row of `Q`.
    pub basis: Vec<(usize, Monomial)>,
    pub theta: DMatrix<f64>,
}

impl GramMatrix {
    /// `Q_ik(x) = sum Theta[(i,a),(k,b)] m_a m_b` as an `size x size` matrix polynomial.
    pub fn to_matrix_polynomial(&self, size: usize, n: usize) -> MatrixPolynomial {
        let mut out = MatrixPolynomial::zeros(size, size, n);
        for (r, (i, ma)) in self.basis.iter().enumerate() {
            for (c, (k, mb)) in self.basis.iter().enumerate() {
                let v = self.theta[(r, c)];
                if v != 0.0 {
                    let sum = out.get(*i, *k) + &Polynomial::monomial(ma.mul(mb), v);
                    out.set(*i, *k, sum);
                }
            }
        }
        out
    }

    /// The extended basis vector `z(x, y)`.
    pub fn basis_vector(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|(i, m)| y[*i] * m.eval(x)).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        ddsos_sdp::min_eigenvalue(&self.theta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProgramKind {
    /// Decision: `Y(x)` (`T x N`); `P = Z0T Y`.
    DataDriven,
    /// Decision: symmetric `P` and `Y(x)` (`m x N`); closed loop `A P + B Y`.
    ModelBased { a: DMatrix<f64>, b: DMatrix<f64> },
    /// Is a fixed polynomial SOS? No `P` block, no decision coefficients.
    Scalar { p: Polynomial },
}

/// A compiled program plus everything needed to read its solution back.
#[derive(Clone, Debug)]
pub struct SosProgram {
    pub kind: ProgramKind,
    pub opts: SosOptions,
    pub n: usize,
    /// Size of `Q` (`N`, or 1 for scalar programs).
    pub size: usize,
    pub z: Option<MonomialVector>,
    /// Data-driven only: data matrices.
    pub x1: Option<DMatrix<f64>>,
    pub z0t: Option<DMatrix<f64>>,
    /// Decision coefficients of `Y(x)`.
    pub y: Option<SymbolicMatrix>,
    /// Model-based only: variable index of `P[i][j]`, `i <= j`.
    pub p_vars: Option<Vec<Vec<usize>>>,
    /// `P` as an affine expression of the decision coefficients.
    pub p_expr: Option<Vec<Vec<Affine>>>,
    pub q: AffineMatrix,
    pub nvars: usize,
    pub gram_half_degree: u32,
    /// Extended basis before facial reduction.
    pub full_gram_basis: Vec<(usize, Monomial)>,
    /// Extended basis actually used.
    pub gram_basis: Vec<(usize, Monomial)>,
    pub p_block: Option<usize>,
    pub gram_block: Option<usize>,
    pub diag_block: usize,
    /// Origin of every row of the returned [`SdpProblem`].
    pub origins: Vec<ConstraintOrigin>,
    /// Rows removed as redundant.
    pub removed_rows: usize,
}

impl SosProgram {
    pub fn y_count(&self) -> usize {
        self.y.as_ref().map(SymbolicMatrix::count).unwrap_or(0)
    }

    fn t_plus(&self) -> usize {
        2 * self.nvars
    }
}

/// Shared program description before assembly.
struct Parts {
    n: usize,
    size: usize,
    nvars: usize,
    p: Option<Vec<Vec<Affine>>>,
    zero: Vec<(Affine, ConstraintOrigin)>,
    q: AffineMatrix,
    mu: f64,
    radius: f64,
    pad: u32,
}

/// Adds `coef * X[r][c]` (one ordered entry of a symmetric block) to `a`.
fn push_entry(a: &mut SparseSym, block: usize, r: usize, c: usize, coef: f64) {
    if r == c {
        a.push(block, r, r, coef);
    } else {
        a.push(block, r.min(c), r.max(c), 0.5 * coef);
    }
}

/// Adds `coef * z_v` with `z_v = z+ - z-`.
fn push_var(a: &mut SparseSym, diag: usize, nvars: usize, v: usize, coef: f64) {
    a.push(diag, v, v, coef);
    a.push(diag, nvars + v, nvars + v, -coef);
}

fn reduce_basis(q: &AffineMatrix, full: &[(usize, Monomial)]) -> Vec<(usize, Monomial)> {
    let mut keep: Vec<(usize, Monomial)> = full.to_vec();
    loop {
        let before = keep.len();
        let snapshot = keep.clone();
        keep.retain(|(i, m)| {
            let sq = m.mul(m);
            let structural_zero = q.get(*i, *i).coeff(&sq).is_none_or(Affine::is_zero);
            if !structural_zero {
                return true;
            }
            // Another pair of the same row block producing m^2 keeps the entry free.
            snapshot
                .iter()
                .filter(|(k, _)| k == i)
                .any(|(_, a)| a != m && snapshot.iter().any(|(k2, b)| k2 == i && b != m && a.mul(b) == sq))
        });
        if keep.len() == before {
            return keep;
        }
    }
}

fn assemble(parts: Parts) -> Result<(SosProgram, SdpProblem), Error> {
    let Parts { n, size, nvars, p, zero, q, mu, radius, pad } = parts;
    let dq = q.degree();
    let half = dq.div_ceil(2) + pad;
    let mono = monomial_basis(n, half);
    let full: Vec<(usize, Monomial)> =
        (0..size).flat_map(|i| mono.iter().map(move |m| (i, m.clone()))).collect();
    let gram_basis = reduce_basis(&q, &full);

    let mut blocks = Vec::new();
    let p_block = p.as_ref().map(|_| {
        blocks.push(BlockKind::Psd(size));
        blocks.len() - 1
    });
    let gram_block = (!gram_basis.is_empty()).then(|| {
        blocks.push(BlockKind::Psd(gram_basis.len()));
        blocks.len() - 1
    });
    let diag = blocks.len();
    blocks.push(BlockKind::Diag(2 * nvars + 4));
    let (tp, tm, sv, st) = (2 * nvars, 2 * nvars + 1, 2 * nvars + 2, 2 * nvars + 3);

    let mut prob = SdpProblem::new(blocks);
    prob.c = SparseSym::from_triplets([(diag, tp, tp, -1.0), (diag, tm, tm, 1.0)]);
    let mut origins = Vec::new();

    for (a, origin) in zero {
        if a.coeffs.is_empty() {
            if a.constant != 0.0 {
                return Err(Error::Infeasible { margin: f64::NEG_INFINITY });
            }
            continue;
        }
        let mut row = SparseSym::new();
        for (&v, &c) in &a.coeffs {
            push_var(&mut row, diag, nvars, v, c);
        }
        row.canonicalize();
        prob.add_constraint(row, -a.constant);
        origins.push(origin);
    }

    if let (Some(p), Some(pb)) = (&p, p_block) {
        for i in 0..size {
            for j in i..size {
                let mut row = SparseSym::new();
                row.push(pb, i, j, if i == j { 1.0 } else { 0.5 });
                for (&v, &c) in &p[i][j].coeffs {
                    push_var(&mut row, diag, nvars, v, -c);
                }
                let mut rhs = p[i][j].constant;
                if i == j {
                    row.push(diag, tp, tp, 1.0);
                    row.push(diag, tm, tm, -1.0);
                    rhs -= mu;
                }
                row.canonicalize();
                prob.add_constraint(row, rhs);
                origins.push(ConstraintOrigin::PBlock { i, j });
            }
        }
    }

    // Gram coefficient matching, upper triangle of Q only.
    for i in 0..size {
        for k in i..size {
            let rows_i: Vec<usize> = (0..gram_basis.len()).filter(|&r| gram_basis[r].0 == i).collect();
            let rows_k: Vec<usize> = (0..gram_basis.len()).filter(|&r| gram_basis[r].0 == k).collect();
            let mut products: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
            for &r in &rows_i {
                for &c in &rows_k {
                    products.entry(gram_basis[r].1.mul(&gram_basis[c].1)).or_default().push((r, c));
                }
            }
            let mut monos: BTreeSet<Monomial> = products.keys().cloned().collect();
            monos.extend(q.get(i, k).terms().map(|(m, _)| m.clone()));
            for mono in monos {
                let coeff = q.get(i, k).coeff(&mono).cloned().unwrap_or_default();
                let pairs = products.get(&mono).map(Vec::as_slice).unwrap_or(&[]);
                if pairs.is_empty() {
                    if coeff.is_zero() {
                        continue;
                    }
                    if coeff.coeffs.is_empty() {
                        return Err(Error::Compile(format!(
                            "coefficient of {mono} in Q[{}][{}] is fixed at {} but no Gram entry over basis degree {half} produces it; increase the Gram degree pad",
                            i + 1,
                            k + 1,
                            coeff.constant
                        )));
                    }
                }
                let mut row = SparseSym::new();
                let gb = gram_block.expect("pairs imply a Gram block");
                let mut diag_hits = 0.0;
                for &(r, c) in pairs {
                    push_entry(&mut row, gb, r, c, 1.0);
                    if r == c {
                        diag_hits += 1.0;
                    }
                }
                if diag_hits != 0.0 {
                    row.push(diag, tp, tp, diag_hits);
                    row.push(diag, tm, tm, -diag_hits);
                }
                for (&v, &c) in &coeff.coeffs {
                    push_var(&mut row, diag, nvars, v, -c);
                }
                row.canonicalize();
                prob.add_constraint(row, coeff.constant);
                origins.push(ConstraintOrigin::Gram { i, k, monomial: mono });
            }
        }
    }

    if nvars > 0 {
        let mut row = SparseSym::new();
        for v in 0..2 * nvars {
            row.push(diag, v, v, 1.0);
        }
        row.push(diag, sv, sv, 1.0);
        prob.add_constraint(row, radius);
        origins.push(ConstraintOrigin::CoefficientBall);
    }
    prob.add_constraint(SparseSym::from_triplets([(diag, tp, tp, 1.0), (diag, tm, tm, 1.0), (diag, st, st, 1.0)]), radius);
    origins.push(ConstraintOrigin::MarginBall);

    let total = prob.num_constraints();
    let (reduced, kept) = match prob.eliminate_redundant(REDUNDANCY_TOL) {
        Ok(r) => r,
        Err(ddsos_sdp::SdpError::InconsistentConstraints { .. }) => {
            return Err(Error::Infeasible { margin: f64::NEG_INFINITY })
        }
        Err(e) => return Err(e.into()),
    };
    let origins = kept.iter().map(|&r| origins[r].clone()).collect();

    let prog = SosProgram {
        kind: ProgramKind::DataDriven,
        opts: SosOptions { dy: 0, mu, epsilon: Polynomial::zero(n), gram_degree_pad: pad, radius },
        n,
        size,
        z: None,
        x1: None,
        z0t: None,
        y: None,
        p_vars: None,
        p_expr: p,
        q,
        nvars,
        gram_half_degree: half,
        full_gram_basis: full,
        gram_basis,
        p_block,
        gram_block,
        diag_block: diag,
        origins,
        removed_rows: total - kept.len(),
    };
    Ok((prog, reduced))
}

/// Compiles the data-driven program for `dm`.
pub fn compile(dm: &DataMatrices, opts: &SosOptions) -> Result<(SosProgram, SdpProblem), Error> {
    let n = dm.n();
    opts.validate(n)?;
    let big_n = dm.n_monomials();
    let t = dm.samples();
    let y = SymbolicMatrix::new(t, big_n, n, opts.dy, 0);
    let zy = y.as_affine().left_const(&dm.z0t);
    let one = Monomial::one(n);

    let mut zero = Vec::new();
    for mono in zy.support() {
        if mono.is_one() {
            continue;
        }
        for i in 0..big_n {
            for j in 0..big_n {
                if let Some(a) = zy.get(i, j).coeff(&mono) {
                    zero.push((a.clone(), ConstraintOrigin::Constancy { i, j, monomial: mono.clone() }));
                }
            }
        }
    }
    let p_full: Vec<Vec<Affine>> = (0..big_n)
        .map(|i| (0..big_n).map(|j| zy.get(i, j).coeff(&one).cloned().unwrap_or_default()).collect())
        .collect();
    for i in 0..big_n {
        for j in (i + 1)..big_n {
            let mut a = p_full[i][j].clone();
            a.add_scaled(&p_full[j][i], -1.0);
            zero.push((a, ConstraintOrigin::Symmetry { i, j }));
        }
    }

    let q = build_q_template(dm, &y, &opts.epsilon);
    let (mut prog, prob) = assemble(Parts {
        n,
        size: big_n,
        nvars: y.count(),
        p: Some(p_full),
        zero,
        q,
        mu: opts.mu,
        radius: opts.radius,
        pad: opts.gram_degree_pad,
    })?;
    prog.kind = ProgramKind::DataDriven;
    prog.opts = opts.clone();
    prog.z = Some(dm.z().clone());
    prog.x1 = Some(dm.record.x1.clone());
    prog.z0t = Some(dm.z0t.clone());
    prog.y = Some(y);
    Ok((prog, prob))
}

/// Compiles the model-based program: symmetric `P >= mu I` and `Y(x)` (`m x N`)
/// with `-(J (A P + B Y) + (..)^T) - eps I` SOS.
pub fn compile_model_based(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    z: &MonomialVector,
    opts: &SosOptions,
) -> Result<(SosProgram, SdpProblem), Error> {
    let n = z.nvars();
    let big_n = z.len();
    opts.validate(n)?;
    if a.nrows() != n || a.ncols() != big_n || b.nrows() != n || b.ncols() == 0 {
        return Err(Error::Dimension("A must be n x N and B n x m".into()));
    }
    let m = b.ncols();
    let mut p_vars = vec![vec![0usize; big_n]; big_n];
    let mut next = 0;
    for i in 0..big_n {
        for j in i..big_n {
            p_vars[i][j] = next;
            p_vars[j][i] = next;
            next += 1;
        }
    }
    let y = SymbolicMatrix::new(m, big_n, n, opts.dy, next);
    let nvars = next + y.count();

    let mut p_aff = AffineMatrix::zeros(big_n, big_n, n);
    let one = Monomial::one(n);
    for i in 0..big_n {
        for j in 0..big_n {
            p_aff.get_mut(i, j).add(one.clone(), &Affine::var(p_vars[i][j], 1.0), 1.0);
        }
    }
    let mut closed = p_aff.left_const(a);
    closed.add(&y.as_affine().left_const(b), 1.0);
    let q = q_from_closed_loop(z, &closed, &opts.epsilon);
    let p_expr: Vec<Vec<Affine>> = (0..big_n)
        .map(|i| (0..big_n).map(|j| Affine::var(p_vars[i][j], 1.0)).collect())
        .collect();

    let (mut prog, prob) = assemble(Parts {
        n,
        size: big_n,
        nvars,
        p: Some(p_expr),
        zero: Vec::new(),
        q,
        mu: opts.mu,
        radius: opts.radius,
        pad: opts.gram_degree_pad,
    })?;
    prog.kind = ProgramKind::ModelBased { a: a.clone(), b: b.clone() };
    prog.opts = opts.clone();
    prog.z = Some(z.clone());
    prog.y = Some(y);
    prog.p_vars = Some(p_vars);
    Ok((prog, prob))
}

/// Compiles "is `p` SOS?" as a single Gram block with margin.
pub fn compile_scalar(p: &Polynomial, pad: u32) -> Result<(SosProgram, SdpProblem), Error> {
    let n = p.nvars();
    let mut q = AffineMatrix::zeros(1, 1, n);
    *q.get_mut(0, 0) = AffinePoly::from_polynomial(p);
    let (mut prog, prob) = assemble(Parts {
        n,
        size: 1,
        nvars: 0,
        p: None,
        zero: Vec::new(),
        q,
        mu: 0.0,
        radius: 10.0,
        pad,
    })?;
    prog.kind = ProgramKind::Scalar { p: p.clone() };
    prog.opts.epsilon = Polynomial::zero(n);
    Ok((prog, prob))
}

/// Values read back from a solver iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct SosSolution {
    /// Decision coefficients `z = z+ - z-`.
    pub values: Vec<f64>,
    /// `Y(x)`; empty `0 x 0` for scalar programs.
    pub y: MatrixPolynomial,
    pub p: DMatrix<f64>,
    pub gram: GramMatrix,
    /// `t*`.
    pub margin: f64,
}

/// Reads `Y`, `P`, `Theta` and the margin from any iterate, without checks.
pub fn read_solution(prog: &SosProgram, sol: &SdpSolution) -> SosSolution {
    let diag = &sol.x[prog.diag_block];
    let nv = prog.nvars;
    let values: Vec<f64> = (0..nv).map(|v| diag.get(v, v) - diag.get(nv + v, nv + v)).collect();
    let tp = prog.t_plus();
    let margin = diag.get(tp, tp) - diag.get(tp + 1, tp + 1);
    let y = prog
        .y
        .as_ref()
        .map(|y| y.assemble(&values))
        .unwrap_or_else(|| MatrixPolynomial::zeros(0, 0, prog.n));
    let p = match &prog.p_expr {
        Some(pe) => {
            let raw = DMatrix::from_fn(prog.size, prog.size, |i, j| pe[i][j].eval(&values));
            (&raw + raw.transpose()) * 0.5
        }
        None => DMatrix::zeros(0, 0),
    };
    let theta = match prog.gram_block {
        Some(g) => {
            let mut th = sol.x[g].to_dense();
            for r in 0..th.nrows() {
                th[(r, r)] += margin;
            }
            th
        }
        None => DMatrix::zeros(0, 0),
    };
    SosSolution { values, y, p, gram: GramMatrix { basis: prog.gram_basis.clone(), theta }, margin }
}

/// Checked extraction: the solver must report optimal and the margin must clear
/// [`FEASIBILITY_TOL`]; then `P` symmetry, `lambda_min(P) >= mu - 1e-6` and
/// `Theta >= -1e-8` are verified.
pub fn extract_solution(prog: &SosProgram, sol: &SdpSolution) -> Result<SosSolution, Error> {
    if sol.status != SolveStatus::Optimal {
        return Err(Error::Solver { status: sol.status, message: sol.message.clone() });
    }
    let out = read_solution(prog, sol);
    if out.margin < FEASIBILITY_TOL {
        return Err(Error::Infeasible { margin: out.margin });
    }
    if let Some(pe) = &prog.p_expr {
        let raw = DMatrix::from_fn(prog.size, prog.size, |i, j| pe[i][j].eval(&out.values));
        let asym = (&raw - raw.transpose()).amax();
        if asym > 1e-8 {
            return Err(Error::Extraction(format!("P is not symmetric (max asymmetry {asym:.3e})")));
        }
        let lmin = ddsos_sdp::min_eigenvalue(&out.p);
        if lmin < prog.opts.mu - 1e-6 {
            return Err(Error::Extraction(format!(
                "lambda_min(P) = {lmin:.3e} is below mu - 1e-6 = {:.3e}",
                prog.opts.mu - 1e-6
            )));
        }
    }
    if out.gram.theta.nrows() > 0 {
        let lmin = out.gram.min_eigenvalue();
        if lmin < -1e-8 {
            return Err(Error::Extraction(format!("Gram matrix has eigenvalue {lmin:.3e} < -1e-8")));
        }
    }
    Ok(out)
}

/// Solves a compiled program and extracts a checked solution.
pub fn solve_program(
    prog: &SosProgram,
    prob: &SdpProblem,
    opts: &SolverOptions,
) -> Result<(SdpSolution, Result<SosSolution, Error>), Error> {
    let sol = ddsos_sdp::solve(prob, opts)?;
    let extracted = extract_solution(prog, &sol);
    Ok((sol, extracted))
}

/// The closed-loop matrix `X1 Y` (data-driven) or `A P + B Y` (model-based).
pub fn closed_loop_matrix(prog: &SosProgram, y: &MatrixPolynomial, p: &DMatrix<f64>) -> MatrixPolynomial {
    match &prog.kind {
        ProgramKind::DataDriven => y.left_mul(prog.x1.as_ref().expect("data-driven program")).expect("shapes"),
        ProgramKind::ModelBased { a, b } => MatrixPolynomial::from_constant(&(a * p), prog.n)
            .try_add(&y.left_mul(b).expect("shapes"))
            .expect("shapes"),
        ProgramKind::Scalar { .. } => MatrixPolynomial::zeros(0, 0, prog.n),
    }
}

/// `Q(x)` recomputed from a concrete solution with polynomial arithmetic.
pub fn q_of_solution(prog: &SosProgram, sol: &SosSolution) -> MatrixPolynomial {
    match &prog.kind {
        ProgramKind::Scalar { p } => MatrixPolynomial::from_entries(1, 1, vec![p.clone()]).expect("1x1"),
        _ => {
            let z = prog.z.as_ref().expect("matrix programs carry Z");
            q_matrix(z, &closed_loop_matrix(prog, &sol.y, &sol.p), &prog.opts.epsilon)
        }
    }
}

/// Largest coefficient difference between `Q(x)` rebuilt from `Y` (and `P`)
/// and `Q(x)` rebuilt from the Gram matrix.
pub fn reconstruct_residual(prog: &SosProgram, sol: &SosSolution) -> f64 {
    let from_y = q_of_solution(prog, sol);
    let from_gram = sol.gram.to_matrix_polynomial(prog.size, prog.n);
    from_y.try_add(&from_gram.scale(-1.0)).expect("same shape").max_abs_coeff()
}

/// `max |coefficient|` over the nonconstant monomials of `Z0T Y(x)`.
pub fn constancy_violation(z0t: &DMatrix<f64>, y: &MatrixPolynomial) -> f64 {
    let zy = y.left_mul(z0t).expect("shapes");
    zy.support()
        .iter()
        .filter(|m| !m.is_one())
        .map(|m| zy.coeff_matrix(m).amax())
        .fold(0.0, f64::max)
}

/// Returns the solver iterate as an optimal-status copy with `X` replaced; used
/// to feed a hand-built point through [`extract_solution`].
pub fn solution_from_values(
    prog: &SosProgram,
    values: &[f64],
    theta: &DMatrix<f64>,
    margin: f64,
) -> SdpSolution {
    let nv = prog.nvars;
    let mut x: Vec<BlockMatrix> = Vec::new();
    if let Some(pe) = &prog.p_expr {
        let p = DMatrix::from_fn(prog.size, prog.size, |i, j| pe[i][j].eval(values));
        x.push(BlockMatrix::Dense(p - DMatrix::identity(prog.size, prog.size) * (prog.opts.mu + margin)));
    }
    if prog.gram_block.is_some() {
        x.push(BlockMatrix::Dense(theta - DMatrix::identity(theta.nrows(), theta.nrows()) * margin));
    }
    let mut d = nalgebra::DVector::zeros(2 * nv + 4);
    for (v, &val) in values.iter().enumerate() {
        if val >= 0.0 {
            d[v] = val;
        } else {
            d[nv + v] = -val;
        }
    }
    if margin >= 0.0 {
        d[2 * nv] = margin;
    } else {
        d[2 * nv + 1] = -margin;
    }
    x.push(BlockMatrix::Diag(d));
    let s = x.iter().map(|b| BlockMatrix::zeros(kind_of(b))).collect();
    SdpSolution {
        status: SolveStatus::Optimal,
        x,
        y: Vec::new(),
        s,
        primal_objective: -margin,
        dual_objective: -margin,
        residuals: Default::default(),
        iterations: 0,
        schur_condition: 0.0,
        message: "hand-built".into(),
    }
}

fn kind_of(b: &BlockMatrix) -> BlockKind {
    match b {
        BlockMatrix::Dense(m) => BlockKind::Psd(m.nrows()),
        BlockMatrix::Diag(d) => BlockKind::Diag(d.len()),
    }
}
