//! Block-diagonal semidefinite programs in primal standard form.
//!
//! ```text
//!   minimize    <C, X>
//!   subject to  <A_i, X> = b_i,   i = 1..m
//!               X = diag(X_1, ..., X_k) >= 0
//! ```
//!
//! Each block is either a dense symmetric PSD block or a diagonal block
//! (a nonnegative orthant, written with a negative size in SDPA files).
//! Matrices are stored as sparse upper-triangular triplets.

use nalgebra::{DMatrix, DVector};

use crate::SdpError;

/// Shape of one diagonal block of the variable `X`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Dense symmetric `k x k` block constrained to be PSD.
    Psd(usize),
    /// Diagonal `k x k` block, i.e. `k` nonnegative scalars.
    Diag(usize),
}

impl BlockKind {
    pub fn dim(&self) -> usize {
        match *self {
            BlockKind::Psd(k) | BlockKind::Diag(k) => k,
        }
    }

    /// Number of free scalar entries (upper triangle for dense blocks).
    pub fn num_entries(&self) -> usize {
        match *self {
            BlockKind::Psd(k) => k * (k + 1) / 2,
            BlockKind::Diag(k) => k,
        }
    }
}

/// One nonzero of a symmetric block-diagonal matrix; `row <= col`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Sparse symmetric block-diagonal matrix, upper triangle only.
///
/// Entries are kept sorted by `(block, row, col)` with duplicates merged and
/// exact zeros dropped, so two matrices compare equal iff they hold the same
/// nonzeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseSym {
    entries: Vec<Entry>,
}

impl SparseSym {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from arbitrary triplets; `(i, j)` and `(j, i)` refer to the same
    /// symmetric entry and are summed.
    pub fn from_triplets<I>(triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, usize, f64)>,
    {
        let mut m = Self::new();
        for (b, i, j, v) in triplets {
            m.push(b, i, j, v);
        }
        m.canonicalize();
        m
    }

    /// Appends without canonicalizing; call [`SparseSym::canonicalize`] after a batch.
    pub fn push(&mut self, block: usize, i: usize, j: usize, value: f64) {
        let (row, col) = if i <= j { (i, j) } else { (j, i) };
        self.entries.push(Entry { block, row, col, value });
    }

    pub fn canonicalize(&mut self) {
        self.entries
            .sort_by(|a, b| (a.block, a.row, a.col).cmp(&(b.block, b.row, b.col)));
        let mut merged: Vec<Entry> = Vec::with_capacity(self.entries.len());
        for e in self.entries.drain(..) {
            match merged.last_mut() {
                Some(last) if (last.block, last.row, last.col) == (e.block, e.row, e.col) => {
                    last.value += e.value;
                }
                _ => merged.push(e),
            }
        }
        merged.retain(|e| e.value != 0.0);
        self.entries = merged;
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Frobenius norm of the full symmetric matrix.
    pub fn frobenius_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let w = if e.row == e.col { 1.0 } else { 2.0 };
                w * e.value * e.value
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.value *= factor;
        }
        out.entries.retain(|e| e.value != 0.0);
        out
    }

    /// `<self, X>` for a block matrix `X`.
    pub fn inner(&self, x: &[BlockMatrix]) -> f64 {
        self.entries
            .iter()
            .map(|e| match &x[e.block] {
                BlockMatrix::Dense(m) => {
                    if e.row == e.col {
                        e.value * m[(e.row, e.row)]
                    } else {
                        e.value * (m[(e.row, e.col)] + m[(e.col, e.row)])
                    }
                }
                BlockMatrix::Diag(d) => {
                    if e.row == e.col {
                        e.value * d[e.row]
                    } else {
                        0.0
                    }
                }
            })
            .sum()
    }

    /// Adds `factor * self` into `target`.
    pub fn add_to(&self, factor: f64, target: &mut [BlockMatrix]) {
        for e in &self.entries {
            let v = factor * e.value;
            match &mut target[e.block] {
                BlockMatrix::Dense(m) => {
                    m[(e.row, e.col)] += v;
                    if e.row != e.col {
                        m[(e.col, e.row)] += v;
                    }
                }
                BlockMatrix::Diag(d) => d[e.row] += v,
            }
        }
    }
}

/// Dense value of one block.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockMatrix {
    Dense(DMatrix<f64>),
    Diag(DVector<f64>),
}

impl BlockMatrix {
    pub fn zeros(kind: BlockKind) -> Self {
        match kind {
            BlockKind::Psd(k) => BlockMatrix::Dense(DMatrix::zeros(k, k)),
            BlockKind::Diag(k) => BlockMatrix::Diag(DVector::zeros(k)),
        }
    }

    pub fn identity(kind: BlockKind, scale: f64) -> Self {
        match kind {
            BlockKind::Psd(k) => BlockMatrix::Dense(DMatrix::identity(k, k) * scale),
            BlockKind::Diag(k) => BlockMatrix::Diag(DVector::from_element(k, scale)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BlockMatrix::Dense(m) => m.nrows(),
            BlockMatrix::Diag(d) => d.len(),
        }
    }

    /// Entry `(i, j)` of the full block.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            BlockMatrix::Dense(m) => m[(i, j)],
            BlockMatrix::Diag(d) => {
                if i == j {
                    d[i]
                } else {
                    0.0
                }
            }
        }
    }

    /// Dense copy of the block (diagonal blocks are expanded).
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            BlockMatrix::Dense(m) => m.clone(),
            BlockMatrix::Diag(d) => DMatrix::from_diagonal(d),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            BlockMatrix::Dense(m) => crate::linalg::min_eigenvalue(m),
            BlockMatrix::Diag(d) => d.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// `sum_b <X_b, Y_b>`.
pub fn block_inner(x: &[BlockMatrix], y: &[BlockMatrix]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| match (a, b) {
            (BlockMatrix::Dense(a), BlockMatrix::Dense(b)) => a.dot(b),
            (BlockMatrix::Diag(a), BlockMatrix::Diag(b)) => a.dot(b),
            _ => panic!("block kind mismatch"),
        })
        .sum()
}

pub fn block_frobenius(x: &[BlockMatrix]) -> f64 {
    block_inner(x, x).sqrt()
}

/// Mismatch allowed between the right-hand side of a dependent row and the one
/// implied by the kept rows, relative to `1 + ||b||_inf`.
const CONSISTENCY_TOL: f64 = 1e-7;

/// A block-diagonal SDP in primal standard form.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpProblem {
    pub blocks: Vec<BlockKind>,
    pub c: SparseSym,
    pub constraints: Vec<SparseSym>,
    pub b: Vec<f64>,
}

impl SdpProblem {
    pub fn new(blocks: Vec<BlockKind>) -> Self {
        Self {
            blocks,
            c: SparseSym::new(),
            constraints: Vec::new(),
            b: Vec::new(),
        }
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Sum of block dimensions; the barrier parameter of the cone.
    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(BlockKind::dim).sum()
    }

    pub fn add_constraint(&mut self, a: SparseSym, rhs: f64) {
        self.constraints.push(a);
        self.b.push(rhs);
    }

    /// Checks block indices, triangle ordering, diagonal-block shape, and symmetry of
    /// the stored data.
    pub fn validate(&self) -> Result<(), SdpError> {
        if self.blocks.is_empty() || self.blocks.iter().any(|k| k.dim() == 0) {
            return Err(SdpError::InvalidProblem("every block needs size >= 1".into()));
        }
        if self.constraints.len() != self.b.len() {
            return Err(SdpError::InvalidProblem(format!(
                "{} constraint matrices but {} right-hand sides",
                self.constraints.len(),
                self.b.len()
            )));
        }
        let check = |m: &SparseSym, what: &str| -> Result<(), SdpError> {
            for e in m.entries() {
                let kind = self.blocks.get(e.block).ok_or_else(|| {
                    SdpError::InvalidProblem(format!("{what}: block {} out of range", e.block))
                })?;
                if e.row > e.col || e.col >= kind.dim() {
                    return Err(SdpError::InvalidProblem(format!(
                        "{what}: entry ({}, {}) invalid for block {}",
                        e.row, e.col, e.block
                    )));
                }
                if matches!(kind, BlockKind::Diag(_)) && e.row != e.col {
                    return Err(SdpError::InvalidProblem(format!(
                        "{what}: off-diagonal entry in diagonal block {}",
                        e.block
                    )));
                }
                if !e.value.is_finite() {
                    return Err(SdpError::InvalidProblem(format!("{what}: non-finite entry")));
                }
            }
            Ok(())
        };
        check(&self.c, "C")?;
        for (i, a) in self.constraints.iter().enumerate() {
            check(a, &format!("A_{}", i + 1))?;
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::InvalidProblem("non-finite right-hand side".into()));
        }
        Ok(())
    }

    /// Flat column index of every stored entry slot, used for rank computations.
    fn column_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.blocks.len() + 1);
        let mut acc = 0;
        for k in &self.blocks {
            offsets.push(acc);
            acc += k.num_entries();
        }
        offsets.push(acc);
        offsets
    }

    fn column_of(&self, offsets: &[usize], e: &Entry) -> usize {
        match self.blocks[e.block] {
            BlockKind::Psd(_) => offsets[e.block] + e.col * (e.col + 1) / 2 + e.row,
            BlockKind::Diag(_) => offsets[e.block] + e.row,
        }
    }

    /// Constraint `i` as a sparse row over the flattened variable, in the inner
    /// product that reproduces `<A_i, X>` (off-diagonals weighted by 2).
    fn sparse_row(&self, offsets: &[usize], i: usize) -> Vec<(usize, f64)> {
        self.constraints[i]
            .entries()
            .iter()
            .map(|e| {
                let w = if e.row == e.col { 1.0 } else { 2.0 };
                (self.column_of(offsets, e), w * e.value)
            })
            .collect()
    }

    /// Dense `m x n_vars` constraint matrix over the flattened upper triangle.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let offsets = self.column_offsets();
        let nvars = *offsets.last().unwrap();
        let mut out = DMatrix::zeros(self.constraints.len(), nvars);
        for i in 0..self.constraints.len() {
            for (c, v) in self.sparse_row(&offsets, i) {
                out[(i, c)] += v;
            }
        }
        out
    }

    /// Drops linearly dependent equality constraints.
    ///
    /// Rows that own a column no other row touches are independent of the rest;
    /// the remaining rows go through modified Gram-Schmidt. A dependent row whose
    /// right-hand side disagrees with the combination of the kept rows makes the
    /// program infeasible and is reported as an error.
    pub fn eliminate_redundant(&self, tol: f64) -> Result<(SdpProblem, Vec<usize>), SdpError> {
        let offsets = self.column_offsets();
        let nvars = *offsets.last().unwrap();
        let rows: Vec<Vec<(usize, f64)>> = (0..self.constraints.len())
            .map(|i| self.sparse_row(&offsets, i))
            .collect();

        let mut col_count = vec![0usize; nvars];
        for r in &rows {
            for &(c, v) in r {
                if v != 0.0 {
                    col_count[c] += 1;
                }
            }
        }
        let has_private = |r: &Vec<(usize, f64)>| r.iter().any(|&(c, v)| v != 0.0 && col_count[c] == 1);

        // Compact column space for the rows that need orthogonalization.
        let mut compact = vec![usize::MAX; nvars];
        let mut ncompact = 0;
        for r in rows.iter().filter(|r| !has_private(r)) {
            for &(c, _) in r {
                if compact[c] == usize::MAX {
                    compact[c] = ncompact;
                    ncompact += 1;
                }
            }
        }

        let b_scale = 1.0 + self.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut basis: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut keep = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if has_private(r) {
                keep.push(i);
                continue;
            }
            let mut a = DVector::zeros(ncompact);
            for &(c, v) in r {
                a[compact[c]] += v;
            }
            let norm0 = a.norm();
            if norm0 == 0.0 {
                if self.b[i].abs() > tol * b_scale {
                    return Err(SdpError::InconsistentConstraints { row: i, residual: self.b[i] });
                }
                continue;
            }
            let mut rhs = self.b[i] / norm0;
            a /= norm0;
            // Two passes of MGS for numerical orthogonality.
            for _ in 0..2 {
                for (q, beta) in &basis {
                    let proj = q.dot(&a);
                    a.axpy(-proj, q, 1.0);
                    rhs -= proj * beta;
                }
            }
            let n = a.norm();
            if n <= tol {
                if (rhs * norm0).abs() > CONSISTENCY_TOL * b_scale {
                    return Err(SdpError::InconsistentConstraints {
                        row: i,
                        residual: rhs * norm0,
                    });
                }
                continue;
            }
            basis.push((a / n, rhs / n));
            keep.push(i);
        }

        let mut reduced = SdpProblem::new(self.blocks.clone());
        reduced.c = self.c.clone();
        for &i in &keep {
            reduced.add_constraint(self.constraints[i].clone(), self.b[i]);
        }
        Ok((reduced, keep))
    }
}
