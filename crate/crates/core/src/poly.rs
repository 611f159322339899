//! Sparse multivariate polynomials with `f64` coefficients.
//!
//! Monomials are ordered graded-lexicographically everywhere: by total degree
//! first, then by the exponent of `x1`, `x2`, ... (larger exponent first). In
//! two variables the degree-2 basis is `[1, x1, x2, x1^2, x1*x2, x2^2]`.
//!
//! # Text syntax
//!
//! ```text
//! poly   := ["+" | "-"] term (("+" | "-") term)*
//! term   := factor ("*" factor)*
//! factor := number | "x" index ["^" exponent]
//! ```
//!
//! Variables are `x1 .. xn` (1-based). Numbers accept the usual decimal and
//! exponent forms (`2`, `-4.2114`, `1e-5`). Whitespace is ignored. Printing
//! lists terms from the highest monomial down, e.g. `-4.2114*x1^3 - x1^2 - 2.0247*x2`,
//! using shortest round-trip formatting so that parse(print(p)) == p.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::Error;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial {
    exps: Vec<u32>,
}

impl Monomial {
    pub fn new(exps: Vec<u32>) -> Self {
        Self { exps }
    }

    pub fn one(n: usize) -> Self {
        Self { exps: vec![0; n] }
    }

    /// The monomial `x_i` (0-based index).
    pub fn var(n: usize, i: usize) -> Self {
        let mut exps = vec![0; n];
        exps[i] = 1;
        Self { exps }
    }

    pub fn exps(&self) -> &[u32] {
        &self.exps
    }

    pub fn nvars(&self) -> usize {
        self.exps.len()
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.exps.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.exps.len(), other.exps.len());
        Monomial {
            exps: self.exps.iter().zip(&other.exps).map(|(a, b)| a + b).collect(),
        }
    }

    /// `Some(m)` with `m * m == self` when every exponent is even.
    pub fn sqrt(&self) -> Option<Monomial> {
        if self.exps.iter().all(|e| e % 2 == 0) {
            Some(Monomial { exps: self.exps.iter().map(|e| e / 2).collect() })
        } else {
            None
        }
    }

    /// Power-rule derivative: `(exponent, reduced monomial)`, or `None` when the
    /// variable does not appear.
    pub fn derivative(&self, i: usize) -> Option<(u32, Monomial)> {
        let e = self.exps[i];
        if e == 0 {
            return None;
        }
        let mut exps = self.exps.clone();
        exps[i] -= 1;
        Some((e, Monomial { exps }))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exps
            .iter()
            .zip(x)
            .fold(1.0, |acc, (&e, &xi)| if e == 0 { acc } else { acc * xi.powi(e as i32) })
    }

    /// Index of the single variable when the monomial is a pure power `x_i^k`, `k >= 1`.
    pub fn pure_power_var(&self) -> Option<usize> {
        let mut found = None;
        for (i, &e) in self.exps.iter().enumerate() {
            if e > 0 {
                if found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.exps.cmp(&self.exps))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return f.write_str("1");
        }
        let mut first = true;
        for (i, &e) in self.exps.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                f.write_str("*")?;
            }
            first = false;
            if e == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "x{}^{}", i + 1, e)?;
            }
        }
        Ok(())
    }
}

/// All monomials in `n` variables of total degree `<= d`, in graded-lex order.
/// There are `C(n + d, d)` of them.
pub fn monomial_basis(n: usize, d: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for deg in 0..=d {
        let mut exps = vec![0u32; n];
        homogeneous(n, deg, 0, &mut exps, &mut out);
    }
    out
}

fn homogeneous(n: usize, remaining: u32, pos: usize, exps: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if n == 0 {
        if remaining == 0 {
            out.push(Monomial::new(Vec::new()));
        }
        return;
    }
    if pos == n - 1 {
        exps[pos] = remaining;
        out.push(Monomial::new(exps.clone()));
        exps[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        exps[pos] = e;
        homogeneous(n, remaining - e, pos + 1, exps, out);
    }
    exps[pos] = 0;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    n: usize,
    terms: BTreeMap<Monomial, f64>,
}

fn dim_err(what: &str, a: usize, b: usize) -> Error {
    Error::Dimension(format!("{what}: {a} vs {b} variables"))
}

impl Polynomial {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::from_terms(n, [(Monomial::one(n), c)])
    }

    /// The polynomial `x_i` (0-based index).
    pub fn var(n: usize, i: usize) -> Self {
        Self::from_terms(n, [(Monomial::var(n, i), 1.0)])
    }

    pub fn monomial(m: Monomial, c: f64) -> Self {
        let n = m.nvars();
        Self::from_terms(n, [(m, c)])
    }

    /// Sums repeated monomials and drops exact zeros.
    pub fn from_terms(n: usize, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut p = Self::zero(n);
        for (m, c) in terms {
            assert_eq!(m.nvars(), n, "monomial has the wrong number of variables");
            p.add_term(m, c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Degree of the highest stored term; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0f64, |a, c| a.max(c.abs()))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, Error> {
        if x.len() != self.n {
            return Err(dim_err("evaluation point", x.len(), self.n));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, Error> {
        if self.n != other.n {
            return Err(dim_err("add", self.n, other.n));
        }
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, Error> {
        if self.n != other.n {
            return Err(dim_err("mul", self.n, other.n));
        }
        let mut out = Polynomial::zero(self.n);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        Polynomial::from_terms(self.n, self.terms.iter().map(|(m, v)| (m.clone(), v * c)))
    }

    /// `d/dx_i`.
    pub fn derivative(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.n);
        for (m, c) in &self.terms {
            if let Some((e, r)) = m.derivative(i) {
                out.add_term(r, c * e as f64);
            }
        }
        out
    }

    /// Drops terms with `|c| <= tol`.
    pub fn pruned(&self, tol: f64) -> Polynomial {
        Polynomial {
            n: self.n,
            terms: self.terms.iter().filter(|(_, c)| c.abs() > tol).map(|(m, c)| (m.clone(), *c)).collect(),
        }
    }

    pub fn parse(s: &str, n: usize) -> Result<Polynomial, Error> {
        Parser { src: s.as_bytes(), pos: 0, n }.poly()
    }
}

impl std::ops::Add for &Polynomial {
    type Output = Polynomial;
    /// Panics on a variable-count mismatch; see [`Polynomial::try_add`].
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("variable counts must agree")
    }
}

impl std::ops::Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(&rhs.scale(-1.0)).expect("variable counts must agree")
    }
}

impl std::ops::Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("variable counts must agree")
    }
}

impl std::ops::Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Shortest round-trip text for `v`, without a trailing `.0` on integers.
pub(crate) fn fmt_real(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (k, (m, &c)) in self.terms.iter().rev().enumerate() {
            let neg = c < 0.0 || (c == 0.0 && c.is_sign_negative());
            let a = c.abs();
            if k == 0 {
                if neg {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if neg { " - " } else { " + " })?;
            }
            if m.is_one() {
                f.write_str(&fmt_real(a))?;
            } else if a == 1.0 {
                write!(f, "{m}")?;
            } else {
                write!(f, "{}*{m}", fmt_real(a))?;
            }
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("{msg} at offset {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn poly(&mut self) -> Result<Polynomial, Error> {
        let mut out = Polynomial::zero(self.n);
        let mut sign = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                -1.0
            }
            Some(b'+') => {
                self.pos += 1;
                1.0
            }
            None => return Err(self.err("empty polynomial")),
            _ => 1.0,
        };
        loop {
            let (m, c) = self.term()?;
            out.add_term(m, sign * c);
            match self.peek() {
                None => return Ok(out),
                Some(b'+') => sign = 1.0,
                Some(b'-') => sign = -1.0,
                Some(_) => return Err(self.err("expected '+' or '-'")),
            }
            self.pos += 1;
        }
    }

    fn term(&mut self) -> Result<(Monomial, f64), Error> {
        let mut coeff = 1.0;
        let mut mono = Monomial::one(self.n);
        loop {
            match self.peek() {
                Some(b'x') => {
                    self.pos += 1;
                    let idx = self.integer()?;
                    if idx == 0 || idx as usize > self.n {
                        return Err(self.err(&format!("variable x{idx} outside x1..x{}", self.n)));
                    }
                    let mut e = 1;
                    if self.peek() == Some(b'^') {
                        self.pos += 1;
                        e = self.integer()?;
                    }
                    mono.exps[idx as usize - 1] += e;
                }
                Some(c) if c.is_ascii_digit() || c == b'.' => coeff *= self.number()?,
                _ => return Err(self.err("expected a number or a variable")),
            }
            if self.peek() == Some(b'*') {
                self.pos += 1;
            } else {
                return Ok((mono, coeff));
            }
        }
    }

    fn integer(&mut self) -> Result<u32, Error> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("expected an integer"))
    }

    fn number(&mut self) -> Result<f64, Error> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut p = self.pos + 1;
            if p < s.len() && (s[p] == b'+' || s[p] == b'-') {
                p += 1;
            }
            if p < s.len() && s[p].is_ascii_digit() {
                while p < s.len() && s[p].is_ascii_digit() {
                    p += 1;
                }
                self.pos = p;
            }
        }
        std::str::from_utf8(&s[start..self.pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| self.err("malformed number"))
    }
}

/// Dense grid of polynomials, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPolynomial {
    rows: usize,
    cols: usize,
    n: usize,
    entries: Vec<Polynomial>,
}

impl MatrixPolynomial {
    pub fn zeros(rows: usize, cols: usize, n: usize) -> Self {
        Self { rows, cols, n, entries: vec![Polynomial::zero(n); rows * cols] }
    }

    pub fn from_constant(m: &DMatrix<f64>, n: usize) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols(), n);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, Polynomial::constant(n, m[(i, j)]));
            }
        }
        out
    }

    pub fn from_entries(rows: usize, cols: usize, entries: Vec<Polynomial>) -> Result<Self, Error> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!("{} entries for a {rows}x{cols} matrix", entries.len())));
        }
        let n = entries.first().map(Polynomial::nvars).unwrap_or(0);
        if entries.iter().any(|p| p.nvars() != n) {
            return Err(Error::Dimension("matrix entries disagree on the variable count".into()));
        }
        Ok(Self { rows, cols, n, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: Polynomial) {
        assert_eq!(p.nvars(), self.n);
        self.entries[i * self.cols + j] = p;
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>, Error> {
        if x.len() != self.n {
            return Err(dim_err("evaluation point", x.len(), self.n));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval_unchecked(x)))
    }

    pub fn transpose(&self) -> MatrixPolynomial {
        let mut out = Self::zeros(self.cols, self.rows, self.n);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j).clone());
            }
        }
        out
    }

    pub fn try_mul(&self, other: &MatrixPolynomial) -> Result<MatrixPolynomial, Error> {
        if self.cols != other.rows || self.n != other.n {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols, self.n);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = Polynomial::zero(self.n);
                for k in 0..self.cols {
                    acc = &acc + &(self.get(i, k) * other.get(k, j));
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn try_add(&self, other: &MatrixPolynomial) -> Result<MatrixPolynomial, Error> {
        if self.rows != other.rows || self.cols != other.cols || self.n != other.n {
            return Err(Error::Dimension("matrix polynomial shapes differ".into()));
        }
        let entries = self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, n: self.n, entries })
    }

    pub fn scale(&self, c: f64) -> MatrixPolynomial {
        Self {
            rows: self.rows,
            cols: self.cols,
            n: self.n,
            entries: self.entries.iter().map(|p| p.scale(c)).collect(),
        }
    }

    /// `M * self` for a constant matrix `M`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Result<MatrixPolynomial, Error> {
        MatrixPolynomial::from_constant(m, self.n).try_mul(self)
    }

    /// `self * M` for a constant matrix `M`.
    pub fn right_mul(&self, m: &DMatrix<f64>) -> Result<MatrixPolynomial, Error> {
        self.try_mul(&MatrixPolynomial::from_constant(m, self.n))
    }

    /// Coefficient matrix of monomial `m`.
    pub fn coeff_matrix(&self, m: &Monomial) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).coeff(m))
    }

    /// Every monomial that appears in some entry, in graded-lex order.
    pub fn support(&self) -> Vec<Monomial> {
        let mut all: Vec<Monomial> = self.entries.iter().flat_map(|p| p.terms().map(|(m, _)| m.clone())).collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.entries.iter().map(Polynomial::max_abs_coeff).fold(0.0, f64::max)
    }
}

/// How strongly the entries of a [`MonomialVector`] certify that `Z(x) = 0` only at `x = 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VanishingEvidence {
    /// Every variable has a pure-power entry `x_i^k`: sufficient.
    PurePowers,
    /// Every variable appears somewhere, but not every one as a pure power.
    /// The property may still hold; it is not certified.
    Weak { missing_pure_power: Vec<usize> },
}

/// The power vector `Z(x)`: distinct, nonconstant monomials.
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialVector {
    n: usize,
    entries: Vec<Monomial>,
}

impl MonomialVector {
    /// Validates shape and distinctness, and rejects vectors that vanish on a
    /// coordinate axis (a variable that no entry mentions). Use
    /// [`MonomialVector::vanishing_evidence`] for the remaining check.
    pub fn new(n: usize, entries: Vec<Monomial>) -> Result<Self, Error> {
        if n == 0 {
            return Err(Error::MonomialVector("at least one state variable is required".into()));
        }
        if entries.is_empty() {
            return Err(Error::MonomialVector("Z must have at least one entry".into()));
        }
        for (k, m) in entries.iter().enumerate() {
            if m.nvars() != n {
                return Err(Error::MonomialVector(format!("entry {} has {} variables, expected {n}", k + 1, m.nvars())));
            }
            if m.is_one() {
                return Err(Error::MonomialVector(format!("entry {} is the constant monomial", k + 1)));
            }
            if entries[..k].contains(m) {
                return Err(Error::MonomialVector(format!("entry {} ({m}) is repeated", k + 1)));
            }
        }
        for i in 0..n {
            if entries.iter().all(|m| m.exps()[i] == 0) {
                return Err(Error::MonomialVector(format!(
                    "no entry depends on x{}, so Z vanishes on that axis",
                    i + 1
                )));
            }
        }
        Ok(Self { n, entries })
    }

    /// Parses a comma-separated list such as `"x2, x1^2"`.
    pub fn parse(s: &str, n: usize) -> Result<Self, Error> {
        let mut entries = Vec::new();
        for part in s.split(',') {
            let p = Polynomial::parse(part, n)?;
            let mut terms = p.terms();
            match (terms.next(), terms.next()) {
                (Some((m, c)), None) if c == 1.0 => entries.push(m.clone()),
                _ => return Err(Error::Parse(format!("{:?} is not a bare monomial", part.trim()))),
            }
        }
        Self::new(n, entries)
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Monomial] {
        &self.entries
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn vanishing_evidence(&self) -> VanishingEvidence {
        let missing: Vec<usize> = (0..self.n)
            .filter(|&i| !self.entries.iter().any(|m| m.pure_power_var() == Some(i)))
            .collect();
        if missing.is_empty() {
            VanishingEvidence::PurePowers
        } else {
            VanishingEvidence::Weak { missing_pure_power: missing }
        }
    }

    /// Human-readable warning when the pure-power condition does not hold.
    pub fn vanishing_warning(&self) -> Option<String> {
        match self.vanishing_evidence() {
            VanishingEvidence::PurePowers => None,
            VanishingEvidence::Weak { missing_pure_power } => {
                let names: Vec<String> = missing_pure_power.iter().map(|i| format!("x{}", i + 1)).collect();
                Some(format!(
                    "warning: no pure-power entry for {}; Z(x) = 0 only at x = 0 is not certified",
                    names.join(", ")
                ))
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>, Error> {
        if x.len() != self.n {
            return Err(dim_err("evaluation point", x.len(), self.n));
        }
        Ok(DVector::from_iterator(self.len(), self.entries.iter().map(|m| m.eval(x))))
    }

    /// `Z(x)` as an `N x 1` matrix polynomial.
    pub fn as_column(&self) -> MatrixPolynomial {
        let entries = self.entries.iter().map(|m| Polynomial::monomial(m.clone(), 1.0)).collect();
        MatrixPolynomial { rows: self.len(), cols: 1, n: self.n, entries }
    }

    /// `dZ/dx`, an `N x n` matrix polynomial.
    pub fn jacobian(&self) -> MatrixPolynomial {
        let mut out = MatrixPolynomial::zeros(self.len(), self.n, self.n);
        for (k, m) in self.entries.iter().enumerate() {
            for i in 0..self.n {
                if let Some((e, r)) = m.derivative(i) {
                    out.set(k, i, Polynomial::monomial(r, e as f64));
                }
            }
        }
        out
    }
}

impl fmt::Display for MonomialVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(", "))
    }
}
