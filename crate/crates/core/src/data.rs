//! Data matrices from one experiment, and the rank gate in front of synthesis.
//!
//! Everything downstream of [`DataMatrices`] works from data alone. The one
//! exception here is [`closed_loop_identity_residual`], a test helper that compares the
//! data-based closed loop with the true model.
//!
//! # CSV layout
//!
//! ```text
//! # z = x2, x1^2
//! # n = 2
//! # seed = 0
//! t,x1,x2,dx1,dx2,u1
//! 0e0,-5e-1,5e-1,5e-1,2.5e-1,0e0
//! ```
//!
//! Comment lines `# key = value` carry metadata; `z` and `n` are required.
//! The header names the columns: `x<i>` states, `dx<i>` derivatives, `u<j>`
//! inputs, and an optional `t`. Column order is free on input and fixed as
//! above on output.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SVD};

use crate::plant::{csv_err, PolySystem};
use crate::poly::{MatrixPolynomial, MonomialVector};
use crate::Error;

/// Default multiplier on `max(N, T) * sigma_max * eps` for the rank tolerance.
pub const DEFAULT_RANK_FACTOR: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct DataRecord {
    /// `m x T` sampled inputs.
    pub u: DMatrix<f64>,
    /// `n x T` sampled states.
    pub x0: DMatrix<f64>,
    /// `n x T` state derivatives at the sample instants.
    pub x1: DMatrix<f64>,
    pub z: MonomialVector,
    pub times: Option<Vec<f64>>,
    pub meta: BTreeMap<String, String>,
}

impl DataRecord {
    pub fn new(u: DMatrix<f64>, x0: DMatrix<f64>, x1: DMatrix<f64>, z: MonomialVector) -> Result<Self, Error> {
        let t = x0.ncols();
        if t == 0 {
            return Err(Error::Dimension("a data record needs at least one sample".into()));
        }
        if u.ncols() != t || x1.ncols() != t {
            return Err(Error::Dimension(format!(
                "sample counts differ: U has {}, X0 has {t}, X1 has {}",
                u.ncols(),
                x1.ncols()
            )));
        }
        if x0.nrows() != z.nvars() || x1.nrows() != z.nvars() {
            return Err(Error::Dimension(format!("state rows must equal n = {}", z.nvars())));
        }
        if u.nrows() == 0 {
            return Err(Error::Dimension("at least one input channel is required".into()));
        }
        Ok(Self { u, x0, x1, z, times: None, meta: BTreeMap::new() })
    }

    pub fn samples(&self) -> usize {
        self.x0.ncols()
    }

    pub fn n(&self) -> usize {
        self.x0.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), Error> {
        let io = |e: std::io::Error| Error::Config(e.to_string());
        writeln!(w, "# z = {}", self.z).map_err(io)?;
        writeln!(w, "# n = {}", self.n()).map_err(io)?;
        for (k, v) in &self.meta {
            if k != "z" && k != "n" {
                writeln!(w, "# {k} = {v}").map_err(io)?;
            }
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n()).map(|i| format!("x{i}")));
        header.extend((1..=self.n()).map(|i| format!("dx{i}")));
        header.extend((1..=self.m()).map(|i| format!("u{i}")));
        out.write_record(&header).map_err(csv_err)?;
        for k in 0..self.samples() {
            let t = self.times.as_ref().map(|t| t[k]).unwrap_or(k as f64);
            let mut row = vec![format!("{t:e}")];
            row.extend(self.x0.column(k).iter().map(|v| format!("{v:e}")));
            row.extend(self.x1.column(k).iter().map(|v| format!("{v:e}")));
            row.extend(self.u.column(k).iter().map(|v| format!("{v:e}")));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, Error> {
        let mut meta = BTreeMap::new();
        let mut body = String::new();
        for line in r.lines() {
            let line = line.map_err(|e| Error::Config(e.to_string()))?;
            if let Some(rest) = line.trim_start().strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            } else if !line.trim().is_empty() {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let n: usize = meta
            .get("n")
            .ok_or_else(|| Error::Parse("data file lacks a '# n = ...' line".into()))?
            .parse()
            .map_err(|_| Error::Parse("bad '# n' value".into()))?;
        let z = MonomialVector::parse(
            meta.get("z").ok_or_else(|| Error::Parse("data file lacks a '# z = ...' line".into()))?,
            n,
        )?;

        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let mut m = 0;
        while col(&format!("u{}", m + 1)).is_some() {
            m += 1;
        }
        let mut x_cols = Vec::new();
        let mut dx_cols = Vec::new();
        for i in 1..=n {
            x_cols.push(col(&format!("x{i}")).ok_or_else(|| Error::Parse(format!("missing column x{i}")))?);
            dx_cols.push(col(&format!("dx{i}")).ok_or_else(|| Error::Parse(format!("missing column dx{i}")))?);
        }
        let u_cols: Vec<usize> = (1..=m).map(|j| col(&format!("u{j}")).expect("counted above")).collect();
        let t_col = col("t");

        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let vals: Result<Vec<f64>, Error> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("row {}: bad number {s:?}", k + 1))))
                .collect();
            rows.push(vals?);
        }
        let t = rows.len();
        let pick = |cols: &[usize]| DMatrix::from_fn(cols.len(), t, |i, k| rows[k][cols[i]]);
        let mut rec = DataRecord::new(pick(&u_cols), pick(&x_cols), pick(&dx_cols), z)?;
        rec.times = t_col.map(|c| rows.iter().map(|r| r[c]).collect());
        meta.remove("n");
        meta.remove("z");
        rec.meta = meta;
        Ok(rec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub tol: f64,
}

impl RankReport {
    pub fn sigma_min(&self) -> f64 {
        self.singular_values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrices {
    pub record: DataRecord,
    /// `N x T`: column `k` is `Z(x_k)`.
    pub z0t: DMatrix<f64>,
    pub rank_report: RankReport,
}

impl DataMatrices {
    pub fn n(&self) -> usize {
        self.record.n()
    }

    pub fn m(&self) -> usize {
        self.record.m()
    }

    pub fn n_monomials(&self) -> usize {
        self.record.z.len()
    }

    pub fn samples(&self) -> usize {
        self.record.samples()
    }

    pub fn z(&self) -> &MonomialVector {
        &self.record.z
    }
}

/// `Z` evaluated column by column at the samples.
pub fn z_matrix(rec: &DataRecord) -> DMatrix<f64> {
    let mut z0t = DMatrix::zeros(rec.z.len(), rec.samples());
    for k in 0..rec.samples() {
        let x: Vec<f64> = rec.x0.column(k).iter().copied().collect();
        z0t.set_column(k, &rec.z.eval(&x).expect("record shape validated"));
    }
    z0t
}

/// Singular values and numerical rank with an absolute tolerance.
pub fn rank_with_tol(m: &DMatrix<f64>, tol: f64) -> RankReport {
    let mut sv: Vec<f64> = SVD::new(m.clone(), false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let rank = sv.iter().filter(|s| **s > tol).count();
    RankReport { rank, singular_values: sv, tol }
}

/// Rank report with `tol = max(N, T) * sigma_max * eps * factor`.
pub fn rank_report(m: &DMatrix<f64>, factor: f64) -> RankReport {
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = m.nrows().max(m.ncols()) as f64 * smax * f64::EPSILON * factor;
    rank_with_tol(m, tol)
}

pub fn build_data_matrices(rec: DataRecord) -> Result<DataMatrices, Error> {
    build_data_matrices_with(rec, DEFAULT_RANK_FACTOR)
}

/// Evaluates `Z0T` and rejects data that is too short or not full row rank.
pub fn build_data_matrices_with(rec: DataRecord, rank_factor: f64) -> Result<DataMatrices, Error> {
    let big_n = rec.z.len();
    let t = rec.samples();
    if t < big_n {
        return Err(Error::TooFewSamples { samples: t, n_monomials: big_n });
    }
    let z0t = z_matrix(&rec);
    let rank_report = rank_report(&z0t, rank_factor);
    if rank_report.rank < big_n {
        return Err(Error::RankDeficient {
            rank: rank_report.rank,
            n_monomials: big_n,
            sigma_min: rank_report.sigma_min(),
            tol: rank_report.tol,
        });
    }
    Ok(DataMatrices { record: rec, z0t, rank_report })
}

/// `Z0T^T (Z0T Z0T^T)^-1`, one right inverse of `Z0T`. Diagnostic only.
pub fn g_particular(dm: &DataMatrices) -> Result<DMatrix<f64>, Error> {
    let z = &dm.z0t;
    let gram = z * z.transpose();
    let chol = gram.cholesky().ok_or_else(|| Error::RankDeficient {
        rank: dm.rank_report.rank,
        n_monomials: z.nrows(),
        sigma_min: dm.rank_report.sigma_min(),
        tol: dm.rank_report.tol,
    })?;
    Ok(z.transpose() * chol.inverse())
}

/// Largest coefficient error of `Z0T G(x) - I`.
pub fn right_inverse_error(dm: &DataMatrices, g: &MatrixPolynomial) -> Result<f64, Error> {
    let zg = g.left_mul(&dm.z0t)?;
    let n = dm.n();
    let one = crate::poly::Monomial::one(n);
    let mut worst = (zg.coeff_matrix(&one) - DMatrix::identity(zg.rows(), zg.cols())).amax();
    for m in zg.support() {
        if !m.is_one() {
            worst = worst.max(zg.coeff_matrix(&m).amax());
        }
    }
    Ok(worst)
}

/// Max over `xs` of `|(A + B U G(x)) Z(x) - X1 G(x) Z(x)|`. Test helper: sees the model.
pub fn closed_loop_identity_residual(sys: &PolySystem, dm: &DataMatrices, g: &MatrixPolynomial, xs: &[Vec<f64>]) -> Result<f64, Error> {
    let t = dm.samples();
    let big_n = dm.n_monomials();
    if g.rows() != t || g.cols() != big_n || g.nvars() != dm.n() {
        return Err(Error::Dimension(format!("G must be {t}x{big_n}, got {}x{}", g.rows(), g.cols())));
    }
    let err = right_inverse_error(dm, g)?;
    if err > 1e-8 {
        return Err(Error::NotRightInverse(err));
    }
    let rec = &dm.record;
    let mut worst: f64 = 0.0;
    for x in xs {
        let gx = g.eval(x)?;
        let zx = rec.z.eval(x)?;
        let model = (sys.a() + sys.b() * &rec.u * &gx) * &zx;
        let data = &rec.x1 * &gx * &zx;
        worst = worst.max((model - data).norm());
    }
    Ok(worst)
}
