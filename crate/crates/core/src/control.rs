//! Controllers, Lyapunov certificates and the three verification levels:
//! certificate (Gram PSD), grid (`dV/dt < 0` on a box) and simulation.
//!
//! None of the checks here proves global asymptotic stability; each is
//! reported separately and only on bounded sets.
//!
//! # Files
//!
//! Controllers and certificates are TOML. Polynomials use the textual grammar
//! of [`crate::poly`].
//!
//! ```toml
//! provenance = "user-supplied"
//! n = 2
//! z = "x2, x1^2"
//! f = [["-2.0247", "-4.2114*x1 - 1"]]   # m rows, N columns
//! u = ["-2.0247*x2 - 4.2114*x1^3 - x1^2"] # informational, ignored on read
//! ```

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use ddsos_sdp::{SdpSolution, SolverOptions};

use crate::data::DataMatrices;
use crate::plant::{matrix_from_rows, matrix_to_rows, simulate_closed_loop, toml_err, PolySystem, Trajectory};
use crate::poly::{MatrixPolynomial, Monomial, MonomialVector, Polynomial};
use crate::soscompile::{self, GramMatrix, SosOptions, SosProgram, SosSolution};
use crate::Error;

/// Default bound on `max |nonconstant coefficient of Z0T Y(x)|` at extraction.
pub const CONSTANCY_TOL: f64 = 1e-8;
/// Extraction refuses `P` with a larger condition number.
pub const MAX_CONDITION: f64 = 1e12;
/// Gram eigenvalue floor for the certificate check.
pub const GRAM_PSD_TOL: f64 = 1e-8;
/// Gram reconstruction residual bound for the certificate check.
pub const RECONSTRUCTION_TOL: f64 = 1e-7;
/// Slack on `lambda_min(P) >= mu`.
pub const P_MARGIN_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    DataDriven,
    ModelBased,
    UserSupplied,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::DataDriven => "data-driven",
            Provenance::ModelBased => "model-based",
            Provenance::UserSupplied => "user-supplied",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "data-driven" => Ok(Provenance::DataDriven),
            "model-based" => Ok(Provenance::ModelBased),
            "user-supplied" => Ok(Provenance::UserSupplied),
            other => Err(Error::Parse(format!("unknown provenance {other:?}"))),
        }
    }
}

/// State feedback `u = F(x) Z(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    f: MatrixPolynomial,
    z: MonomialVector,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ControllerFile {
    provenance: String,
    n: usize,
    z: String,
    f: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    u: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<Vec<Vec<f64>>>,
}

impl Controller {
    pub fn new(f: MatrixPolynomial, z: MonomialVector, provenance: Provenance) -> Result<Self, Error> {
        if f.rows() == 0 || f.cols() != z.len() {
            return Err(Error::Dimension(format!(
                "F must be m x {} with m >= 1, got {}x{}",
                z.len(),
                f.rows(),
                f.cols()
            )));
        }
        if f.nvars() != z.nvars() {
            return Err(Error::Dimension("F and Z disagree on the number of variables".into()));
        }
        Ok(Self { f, z, provenance })
    }

    /// `F = 0`.
    pub fn zero(m: usize, z: &MonomialVector) -> Self {
        Self { f: MatrixPolynomial::zeros(m, z.len(), z.nvars()), z: z.clone(), provenance: Provenance::UserSupplied }
    }

    pub fn f(&self) -> &MatrixPolynomial {
        &self.f
    }

    pub fn z(&self) -> &MonomialVector {
        &self.z
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn m(&self) -> usize {
        self.f.rows()
    }

    pub fn n(&self) -> usize {
        self.z.nvars()
    }

    /// `u(x) = F(x) Z(x)`.
    pub fn input(&self, x: &[f64]) -> DVector<f64> {
        let f = self.f.eval(x).expect("x has n entries");
        let z = self.z.eval(x).expect("x has n entries");
        f * z
    }

    /// `u(x)` as polynomials, one per input channel.
    pub fn u_polynomials(&self) -> Vec<Polynomial> {
        let u = self.f.try_mul(&self.z.as_column()).expect("F is m x N");
        (0..u.rows()).map(|i| u.get(i, 0).clone()).collect()
    }

    pub fn to_toml_string(&self, p: Option<&DMatrix<f64>>) -> String {
        let file = ControllerFile {
            provenance: self.provenance.to_string(),
            n: self.n(),
            z: self.z.to_string(),
            f: (0..self.m()).map(|i| (0..self.f.cols()).map(|j| self.f.get(i, j).to_string()).collect()).collect(),
            u: self.u_polynomials().iter().map(ToString::to_string).collect(),
            p: p.map(matrix_to_rows),
        };
        toml::to_string(&file).expect("controller serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, Error> {
        Self::from_toml_str_with_p(s).map(|(c, _)| c)
    }

    /// Also returns the optional `p` table stored next to the gain.
    pub fn from_toml_str_with_p(s: &str) -> Result<(Self, Option<DMatrix<f64>>), Error> {
        let file: ControllerFile = toml::from_str(s).map_err(toml_err)?;
        let p = file.p.as_deref().map(|rows| matrix_from_rows(rows, "p")).transpose()?;
        let z = MonomialVector::parse(&file.z, file.n)?;
        let m = file.f.len();
        let mut entries = Vec::new();
        for row in &file.f {
            if row.len() != z.len() {
                return Err(Error::Dimension(format!("each row of f needs {} entries", z.len())));
            }
            for e in row {
                entries.push(Polynomial::parse(e, file.n)?);
            }
        }
        let f = MatrixPolynomial::from_entries(m, z.len(), entries)?;
        if let Some(p) = &p {
            if p.nrows() != z.len() || p.ncols() != z.len() {
                return Err(Error::Dimension(format!("p must be {0}x{0}", z.len())));
            }
        }
        Ok((Controller::new(f, z, file.provenance.parse()?)?, p))
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, u) in self.u_polynomials().iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "u{} = {u}", i + 1)?;
        }
        Ok(())
    }
}

/// `V(x) = Z(x)^T P^-1 Z(x)` with the Gram certificate of `Q(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovCertificate {
    pub z: MonomialVector,
    pub p: DMatrix<f64>,
    pub p_inv: DMatrix<f64>,
    pub condition: f64,
    /// `Q(x)` recomputed from the decision values.
    pub q: MatrixPolynomial,
    pub gram: GramMatrix,
    pub epsilon: Polynomial,
    pub mu: f64,
    /// Margin `t*` reported by the solver.
    pub margin: f64,
}

#[derive(Serialize, Deserialize)]
struct GramEntry {
    row: usize,
    exps: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct CertificateFile {
    n: usize,
    z: String,
    mu: f64,
    epsilon: String,
    margin: f64,
    p: Vec<Vec<f64>>,
    q: Vec<Vec<String>>,
    gram_basis: Vec<GramEntry>,
    theta: Vec<Vec<f64>>,
}

impl LyapunovCertificate {
    pub fn v(&self, x: &[f64]) -> f64 {
        let z = self.z.eval(x).expect("x has n entries");
        (z.transpose() * &self.p_inv * &z)[(0, 0)]
    }

    pub fn to_toml_string(&self) -> String {
        let n = self.z.nvars();
        let file = CertificateFile {
            n,
            z: self.z.to_string(),
            mu: self.mu,
            epsilon: self.epsilon.to_string(),
            margin: self.margin,
            p: matrix_to_rows(&self.p),
            q: (0..self.q.rows()).map(|i| (0..self.q.cols()).map(|j| self.q.get(i, j).to_string()).collect()).collect(),
            gram_basis: self.gram.basis.iter().map(|(i, m)| GramEntry { row: *i, exps: m.exps().to_vec() }).collect(),
            theta: matrix_to_rows(&self.gram.theta),
        };
        toml::to_string(&file).expect("certificate serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, Error> {
        let file: CertificateFile = toml::from_str(s).map_err(toml_err)?;
        let z = MonomialVector::parse(&file.z, file.n)?;
        let p = matrix_from_rows(&file.p, "p")?;
        let (p_inv, condition) = invert_spd(&p)?;
        let big_n = z.len();
        if file.q.len() != big_n || file.q.iter().any(|r| r.len() != big_n) {
            return Err(Error::Dimension(format!("q must be {big_n}x{big_n}")));
        }
        let mut entries = Vec::new();
        for e in file.q.iter().flatten() {
            entries.push(Polynomial::parse(e, file.n)?);
        }
        let q = MatrixPolynomial::from_entries(big_n, big_n, entries)?;
        let mut basis = Vec::new();
        for g in file.gram_basis {
            if g.exps.len() != file.n || g.row >= big_n {
                return Err(Error::Dimension("gram_basis entry does not match n or N".into()));
            }
            basis.push((g.row, Monomial::new(g.exps)));
        }
        let theta = if basis.is_empty() { DMatrix::zeros(0, 0) } else { matrix_from_rows(&file.theta, "theta")? };
        if theta.nrows() != basis.len() || theta.ncols() != basis.len() {
            return Err(Error::Dimension("theta does not match gram_basis".into()));
        }
        Ok(Self {
            z,
            p,
            p_inv,
            condition,
            q,
            gram: GramMatrix { basis, theta },
            epsilon: Polynomial::parse(&file.epsilon, file.n)?,
            mu: file.mu,
            margin: file.margin,
        })
    }
}

/// `P^-1` via symmetric eigendecomposition, with the condition number.
pub fn invert_spd(p: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), Error> {
    if !p.is_square() || p.nrows() == 0 {
        return Err(Error::Dimension("P must be square and nonempty".into()));
    }
    let eig = ddsos_sdp::sym_eigen(p);
    let lmin = eig.eigenvalues.min();
    let lmax = eig.eigenvalues.max();
    if lmin <= 0.0 {
        return Err(Error::Extraction(format!("P is not positive definite (lambda_min = {lmin:.3e})")));
    }
    let cond = lmax / lmin;
    if cond > MAX_CONDITION {
        return Err(Error::Extraction(format!("P is ill-conditioned (cond = {cond:.3e} > {MAX_CONDITION:.0e})")));
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Ok(((&inv + inv.transpose()) * 0.5, cond))
}

/// Constant term of `Z0T Y(x)`, as is (not symmetrized).
pub fn p_from_y(dm: &DataMatrices, y: &MatrixPolynomial) -> Result<DMatrix<f64>, Error> {
    let zy = y.left_mul(&dm.z0t)?;
    Ok(zy.coeff_matrix(&Monomial::one(dm.n())))
}

/// `F(x) = U Y(x) P^-1` with [`CONSTANCY_TOL`].
pub fn extract_controller(dm: &DataMatrices, y: &MatrixPolynomial, p: &DMatrix<f64>) -> Result<Controller, Error> {
    extract_controller_with_tol(dm, y, p, CONSTANCY_TOL)
}

/// As [`extract_controller`]; `tol` bounds both the nonconstant coefficients of
/// `Z0T Y(x)`, the mismatch between its constant term and `P`, and the asymmetry of `P`.
pub fn extract_controller_with_tol(
    dm: &DataMatrices,
    y: &MatrixPolynomial,
    p: &DMatrix<f64>,
    tol: f64,
) -> Result<Controller, Error> {
    let t = dm.samples();
    let big_n = dm.n_monomials();
    if y.rows() != t || y.cols() != big_n || y.nvars() != dm.n() {
        return Err(Error::Dimension(format!("Y must be {t}x{big_n}, got {}x{}", y.rows(), y.cols())));
    }
    if p.nrows() != big_n || p.ncols() != big_n {
        return Err(Error::Dimension(format!("P must be {big_n}x{big_n}")));
    }
    let violation = soscompile::constancy_violation(&dm.z0t, y);
    if violation > tol {
        return Err(Error::Extraction(format!(
            "Z0T Y(x) is not constant (nonconstant coefficient {violation:.3e} > {tol:.1e})"
        )));
    }
    let mismatch = (p_from_y(dm, y)? - p).amax();
    if mismatch > tol {
        return Err(Error::Extraction(format!("P differs from the constant term of Z0T Y(x) by {mismatch:.3e}")));
    }
    let asym = (p - p.transpose()).amax();
    if asym > tol {
        return Err(Error::Extraction(format!("P is not symmetric (max asymmetry {asym:.3e})")));
    }
    let (p_inv, _) = invert_spd(&((p + p.transpose()) * 0.5))?;
    let f = y.left_mul(&dm.record.u)?.right_mul(&p_inv)?;
    Controller::new(f, dm.z().clone(), Provenance::DataDriven)
}

/// Builds the certificate for a solved program.
pub fn certificate_from(prog: &SosProgram, sol: &SosSolution) -> Result<LyapunovCertificate, Error> {
    let z = prog.z.clone().ok_or_else(|| Error::Extraction("scalar programs carry no Lyapunov function".into()))?;
    let (p_inv, condition) = invert_spd(&sol.p)?;
    Ok(LyapunovCertificate {
        z,
        p: sol.p.clone(),
        p_inv,
        condition,
        q: soscompile::q_of_solution(prog, sol),
        gram: sol.gram.clone(),
        epsilon: prog.opts.epsilon.clone(),
        mu: prog.opts.mu,
        margin: sol.margin,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckItem {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl fmt::Display for CheckItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} {} (value {:.3e}, threshold {:.3e})",
            self.name,
            if self.pass { "pass" } else { "FAIL" },
            self.value,
            self.threshold
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificateReport {
    pub gram_psd: CheckItem,
    pub reconstruction: CheckItem,
    pub p_margin: CheckItem,
}

impl CertificateReport {
    pub fn pass(&self) -> bool {
        self.gram_psd.pass && self.reconstruction.pass && self.p_margin.pass
    }

    pub fn items(&self) -> [&CheckItem; 3] {
        [&self.gram_psd, &self.reconstruction, &self.p_margin]
    }
}

/// (a) `Theta >= -1e-8`; (b) `Q` from the Gram matrix matches `cert.q` to 1e-7;
/// (c) `lambda_min(P) >= mu - 1e-6`.
pub fn certificate_check(cert: &LyapunovCertificate) -> CertificateReport {
    let theta_min =
        if cert.gram.theta.nrows() == 0 { 0.0 } else { cert.gram.min_eigenvalue() };
    let from_gram = cert.gram.to_matrix_polynomial(cert.q.rows(), cert.z.nvars());
    let residual = cert.q.try_add(&from_gram.scale(-1.0)).map(|d| d.max_abs_coeff()).unwrap_or(f64::INFINITY);
    let p_min = ddsos_sdp::min_eigenvalue(&cert.p);
    CertificateReport {
        gram_psd: CheckItem {
            name: "gram psd (lambda_min)",
            value: theta_min,
            threshold: -GRAM_PSD_TOL,
            pass: theta_min >= -GRAM_PSD_TOL,
        },
        reconstruction: CheckItem {
            name: "gram reconstruction",
            value: residual,
            threshold: RECONSTRUCTION_TOL,
            pass: residual <= RECONSTRUCTION_TOL,
        },
        p_margin: CheckItem {
            name: "P margin (lambda_min)",
            value: p_min,
            threshold: cert.mu - P_MARGIN_SLACK,
            pass: p_min >= cert.mu - P_MARGIN_SLACK,
        },
    }
}

/// Uniform box grid `[lo, hi]^n` with the ball `|x| < r0` removed.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub per_axis: usize,
    pub r0: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self { lo: -2.0, hi: 2.0, per_axis: 21, r0: 1e-2 }
    }
}

impl Grid {
    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        let k = self.per_axis.max(1);
        let axis: Vec<f64> = (0..k)
            .map(|i| if k == 1 { 0.5 * (self.lo + self.hi) } else { self.lo + (self.hi - self.lo) * i as f64 / (k - 1) as f64 })
            .collect();
        let mut out = vec![Vec::new()];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&a| {
                        let mut q = p.clone();
                        q.push(a);
                        q
                    })
                })
                .collect();
        }
        out.retain(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt() >= self.r0);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VdotReport {
    pub max_vdot: f64,
    pub argmax: Vec<f64>,
    pub points: usize,
}

impl VdotReport {
    pub fn pass(&self) -> bool {
        self.max_vdot < 0.0
    }
}

/// `dV/dt = 2 Z^T P^-1 (dZ/dx) (A Z + B F Z)` on the grid; max over points.
/// Test helper: uses the model.
pub fn plant_side_vdot(sys: &PolySystem, ctrl: &Controller, p_inv: &DMatrix<f64>, grid: &Grid) -> Result<VdotReport, Error> {
    if ctrl.z() != sys.z() || ctrl.m() != sys.m() {
        return Err(Error::Dimension("controller does not match the system".into()));
    }
    if p_inv.nrows() != sys.n_monomials() || p_inv.ncols() != sys.n_monomials() {
        return Err(Error::Dimension("P^-1 does not match N".into()));
    }
    let jac = sys.z().jacobian();
    let mut report = VdotReport { max_vdot: f64::NEG_INFINITY, argmax: Vec::new(), points: 0 };
    for x in grid.points(sys.n()) {
        let xv = DVector::from_column_slice(&x);
        let z = sys.z().eval(&x)?;
        let dx = sys.rhs(&xv, &ctrl.input(&x));
        let vdot = 2.0 * (z.transpose() * p_inv * jac.eval(&x)? * dx)[(0, 0)];
        report.points += 1;
        if vdot > report.max_vdot {
            report.max_vdot = vdot;
            report.argmax = x;
        }
    }
    Ok(report)
}

/// `min lambda_min(Q(x))` over the grid.
pub fn q_min_eigenvalue(q: &MatrixPolynomial, grid: &Grid) -> Result<f64, Error> {
    let mut worst = f64::INFINITY;
    for x in grid.points(q.nvars()) {
        worst = worst.min(ddsos_sdp::min_eigenvalue(&q.eval(&x)?));
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub x0: Vec<f64>,
    pub initial_norm: f64,
    pub final_norm: f64,
    /// Time of divergence, if the state escaped.
    pub blow_up: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub horizon: f64,
    pub tol: f64,
    pub runs: Vec<RunOutcome>,
    /// Trajectories of the runs that did not diverge, in the same order.
    pub trajectories: Vec<Option<Trajectory>>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        !self.runs.is_empty() && self.runs.iter().all(|r| r.pass)
    }

    pub fn worst_final_norm(&self) -> f64 {
        self.runs.iter().map(|r| if r.blow_up.is_some() { f64::INFINITY } else { r.final_norm }).fold(0.0, f64::max)
    }
}

/// Final-state shrink factor required on top of `|x(horizon)| <= tol`.
pub const DECAY_FACTOR: f64 = 0.01;

/// Simulates from each initial state. A run passes iff it does not diverge,
/// `|x(horizon)| <= tol` and `|x(horizon)| <= 0.01 |x0|`.
pub fn verify_closed_loop(
    sys: &PolySystem,
    ctrl: &Controller,
    initial: &[Vec<f64>],
    horizon: f64,
    step: f64,
    tol: f64,
) -> Result<VerifyReport, Error> {
    let mut runs = Vec::new();
    let mut trajectories = Vec::new();
    for x0 in initial {
        let initial_norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        match simulate_closed_loop(sys, ctrl, x0, (0.0, horizon), step) {
            Ok(traj) => {
                let final_norm = traj.final_state().norm();
                let pass = final_norm <= tol && final_norm <= DECAY_FACTOR * initial_norm;
                runs.push(RunOutcome { x0: x0.clone(), initial_norm, final_norm, blow_up: None, pass });
                trajectories.push(Some(traj));
            }
            Err(Error::BlowUp { time }) => {
                runs.push(RunOutcome {
                    x0: x0.clone(),
                    initial_norm,
                    final_norm: f64::INFINITY,
                    blow_up: Some(time),
                    pass: false,
                });
                trajectories.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(VerifyReport { horizon, tol, runs, trajectories })
}

/// `count` points on the circle of the given radius in the `(x1, x2)` plane
/// (other coordinates zero), starting at angle 0.
pub fn circle_states(n: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            let mut x = vec![0.0; n];
            x[0] = radius * th.cos();
            if n > 1 {
                x[1] = radius * th.sin();
            }
            x
        })
        .collect()
}

/// Everything produced by one synthesis run.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub program: SosProgram,
    pub sdp: SdpSolution,
    pub solution: SosSolution,
    pub controller: Controller,
    pub certificate: LyapunovCertificate,
}

/// Outcome of a solve that may or may not clear the acceptance rule.
#[derive(Debug)]
pub enum SynthesisOutcome {
    Feasible(Box<Synthesis>),
    /// Solved, but rejected; the raw iterate is kept for diagnostics.
    Rejected { program: Box<SosProgram>, sdp: Box<SdpSolution>, raw: Box<SosSolution>, error: Error },
}

impl SynthesisOutcome {
    pub fn feasible(self) -> Result<Synthesis, Error> {
        match self {
            SynthesisOutcome::Feasible(s) => Ok(*s),
            SynthesisOutcome::Rejected { error, .. } => Err(error),
        }
    }

    /// Margin `t*` of the final iterate.
    pub fn margin(&self) -> f64 {
        match self {
            SynthesisOutcome::Feasible(s) => s.solution.margin,
            SynthesisOutcome::Rejected { raw, .. } => raw.margin,
        }
    }
}

fn finish(
    program: SosProgram,
    sdp: SdpSolution,
    controller: impl FnOnce(&SosProgram, &SosSolution) -> Result<Controller, Error>,
) -> Result<SynthesisOutcome, Error> {
    let extracted = soscompile::extract_solution(&program, &sdp).and_then(|sol| {
        let ctrl = controller(&program, &sol)?;
        let cert = certificate_from(&program, &sol)?;
        Ok((sol, ctrl, cert))
    });
    Ok(match extracted {
        Ok((solution, controller, certificate)) => {
            SynthesisOutcome::Feasible(Box::new(Synthesis { program, sdp, solution, controller, certificate }))
        }
        Err(error) => {
            let raw = soscompile::read_solution(&program, &sdp);
            SynthesisOutcome::Rejected { program: Box::new(program), sdp: Box::new(sdp), raw: Box::new(raw), error }
        }
    })
}

/// Data-driven synthesis: compile, solve, extract `F = U Y P^-1`.
pub fn synthesize(dm: &DataMatrices, opts: &SosOptions, solver: &SolverOptions) -> Result<SynthesisOutcome, Error> {
    let (program, prob) = soscompile::compile(dm, opts)?;
    let sdp = ddsos_sdp::solve(&prob, solver)?;
    finish(program, sdp, |_, sol| extract_controller(dm, &sol.y, &sol.p))
}

/// Model-based synthesis with known constant `A`, `B`: `F = Y P^-1`.
pub fn model_based_synthesize(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    z: &MonomialVector,
    opts: &SosOptions,
    solver: &SolverOptions,
) -> Result<SynthesisOutcome, Error> {
    let (program, prob) = soscompile::compile_model_based(a, b, z, opts)?;
    let sdp = ddsos_sdp::solve(&prob, solver)?;
    finish(program, sdp, |_, sol| {
        let (p_inv, _) = invert_spd(&sol.p)?;
        Controller::new(sol.y.right_mul(&p_inv)?, z.clone(), Provenance::ModelBased)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_sys(a: f64) -> PolySystem {
        let z = MonomialVector::parse("x1", 1).unwrap();
        PolySystem::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, 1.0), z).unwrap()
    }

    #[test]
    fn stable_scalar_vdot_is_negative() {
        let sys = scalar_sys(-1.0);
        let ctrl = Controller::zero(1, sys.z());
        let rep = plant_side_vdot(&sys, &ctrl, &DMatrix::from_element(1, 1, 1.0), &Grid::default()).unwrap();
        assert!(rep.pass());
        // V = x^2, dV/dt = -2 x^2, worst at the smallest grid radius 0.2.
        assert!((rep.max_vdot + 2.0 * 0.04).abs() < 1e-12);
    }

    #[test]
    fn stable_scalar_verifies() {
        let sys = scalar_sys(-1.0);
        let ctrl = Controller::zero(1, sys.z());
        let rep = verify_closed_loop(&sys, &ctrl, &[vec![1.0], vec![-0.5]], 20.0, 1e-3, 1e-3).unwrap();
        assert!(rep.pass());
    }

    #[test]
    fn grid_excludes_origin() {
        let g = Grid { lo: -1.0, hi: 1.0, per_axis: 3, r0: 1e-2 };
        assert_eq!(g.points(2).len(), 8);
    }

    #[test]
    fn invert_refuses_singular() {
        assert!(invert_spd(&DMatrix::from_diagonal_element(2, 2, 0.0)).is_err());
        assert!(invert_spd(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13])).is_err());
    }

    #[test]
    fn controller_round_trip() {
        let z = MonomialVector::parse("x2, x1^2", 2).unwrap();
        let f = MatrixPolynomial::from_entries(
            1,
            2,
            vec![Polynomial::parse("-2.0247", 2).unwrap(), Polynomial::parse("-4.2114*x1 - 1", 2).unwrap()],
        )
        .unwrap();
        let c = Controller::new(f, z, Provenance::UserSupplied).unwrap();
        let back = Controller::from_toml_str(&c.to_toml_string(None)).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.u_polynomials()[0].to_string(), "-4.2114*x1^3 - x1^2 - 2.0247*x2");
    }
}
