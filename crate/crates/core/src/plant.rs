//! Ground-truth simulator for `dx/dt = A Z(x) + B u`.
//!
//! This is the only module that holds `A` and `B`. Integration is fixed-step
//! classical RK4 with output at every step.
//!
//! # Config files
//!
//! Systems and experiments are TOML documents.
//!
//! ```toml
//! # system
//! n = 2
//! z = "x2, x1^2"
//! a = [[1.0, 0.0], [0.0, 1.0]]   # n rows, N columns
//! b = [[0.0], [1.0]]             # n rows, m columns
//! ```
//!
//! ```toml
//! # experiment
//! t0 = 0.0
//! tau = 0.20833333333333334
//! samples = 3
//! x0 = [-0.5, 0.5]
//! integrator_step = 8.333333333333333e-4   # must divide tau
//! derivative_noise_std = 0.0
//! seed = 0
//!
//! [[input]]                 # one table per input channel
//! offset = 0.0
//! sinusoids = [{ amplitude = -1.0, frequency = 1.0, phase = 0.0 }]
//! ```
//!
//! `A` has `N` columns, one per entry of `Z(x)`, so it is `n x N` rather than
//! square when `N != n`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::Controller;
use crate::data::DataRecord;
use crate::poly::MonomialVector;
use crate::Error;

/// States with a norm above this are treated as a finite escape.
pub const BLOW_UP_NORM: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct PolySystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    z: MonomialVector,
}

#[derive(Deserialize, Serialize)]
struct SystemFile {
    n: usize,
    z: String,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, Error> {
    let r = rows.len();
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn toml_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl PolySystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, z: MonomialVector) -> Result<Self, Error> {
        let n = z.nvars();
        if a.nrows() != n || a.ncols() != z.len() {
            return Err(Error::Dimension(format!(
                "A is {}x{}, expected {n}x{} (one column per entry of Z)",
                a.nrows(),
                a.ncols(),
                z.len()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B is {}x{}, expected {n}xm with m >= 1", b.nrows(), b.ncols())));
        }
        Ok(Self { a, b, z })
    }

    pub fn from_toml_str(s: &str) -> Result<Self, Error> {
        let f: SystemFile = toml::from_str(s).map_err(toml_err)?;
        let z = MonomialVector::parse(&f.z, f.n)?;
        Self::new(matrix_from_rows(&f.a, "a")?, matrix_from_rows(&f.b, "b")?, z)
    }

    pub fn to_toml_string(&self) -> String {
        let f = SystemFile {
            n: self.n(),
            z: self.z.to_string(),
            a: matrix_to_rows(&self.a),
            b: matrix_to_rows(&self.b),
        };
        toml::to_string(&f).expect("plain numeric data serializes")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn z(&self) -> &MonomialVector {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.nvars()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_monomials(&self) -> usize {
        self.z.len()
    }

    /// `A Z(x) + B u`.
    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let zx = self.z.eval(x.as_slice()).expect("state dimension checked by caller");
        &self.a * zx + &self.b * u
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// rad/s
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Deserialize, Serialize)]
pub struct InputChannel {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub sinusoids: Vec<Sinusoid>,
}

/// `u_j(t) = offset_j + sum_k a_k sin(w_k t + phi_k)` per channel.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct InputSignal {
    pub channels: Vec<InputChannel>,
}

impl InputSignal {
    pub fn zero(m: usize) -> Self {
        Self { channels: vec![InputChannel::default(); m] }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|c| {
                c.offset
                    + c.sinusoids
                        .iter()
                        .map(|s| s.amplitude * (s.frequency * t + s.phase).sin())
                        .sum::<f64>()
            }),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub t0: f64,
    pub tau: f64,
    pub samples: usize,
    pub x0: Vec<f64>,
    pub input: InputSignal,
    pub integrator_step: f64,
    pub derivative_noise_std: f64,
    pub seed: u64,
}

fn default_step() -> f64 {
    1e-3
}

#[derive(Deserialize, Serialize)]
struct ExperimentFile {
    #[serde(default)]
    t0: f64,
    tau: f64,
    samples: usize,
    x0: Vec<f64>,
    #[serde(default = "default_step")]
    integrator_step: f64,
    #[serde(default)]
    derivative_noise_std: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    input: Vec<InputChannel>,
}

/// Number of whole steps of size `step` in `span`, if `step` divides it.
fn steps_in(span: f64, step: f64) -> Option<usize> {
    let k = (span / step).round();
    if k >= 0.0 && (k * step - span).abs() <= 1e-9 * span.abs().max(step) {
        Some(k as usize)
    } else {
        None
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, Error> {
        let f: ExperimentFile = toml::from_str(s).map_err(toml_err)?;
        Ok(Self {
            t0: f.t0,
            tau: f.tau,
            samples: f.samples,
            x0: f.x0,
            input: InputSignal { channels: f.input },
            integrator_step: f.integrator_step,
            derivative_noise_std: f.derivative_noise_std,
            seed: f.seed,
        })
    }

    pub fn to_toml_string(&self) -> String {
        let f = ExperimentFile {
            t0: self.t0,
            tau: self.tau,
            samples: self.samples,
            x0: self.x0.clone(),
            integrator_step: self.integrator_step,
            derivative_noise_std: self.derivative_noise_std,
            seed: self.seed,
            input: self.input.channels.clone(),
        };
        toml::to_string(&f).expect("plain numeric data serializes")
    }

    /// `t0 + (T - 1) tau`.
    pub fn horizon(&self) -> f64 {
        self.t0 + (self.samples.saturating_sub(1)) as f64 * self.tau
    }

    pub fn validate(&self, sys: &PolySystem) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if !(self.integrator_step > 0.0) || self.integrator_step > self.tau {
            return bad(format!("integrator_step must lie in (0, tau], got {}", self.integrator_step));
        }
        if steps_in(self.tau, self.integrator_step).is_none() {
            return bad(format!("integrator_step {} does not divide tau {}", self.integrator_step, self.tau));
        }
        if !(self.derivative_noise_std >= 0.0) {
            return bad("derivative_noise_std must be nonnegative".into());
        }
        if self.x0.len() != sys.n() {
            return bad(format!("x0 has {} entries, the system has n = {}", self.x0.len(), sys.n()));
        }
        if self.input.channels.len() != sys.m() {
            return bad(format!("{} input channels given, the system has m = {}", self.input.channels.len(), sys.m()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectories hold at least the initial state")
    }

    /// CSV with header `t,x1,..,xn,u1,..,um`, one row per time.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), Error> {
        let n = self.states.first().map(|x| x.len()).unwrap_or(0);
        let m = self.inputs.first().map(|u| u.len()).unwrap_or(0);
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        out.write_record(&header).map_err(csv_err)?;
        for k in 0..self.len() {
            let mut row = vec![format!("{:e}", self.times[k])];
            row.extend(self.states[k].iter().map(|v| format!("{v:e}")));
            row.extend(self.inputs[k].iter().map(|v| format!("{v:e}")));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// RK4 on `dx/dt = f(t, x)`; `input(t, x)` is recorded alongside each state.
fn integrate(
    f: impl Fn(f64, &DVector<f64>) -> DVector<f64>,
    input: impl Fn(f64, &DVector<f64>) -> DVector<f64>,
    x0: &DVector<f64>,
    t0: f64,
    steps: usize,
    h: f64,
) -> Result<Trajectory, Error> {
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
    };
    let mut x = x0.clone();
    traj.times.push(t0);
    traj.inputs.push(input(t0, &x));
    traj.states.push(x.clone());
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = f(t + h, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t_next = t0 + (k + 1) as f64 * h;
        if !x.iter().all(|v| v.is_finite()) || x.norm() > BLOW_UP_NORM {
            return Err(Error::BlowUp { time: t_next });
        }
        traj.times.push(t_next);
        traj.inputs.push(input(t_next, &x));
        traj.states.push(x.clone());
    }
    Ok(traj)
}

fn check_span(t_span: (f64, f64), step: f64) -> Result<usize, Error> {
    let (t0, t1) = t_span;
    if !(step > 0.0) || !(t1 > t0) {
        return Err(Error::Config(format!("need step > 0 and t1 > t0, got step {step}, span [{t0}, {t1}]")));
    }
    steps_in(t1 - t0, step).ok_or_else(|| Error::Config(format!("step {step} does not divide the span {}", t1 - t0)))
}

/// Open-loop RK4 simulation under a time-varying input.
pub fn simulate(
    sys: &PolySystem,
    input: &InputSignal,
    x0: &[f64],
    t_span: (f64, f64),
    step: f64,
) -> Result<Trajectory, Error> {
    if x0.len() != sys.n() || input.channels.len() != sys.m() {
        return Err(Error::Dimension("x0 or input does not match the system".into()));
    }
    let steps = check_span(t_span, step)?;
    let x0 = DVector::from_column_slice(x0);
    integrate(|t, x| sys.rhs(x, &input.eval(t)), |t, _| input.eval(t), &x0, t_span.0, steps, step)
}

/// RK4 simulation of `dx/dt = A Z(x) + B F(x) Z(x)`.
pub fn simulate_closed_loop(
    sys: &PolySystem,
    ctrl: &Controller,
    x0: &[f64],
    t_span: (f64, f64),
    step: f64,
) -> Result<Trajectory, Error> {
    if ctrl.m() != sys.m() || ctrl.z() != sys.z() {
        return Err(Error::Dimension("controller does not match the system (m or Z differ)".into()));
    }
    if x0.len() != sys.n() {
        return Err(Error::Dimension("x0 does not match the system".into()));
    }
    let steps = check_span(t_span, step)?;
    let x0 = DVector::from_column_slice(x0);
    integrate(
        |_, x| sys.rhs(x, &ctrl.input(x.as_slice())),
        |_, x| ctrl.input(x.as_slice()),
        &x0,
        t_span.0,
        steps,
        step,
    )
}

/// Runs one experiment and samples it at `t0 + k tau`, `k = 0..T-1`.
///
/// Derivative columns are the model right-hand side at the sample instant,
/// plus i.i.d. `N(0, derivative_noise_std^2)` noise drawn from a ChaCha8
/// stream seeded with `cfg.seed`.
pub fn run_experiment(sys: &PolySystem, cfg: &ExperimentConfig) -> Result<DataRecord, Error> {
    run_experiment_with_trajectory(sys, cfg).map(|(rec, _)| rec)
}

/// [`run_experiment`] that also returns the dense trajectory, for plotting.
pub fn run_experiment_with_trajectory(
    sys: &PolySystem,
    cfg: &ExperimentConfig,
) -> Result<(DataRecord, Trajectory), Error> {
    cfg.validate(sys)?;
    let per_sample = steps_in(cfg.tau, cfg.integrator_step).expect("validated");
    let traj = if cfg.samples > 1 {
        integrate(
            |t, x| sys.rhs(x, &cfg.input.eval(t)),
            |t, _| cfg.input.eval(t),
            &DVector::from_column_slice(&cfg.x0),
            cfg.t0,
            per_sample * (cfg.samples - 1),
            cfg.integrator_step,
        )?
    } else {
        let x0 = DVector::from_column_slice(&cfg.x0);
        Trajectory { times: vec![cfg.t0], inputs: vec![cfg.input.eval(cfg.t0)], states: vec![x0] }
    };

    let (n, m, t) = (sys.n(), sys.m(), cfg.samples);
    let mut u = DMatrix::zeros(m, t);
    let mut x0 = DMatrix::zeros(n, t);
    let mut x1 = DMatrix::zeros(n, t);
    let mut times = Vec::with_capacity(t);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.derivative_noise_std).map_err(|e| Error::Config(e.to_string()))?;
    for k in 0..t {
        let idx = k * per_sample;
        let tk = cfg.t0 + k as f64 * cfg.tau;
        let xk = &traj.states[idx];
        let uk = cfg.input.eval(tk);
        let mut dx = sys.rhs(xk, &uk);
        if cfg.derivative_noise_std > 0.0 {
            for v in dx.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        u.set_column(k, &uk);
        x0.set_column(k, xk);
        x1.set_column(k, &dx);
        times.push(tk);
    }
    let mut rec = DataRecord::new(u, x0, x1, sys.z().clone())?;
    rec.times = Some(times);
    rec.meta.insert("seed".into(), cfg.seed.to_string());
    rec.meta.insert("tau".into(), format!("{:e}", cfg.tau));
    rec.meta.insert("t0".into(), format!("{:e}", cfg.t0));
    rec.meta.insert("integrator_step".into(), format!("{:e}", cfg.integrator_step));
    rec.meta.insert("derivative_noise_std".into(), format!("{:e}", cfg.derivative_noise_std));
    Ok((rec, traj))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_decay() -> PolySystem {
        let z = MonomialVector::parse("x1", 1).unwrap();
        PolySystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 0.0), z).unwrap()
    }

    #[test]
    fn rk4_is_fourth_order() {
        let sys = scalar_decay();
        let u = InputSignal::zero(1);
        let err = |h: f64| {
            let tr = simulate(&sys, &u, &[1.0], (0.0, 1.0), h).unwrap();
            (tr.final_state()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn step_must_divide_span() {
        let sys = scalar_decay();
        assert!(simulate(&sys, &InputSignal::zero(1), &[1.0], (0.0, 1.0), 0.3).is_err());
    }

    #[test]
    fn config_round_trip() {
        let cfg = ExperimentConfig {
            t0: 0.0,
            tau: 0.5,
            samples: 4,
            x0: vec![1.0],
            input: InputSignal {
                channels: vec![InputChannel {
                    offset: 0.1,
                    sinusoids: vec![Sinusoid { amplitude: -1.0, frequency: 2.0, phase: 0.3 }],
                }],
            },
            integrator_step: 0.01,
            derivative_noise_std: 0.0,
            seed: 7,
        };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        let sys = scalar_decay();
        assert_eq!(PolySystem::from_toml_str(&sys.to_toml_string()).unwrap(), sys);
    }

    #[test]
    fn rejects_square_a_for_longer_z() {
        let z = MonomialVector::parse("x1, x1^2", 1).unwrap();
        assert!(PolySystem::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), z.clone()).is_err());
        assert!(PolySystem::new(DMatrix::zeros(1, 2), DMatrix::zeros(1, 1), z).is_ok());
    }
}
