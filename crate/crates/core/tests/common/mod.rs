//! Fixtures shared by the integration tests: the two-state example plant,
//! its printed data and printed solution.
#![allow(dead_code)]

use ddsos::control::{Controller, Provenance};
use ddsos::data::{build_data_matrices, DataMatrices, DataRecord};
use ddsos::plant::{ExperimentConfig, PolySystem};
use ddsos::poly::{MatrixPolynomial, MonomialVector, Polynomial};
use nalgebra::DMatrix;

pub const SYSTEM: &str = include_str!("../../../../configs/system.toml");
pub const EXPERIMENT: &str = include_str!("../../../../configs/experiment.toml");
pub const CONTROLLER: &str = include_str!("../../../../configs/controller.toml");

pub fn system() -> PolySystem {
    PolySystem::from_toml_str(SYSTEM).unwrap()
}

pub fn experiment() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(EXPERIMENT).unwrap()
}

pub fn z() -> MonomialVector {
    MonomialVector::parse("x2, x1^2", 2).unwrap()
}

pub fn printed_u() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 3, &[0.0, -0.2068, -0.4047])
}

pub fn printed_x0() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 3, &[-0.5, -0.3926, -0.2874, 0.5, 0.5201, 0.4804])
}

pub fn printed_x1() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 3, &[0.5, 0.5201, 0.4804, 0.25, -0.0527, -0.3221])
}

pub fn printed_z0t() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 3, &[0.5, 0.5201, 0.4804, 0.25, 0.1542, 0.0826])
}

pub fn printed_data() -> DataMatrices {
    let rec = DataRecord::new(printed_u(), printed_x0(), printed_x1(), z()).unwrap();
    build_data_matrices(rec).unwrap()
}

pub fn printed_y() -> MatrixPolynomial {
    let e = [
        "0.0224", "0.0789*x1 + 0.0858",
        "-0.0741", "-0.2001*x1 - 0.1695",
        "0.0705", "0.1345*x1 + 0.0943",
    ];
    MatrixPolynomial::from_entries(3, 2, e.iter().map(|s| Polynomial::parse(s, 2).unwrap()).collect()).unwrap()
}

pub fn printed_p() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0065, 0.0, 0.0, 0.0031])
}

/// `u = -2.0247 x2 - 4.2114 x1^3 - x1^2`.
pub fn printed_controller() -> Controller {
    let c = Controller::from_toml_str(CONTROLLER).unwrap();
    assert_eq!(c.provenance(), Provenance::UserSupplied);
    c
}

/// Largest rounding error of 4-decimal printed data fed through `Z0T Y(x)`:
/// every factor is off by at most 5e-5, `|Z0T|` row sums stay below 1.5 and
/// `|Y|` column sums below 0.42 (per monomial).
pub const PRINTED_ROUNDING_TOL: f64 = 1e-4;

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub const LINEAR_SYSTEM: &str = include_str!("../../../../configs/linear_system.toml");
pub const LINEAR_EXPERIMENT: &str = include_str!("../../../../configs/linear_experiment.toml");

/// Unstable linear plant on which the program is feasible.
pub fn linear_system() -> PolySystem {
    PolySystem::from_toml_str(LINEAR_SYSTEM).unwrap()
}

pub fn linear_data() -> DataMatrices {
    let cfg = ExperimentConfig::from_toml_str(LINEAR_EXPERIMENT).unwrap();
    build_data_matrices(ddsos::plant::run_experiment(&linear_system(), &cfg).unwrap()).unwrap()
}

/// Defaults with a constant `eps`: with `Z = x` and dY = 0, `Q` is constant.
pub fn linear_options() -> ddsos::soscompile::SosOptions {
    let mut o = ddsos::soscompile::SosOptions::default_for(2);
    o.dy = 0;
    o.epsilon = Polynomial::constant(2, 1e-5);
    o
}
