mod common;

use common::*;
use ddsos::data::{
    build_data_matrices, build_data_matrices_with, g_particular, closed_loop_identity_residual, rank_with_tol, DataRecord,
};
use ddsos::plant::{
    run_experiment, simulate, simulate_closed_loop, ExperimentConfig, InputChannel, InputSignal, PolySystem, Sinusoid,
};
use ddsos::poly::{MatrixPolynomial, MonomialVector};
use ddsos::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn minus_sin() -> InputSignal {
    InputSignal {
        channels: vec![InputChannel {
            offset: 0.0,
            sinusoids: vec![Sinusoid { amplitude: -1.0, frequency: 1.0, phase: 0.0 }],
        }],
    }
}

fn state_at(traj: &ddsos::plant::Trajectory, t: f64) -> DVector<f64> {
    let k = traj.times.iter().position(|s| (s - t).abs() < 1e-9).expect("time on the grid");
    traj.states[k].clone()
}

#[test]
fn zero_dynamics_hold_state() {
    let z = MonomialVector::parse("x1, x2", 2).unwrap();
    let sys = PolySystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), z).unwrap();
    let traj = simulate(&sys, &minus_sin(), &[0.3, -0.7], (0.0, 1.0), 1e-2).unwrap();
    assert!(traj.states.iter().all(|x| x == &DVector::from_column_slice(&[0.3, -0.7])));
}

#[test]
fn example_states_at_sample_instants() {
    let step = experiment().integrator_step;
    let traj = simulate(&system(), &minus_sin(), &[-0.5, 0.5], (0.0, 3.0 - 3.0 % step), step).unwrap();
    let x1 = state_at(&traj, 5.0 / 24.0);
    let x2 = state_at(&traj, 5.0 / 12.0);
    assert!((x1 - DVector::from_column_slice(&[-0.3926, 0.5201])).amax() < 1e-3);
    assert!((x2 - DVector::from_column_slice(&[-0.2874, 0.4804])).amax() < 1e-3);
}

#[test]
fn experiment_reproduces_printed_rows() {
    let rec = run_experiment(&system(), &experiment()).unwrap();
    assert!(max_abs_diff(&rec.u, &printed_u()) < 1e-3);
    assert_eq!(rec.x1.column(0).as_slice(), &[0.5, 0.25]);
    assert!((rec.x1[(0, 2)] - 0.4804).abs() < 1e-3 && (rec.x1[(1, 2)] + 0.3221).abs() < 1e-3);
    let dm = build_data_matrices(rec).unwrap();
    assert!(max_abs_diff(&dm.z0t, &printed_z0t()) < 1e-3);
    assert_eq!(dm.rank_report.rank, 2);
    assert!(dm.rank_report.sigma_min() > 0.04 && dm.rank_report.sigma_min() > 1e6 * dm.rank_report.tol);
}

#[test]
fn noise_free_data_satisfy_model_identity() {
    let sys = system();
    let rec = run_experiment(&sys, &experiment()).unwrap();
    let dm = build_data_matrices(rec.clone()).unwrap();
    let rhs = sys.b() * &rec.u + sys.a() * &dm.z0t;
    assert!((rhs - &rec.x1).amax() <= 1e-12);
    // The printed matrices satisfy the same identity up to their rounding.
    let printed = sys.b() * printed_u() + sys.a() * printed_z0t();
    assert!((printed - printed_x1()).amax() <= 1e-3);
}

#[test]
fn experiments_are_deterministic() {
    let mut cfg = experiment();
    cfg.derivative_noise_std = 0.01;
    cfg.seed = 42;
    let a = run_experiment(&system(), &cfg).unwrap();
    let b = run_experiment(&system(), &cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed = 43;
    assert_ne!(run_experiment(&system(), &cfg).unwrap().x1, a.x1);
}

#[test]
fn scalar_decay_matches_exponential() {
    let sys = PolySystem::from_toml_str(include_str!("../../../configs/stable_system.toml")).unwrap();
    let ctrl = ddsos::control::Controller::zero(1, sys.z());
    let traj = simulate_closed_loop(&sys, &ctrl, &[2.0], (0.0, 3.0), 1e-3).unwrap();
    assert!(traj.final_state()[0].abs() <= (-3.0f64).exp() * 2.0 * (1.0 + 1e-6));
}

#[test]
fn open_loop_blows_up() {
    let cfg = ExperimentConfig::from_toml_str(include_str!("../../../configs/blowup_experiment.toml")).unwrap();
    match run_experiment(&system(), &cfg) {
        Err(Error::BlowUp { time }) => assert!(time > 0.0 && time < 20.0),
        other => panic!("expected a blow-up, got {other:?}"),
    }
}

#[test]
fn data_csv_round_trip() {
    let rec = run_experiment(&system(), &experiment()).unwrap();
    let mut buf = Vec::new();
    rec.write_csv(&mut buf).unwrap();
    let back = DataRecord::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.u, rec.u);
    assert_eq!(back.x0, rec.x0);
    assert_eq!(back.x1, rec.x1);
    assert_eq!(back.z, rec.z);
}

#[test]
fn rank_gate_errors() {
    let z = MonomialVector::parse("x1, x2", 2).unwrap();
    let dup = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
    let rec = DataRecord::new(DMatrix::zeros(1, 2), dup, DMatrix::zeros(2, 2), z.clone()).unwrap();
    assert!(matches!(build_data_matrices(rec), Err(Error::RankDeficient { rank: 1, .. })));
    let rec = DataRecord::new(DMatrix::zeros(1, 1), DMatrix::from_element(2, 1, 1.0), DMatrix::zeros(2, 1), z).unwrap();
    assert!(matches!(build_data_matrices(rec), Err(Error::TooFewSamples { samples: 1, n_monomials: 2 })));
}

#[test]
fn pseudo_inverse_examples() {
    let z = MonomialVector::parse("x1, x2", 2).unwrap();
    let rec = DataRecord::new(DMatrix::zeros(1, 2), DMatrix::identity(2, 2), DMatrix::zeros(2, 2), z).unwrap();
    let g = g_particular(&build_data_matrices(rec).unwrap()).unwrap();
    assert!((g - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);

    let dm = printed_data();
    let g = g_particular(&dm).unwrap();
    assert!((&dm.z0t * g - DMatrix::<f64>::identity(2, 2)).amax() <= 1e-10);
}

#[test]
fn closed_loop_identity_with_zero_model_is_exact() {
    let z = MonomialVector::parse("x1, x2", 2).unwrap();
    let sys = PolySystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), z.clone()).unwrap();
    let x0 = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
    let rec = DataRecord::new(DMatrix::from_element(1, 3, 0.3), x0, DMatrix::zeros(2, 3), z).unwrap();
    let dm = build_data_matrices(rec).unwrap();
    let g = MatrixPolynomial::from_constant(&g_particular(&dm).unwrap(), 2);
    assert_eq!(closed_loop_identity_residual(&sys, &dm, &g, &[vec![0.4, -1.0], vec![2.0, 1.0]]).unwrap(), 0.0);
}

#[test]
fn closed_loop_identity_rejects_non_inverse() {
    let dm = build_data_matrices(run_experiment(&system(), &experiment()).unwrap()).unwrap();
    let g = MatrixPolynomial::from_constant(&DMatrix::zeros(3, 2), 2);
    assert!(matches!(closed_loop_identity_residual(&system(), &dm, &g, &[vec![0.1, 0.2]]), Err(Error::NotRightInverse(_))));
}

#[test]
fn closed_loop_identity_with_pseudo_inverse_on_unit_box() {
    let dm = build_data_matrices(run_experiment(&system(), &experiment()).unwrap()).unwrap();
    let g = MatrixPolynomial::from_constant(&g_particular(&dm).unwrap(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    assert!(closed_loop_identity_residual(&system(), &dm, &g, &xs).unwrap() <= 1e-6);
}

#[test]
fn rank_factor_is_configurable() {
    let rec = run_experiment(&system(), &experiment()).unwrap();
    let dm = build_data_matrices_with(rec.clone(), 1.0).unwrap();
    assert!(dm.rank_report.tol < build_data_matrices(rec).unwrap().rank_report.tol);
}

proptest! {
    #[test]
    fn appending_columns_never_lowers_rank(
        seed in 0u64..1000,
        rows in 1usize..5,
        cols in 1usize..6,
        extra in 1usize..4,
        deficient in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        if deficient && rows > 1 {
            let r0 = m.row(0).into_owned();
            m.set_row(rows - 1, &(r0 * 2.0));
        }
        let tol = 1e-9;
        let base = rank_with_tol(&m, tol).rank;
        let more = DMatrix::from_fn(rows, extra, |_, _| rng.random_range(-1.0..1.0));
        let mut wide = DMatrix::zeros(rows, cols + extra);
        wide.columns_mut(0, cols).copy_from(&m);
        wide.columns_mut(cols, extra).copy_from(&more);
        prop_assert!(rank_with_tol(&wide, tol).rank >= base);
    }

    #[test]
    fn pseudo_inverse_is_right_inverse(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = MonomialVector::parse("x1, x2, x3", 3).unwrap();
        let x0 = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let rec = DataRecord::new(DMatrix::zeros(1, 5), x0, DMatrix::zeros(3, 5), z).unwrap();
        let dm = build_data_matrices(rec).unwrap();
        let g = g_particular(&dm).unwrap();
        prop_assert!((&dm.z0t * g - DMatrix::<f64>::identity(3, 3)).amax() <= 1e-10);
    }
}
