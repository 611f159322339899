mod common;

use common::*;
use ddsos::control::{
    certificate_check, circle_states, extract_controller, extract_controller_with_tol, invert_spd,
    model_based_synthesize, p_from_y, plant_side_vdot, synthesize, verify_closed_loop, Controller, Grid,
    LyapunovCertificate, Provenance, SynthesisOutcome,
};
use ddsos::data::{build_data_matrices, g_particular, DataRecord};
use ddsos::plant::{simulate_closed_loop, PolySystem};
use ddsos::poly::{monomial_basis, MatrixPolynomial, MonomialVector, Polynomial};
use ddsos::sdp::SolverOptions;
use ddsos::soscompile::{GramMatrix, SosOptions};
use ddsos::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_box() -> Grid {
    Grid { lo: -1.0, hi: 1.0, per_axis: 21, r0: 1e-2 }
}

#[test]
fn printed_solution_replays_to_printed_controller() {
    let dm = printed_data();
    let y = printed_y();
    let p = p_from_y(&dm, &y).unwrap();
    assert!(max_abs_diff(&p, &printed_p()) <= 2e-4);
    let ctrl = extract_controller_with_tol(&dm, &y, &p, PRINTED_ROUNDING_TOL).unwrap();
    let f = ctrl.f();
    assert!((f.get(0, 0).coeff(&ddsos::poly::Monomial::one(2)) + 2.03).abs() < 0.02);
    let expected = Polynomial::parse("-2.0247*x2 - 4.2114*x1^3 - x1^2", 2).unwrap();
    assert!((&ctrl.u_polynomials()[0] - &expected).max_abs_coeff() <= 0.02);
    assert_eq!(ctrl.input(&[0.0, 0.0])[0], 0.0);
}

#[test]
fn printed_solution_fails_the_strict_constancy_check() {
    let dm = printed_data();
    let y = printed_y();
    let p = p_from_y(&dm, &y).unwrap();
    let err = extract_controller(&dm, &y, &p).unwrap_err();
    assert!(matches!(err, Error::Extraction(ref m) if m.contains("not constant")), "{err}");
}

#[test]
fn zero_input_data_give_zero_controller() {
    let dm = printed_data();
    let rec = DataRecord::new(DMatrix::zeros(1, 3), dm.record.x0.clone(), dm.record.x1.clone(), z()).unwrap();
    let dm = build_data_matrices(rec).unwrap();
    let c = 0.5;
    let y = MatrixPolynomial::from_constant(&(g_particular(&dm).unwrap() * c), 2);
    let p = DMatrix::identity(2, 2) * c;
    let ctrl = extract_controller(&dm, &y, &p).unwrap();
    assert_eq!(ctrl.f().max_abs_coeff(), 0.0);
}

#[test]
fn non_positive_p_is_rejected() {
    let dm = printed_data();
    let y = MatrixPolynomial::from_constant(&(g_particular(&dm).unwrap() * -1.0), 2);
    let p = DMatrix::identity(2, 2) * -1.0;
    assert!(matches!(extract_controller(&dm, &y, &p), Err(Error::Extraction(_))));
}

/// `Y = Z0T^+ P + (I - Z0T^+ Z0T) W(x)` satisfies `Z0T Y = P` for any `W`.
fn conforming_y(seed: u64) -> (ddsos::data::DataMatrices, MatrixPolynomial, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = MonomialVector::parse("x1, x2, x1*x2", 2).unwrap();
    let t = 5;
    let x0 = DMatrix::from_fn(2, t, |_, _| rng.random_range(-1.0..1.0));
    let u = DMatrix::from_fn(2, t, |_, _| rng.random_range(-1.0..1.0));
    let x1 = DMatrix::from_fn(2, t, |_, _| rng.random_range(-1.0..1.0));
    let dm = build_data_matrices(DataRecord::new(u, x0, x1, z).unwrap()).unwrap();
    let g = g_particular(&dm).unwrap();
    let r = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let p = &r * r.transpose() + DMatrix::identity(3, 3) * 0.5;
    let basis = monomial_basis(2, 2);
    let w_entries = (0..t * 3)
        .map(|_| Polynomial::from_terms(2, basis.iter().map(|m| (m.clone(), rng.random_range(-1.0..1.0)))))
        .collect();
    let w = MatrixPolynomial::from_entries(t, 3, w_entries).unwrap();
    let proj = DMatrix::identity(t, t) - &g * &dm.z0t;
    let y = MatrixPolynomial::from_constant(&(&g * &p), 2).try_add(&w.left_mul(&proj).unwrap()).unwrap();
    (dm, y, p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extraction_identity_holds(seed in 0u64..10_000) {
        let (dm, y, p) = conforming_y(seed);
        let ctrl = extract_controller(&dm, &y, &p).unwrap();
        let lhs = ctrl.f().right_mul(&p).unwrap();
        let rhs = y.left_mul(&dm.record.u).unwrap();
        prop_assert!(lhs.try_add(&rhs.scale(-1.0)).unwrap().max_abs_coeff() <= 1e-10);
        prop_assert_eq!(ctrl.input(&[0.0, 0.0]).amax(), 0.0);
    }
}

fn certificate(theta: DMatrix<f64>, p: DMatrix<f64>) -> LyapunovCertificate {
    let z = MonomialVector::parse("x1", 1).unwrap();
    let basis = vec![(0, ddsos::poly::Monomial::one(1))];
    let gram = GramMatrix { basis, theta };
    let q = gram.to_matrix_polynomial(1, 1);
    let (p_inv, condition) = invert_spd(&p).unwrap();
    LyapunovCertificate { z, p, p_inv, condition, q, gram, epsilon: Polynomial::zero(1), mu: 1e-3, margin: 0.0 }
}

#[test]
fn certificate_items_fail_independently() {
    let ok = certificate(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0));
    assert!(certificate_check(&ok).pass());
    let mut neg = ok.clone();
    neg.gram.theta[(0, 0)] = -1e-3;
    neg.q = neg.gram.to_matrix_polynomial(1, 1);
    let rep = certificate_check(&neg);
    assert!(!rep.gram_psd.pass && rep.reconstruction.pass && rep.p_margin.pass);
    let mut off = ok.clone();
    off.gram.theta[(0, 0)] = 1.1;
    assert!(!certificate_check(&off).reconstruction.pass);
}

#[test]
fn printed_p_clears_the_margin() {
    let z = z();
    let basis = vec![(0, ddsos::poly::Monomial::one(2))];
    let gram = GramMatrix { basis, theta: DMatrix::zeros(1, 1) };
    let (p_inv, condition) = invert_spd(&printed_p()).unwrap();
    let cert = LyapunovCertificate {
        z,
        p: printed_p(),
        p_inv,
        condition,
        q: MatrixPolynomial::zeros(2, 2, 2),
        gram,
        epsilon: SosOptions::default_for(2).epsilon,
        mu: 1e-3,
        margin: 0.0,
    };
    assert!(certificate_check(&cert).p_margin.pass);
}

#[test]
fn printed_controller_has_zero_vdot_on_the_x1_axis() {
    // With diagonal P, Z = (0, x1^2) on x2 = 0 and J f = (x1^2 + u, 0) there,
    // so dV/dt = 2 Z^T P^-1 J f vanishes identically on that axis.
    let sys = system();
    let ctrl = printed_controller();
    let p_inv = invert_spd(&printed_p()).unwrap().0;
    let rep = plant_side_vdot(&sys, &ctrl, &p_inv, &unit_box()).unwrap();
    assert_eq!(rep.max_vdot, 0.0);
    assert_eq!(rep.argmax[1], 0.0);
    let off_axis = Grid { lo: 0.05, hi: 1.0, per_axis: 20, r0: 0.0 };
    for quadrant in [[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]] {
        for x in off_axis.points(2) {
            let x = [x[0] * quadrant[0], x[1] * quadrant[1]];
            let z = sys.z().eval(&x).unwrap();
            let f = sys.rhs(&nalgebra::DVector::from_column_slice(&x), &ctrl.input(&x));
            let vdot = 2.0 * (z.transpose() * &p_inv * sys.z().jacobian().eval(&x).unwrap() * f)[(0, 0)];
            assert!(vdot < 0.0, "dV/dt = {vdot} at {x:?}");
        }
    }
}

#[test]
fn open_loop_vdot_is_positive_somewhere() {
    let sys = system();
    let rep = plant_side_vdot(&sys, &Controller::zero(1, sys.z()), &DMatrix::identity(2, 2), &unit_box()).unwrap();
    assert!(rep.max_vdot > 0.0);
}

#[test]
fn stable_scalar_vdot_is_quadratic() {
    let sys = PolySystem::from_toml_str(include_str!("../../../configs/stable_system.toml")).unwrap();
    let rep = plant_side_vdot(&sys, &Controller::zero(1, sys.z()), &DMatrix::identity(1, 1), &Grid::default()).unwrap();
    let x = rep.argmax[0];
    assert!((rep.max_vdot + 2.0 * x * x).abs() < 1e-12 && rep.max_vdot < 0.0);
}

#[test]
fn printed_controller_converges_slowly() {
    // dV/dt = 0 on the x1 axis gives only algebraic decay near the origin:
    // |x(30)| is about 0.08 from (-0.5, 0.5), not below 1e-3.
    let sys = system();
    let ctrl = printed_controller();
    let traj = simulate_closed_loop(&sys, &ctrl, &[-0.5, 0.5], (0.0, 60.0), 1e-3).unwrap();
    let norm_at = |t: f64| traj.states[(t / 1e-3).round() as usize].norm();
    let (n30, n60) = (norm_at(30.0), norm_at(60.0));
    assert!(n30 > 1e-3 && n30 < 0.2, "|x(30)| = {n30}");
    assert!(n60 < n30 && n60 > 1e-3, "|x(60)| = {n60}");
    let long = simulate_closed_loop(&sys, &ctrl, &[1.0, -1.0], (0.0, 60.0), 1e-3).unwrap();
    assert!(long.final_state().norm() < 0.2);
}

#[test]
fn printed_controller_fails_the_simulation_check() {
    let sys = system();
    let rep = verify_closed_loop(&sys, &printed_controller(), &circle_states(2, 1.0, 12), 60.0, 1e-3, 1e-3).unwrap();
    assert!(!rep.pass());
    assert!(rep.runs.iter().all(|r| r.blow_up.is_none()));
    assert!(rep.worst_final_norm() < 0.2);
}

#[test]
fn open_loop_diverges() {
    let sys = system();
    let rep = verify_closed_loop(&sys, &Controller::zero(1, sys.z()), &[vec![0.5, 0.5]], 60.0, 1e-3, 1e-3).unwrap();
    assert!(!rep.pass());
    assert!(rep.runs[0].blow_up.is_some());
}

#[test]
fn stable_plant_verifies_without_control() {
    let sys = PolySystem::from_toml_str(include_str!("../../../configs/stable_system.toml")).unwrap();
    let rep = verify_closed_loop(&sys, &Controller::zero(1, sys.z()), &[vec![1.0], vec![-3.0]], 20.0, 1e-3, 1e-3).unwrap();
    assert!(rep.pass());
}

fn battery(sys: &PolySystem, s: &ddsos::control::Synthesis) {
    let rep = certificate_check(&s.certificate);
    assert!(rep.pass(), "{rep:?}");
    let vdot = plant_side_vdot(sys, &s.controller, &s.certificate.p_inv, &Grid::default()).unwrap();
    assert!(vdot.pass(), "max dV/dt {}", vdot.max_vdot);
    let ver = verify_closed_loop(sys, &s.controller, &circle_states(2, 1.0, 12), 60.0, 1e-3, 1e-3).unwrap();
    assert!(ver.pass(), "worst {}", ver.worst_final_norm());
    assert_eq!(s.controller.input(&[0.0, 0.0]).amax(), 0.0);
}

#[test]
fn data_driven_and_model_based_agree_on_linear_plant() {
    let sys = linear_system();
    let dd = synthesize(&linear_data(), &linear_options(), &SolverOptions::default()).unwrap().feasible().unwrap();
    assert_eq!(dd.controller.provenance(), Provenance::DataDriven);
    battery(&sys, &dd);
    let mb = model_based_synthesize(sys.a(), sys.b(), sys.z(), &linear_options(), &SolverOptions::default())
        .unwrap()
        .feasible()
        .unwrap();
    assert_eq!(mb.controller.provenance(), Provenance::ModelBased);
    battery(&sys, &mb);
}

#[test]
fn data_driven_extraction_identity_on_solver_output() {
    let dm = linear_data();
    let s = synthesize(&dm, &linear_options(), &SolverOptions::default()).unwrap().feasible().unwrap();
    let lhs = s.controller.f().right_mul(&s.solution.p).unwrap();
    let rhs = s.solution.y.left_mul(&dm.record.u).unwrap();
    assert!(lhs.try_add(&rhs.scale(-1.0)).unwrap().max_abs_coeff() <= 1e-10);
}

#[test]
fn model_based_accepts_stable_plant_with_zero_gain() {
    let z = MonomialVector::parse("x1, x2", 2).unwrap();
    let a = -DMatrix::<f64>::identity(2, 2);
    let b = DMatrix::from_row_slice(2, 1, &[0.3, -1.0]);
    let mut opts = linear_options();
    opts.dy = 0;
    let (prog, _) = ddsos::soscompile::compile_model_based(&a, &b, &z, &opts).unwrap();
    // Y = 0, P = I: Q = (2 - eps) I, Gram over the constant basis.
    let mut values = vec![0.0; prog.nvars];
    let pv = prog.p_vars.as_ref().unwrap();
    values[pv[0][0]] = 1.0;
    values[pv[1][1]] = 1.0;
    let theta = DMatrix::identity(2, 2) * (2.0 - 1e-5);
    let sol = ddsos::soscompile::solution_from_values(&prog, &values, &theta, 0.0);
    let ext = ddsos::soscompile::extract_solution(&prog, &sol).unwrap();
    assert!(ddsos::soscompile::reconstruct_residual(&prog, &ext) < 1e-12);
}

#[test]
fn model_based_stabilizes_scalar_unstable_plant() {
    let z = MonomialVector::parse("x1", 1).unwrap();
    let sys = PolySystem::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0), z.clone()).unwrap();
    let mut opts = SosOptions::default_for(1);
    opts.dy = 0;
    opts.epsilon = Polynomial::constant(1, 1e-5);
    let s = model_based_synthesize(sys.a(), sys.b(), &z, &opts, &SolverOptions::default()).unwrap().feasible().unwrap();
    let gain = s.controller.f().get(0, 0).coeff(&ddsos::poly::Monomial::one(1));
    assert!(1.0 + gain < 0.0, "closed loop coefficient {}", 1.0 + gain);
    let rep = plant_side_vdot(&sys, &s.controller, &s.certificate.p_inv, &Grid::default()).unwrap();
    assert!(rep.pass());
}

#[test]
fn model_based_example_plant_is_infeasible() {
    let sys = system();
    let out = model_based_synthesize(sys.a(), sys.b(), sys.z(), &SosOptions::default_for(2), &SolverOptions::default()).unwrap();
    assert!(matches!(out, SynthesisOutcome::Rejected { .. }));
    assert!((out.margin() + 1e-5).abs() < 1e-7, "t* = {}", out.margin());
}

#[test]
fn controller_and_certificate_files_round_trip() {
    let s = synthesize(&linear_data(), &linear_options(), &SolverOptions::default()).unwrap().feasible().unwrap();
    let text = s.controller.to_toml_string(Some(&s.certificate.p));
    assert_eq!(Controller::from_toml_str(&text).unwrap(), s.controller);
    let back = LyapunovCertificate::from_toml_str(&s.certificate.to_toml_string()).unwrap();
    assert_eq!(back.p, s.certificate.p);
    assert_eq!(back.gram, s.certificate.gram);
    assert_eq!(back.q, s.certificate.q);
    assert_eq!(certificate_check(&back), certificate_check(&s.certificate));
}

#[test]
fn controller_dimension_mismatch_is_rejected() {
    let sys = system();
    let one_state = Controller::zero(1, &MonomialVector::parse("x1", 1).unwrap());
    assert!(simulate_closed_loop(&sys, &one_state, &[0.1, 0.1], (0.0, 1.0), 1e-3).is_err());
}
