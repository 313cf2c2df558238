//! Gramian, projector, and observed-Cauchy checks against a genuine
//! nonlinear potential on control-condition windows.

use num_complex::Complex64 as C64;
use torobs_core::{
    apply_projector, evolve_nls, evolve_with_source, observe_path, sobolev_norm, FrequencySplit,
    NonlinearitySpec, ObservationOperator, ObservationWindow, ObservedCauchySolver, PotentialPath,
    SobolevScale, SpectralField, TorusGeometry, DEFAULT_RCOND,
};

fn seeded_field(geom: &std::sync::Arc<TorusGeometry>, seed: u64, amp: f64) -> SpectralField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let coef: Vec<C64> = (0..geom.n_total())
        .map(|_| C64::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp)))
        .collect();
    SpectralField::from_coefficients(geom, coef).unwrap()
}

/// A smooth cubic trajectory to serve as the potential.
fn nls_potential(geom: &std::sync::Arc<TorusGeometry>, horizon: f64, dt: f64) -> PotentialPath {
    let mut u0 = SpectralField::mode(geom, &[1], C64::new(0.5, 0.0)).unwrap();
    u0.axpy(
        C64::new(1.0, 0.0),
        &SpectralField::mode(geom, &[2], C64::new(0.0, 0.3)).unwrap(),
    );
    u0.axpy(
        C64::new(1.0, 0.0),
        &SpectralField::mode(geom, &[-3], C64::new(0.2, 0.1)).unwrap(),
    );
    evolve_nls(&u0, &NonlinearitySpec::cubic(), horizon, dt).unwrap()
}

fn gcc_window(geom: &std::sync::Arc<TorusGeometry>) -> ObservationWindow {
    ObservationWindow::interval(&geom, (1.0, 5.5), (2.5, 4.0)).unwrap()
}

#[test]
fn inverse_satisfies_the_solve_laws() {
    let geom = TorusGeometry::line(64).unwrap();
    let split = FrequencySplit::new(&geom, 8).unwrap();
    let scale = SobolevScale::new(&geom, 1.0).unwrap();
    let window = gcc_window(&geom);
    let v = nls_potential(&geom, 1.0, 2.5e-3);
    let op = ObservationOperator::assemble(&split, &window, &scale, &v, &NonlinearitySpec::cubic())
        .unwrap();
    let gram = op.gramian();
    let inv = gram.inverse(DEFAULT_RCOND).unwrap();

    let gi = gram.matrix() * inv.matrix();
    let dim = gram.dim();
    let eye = nalgebra::DMatrix::<f64>::identity(dim, dim);
    let residual = (&gi - &eye).norm() / eye.norm();
    assert!(residual < 1e-8, "G G^+ - I residual {residual:.3e}");
    let sym = (inv.matrix() - inv.matrix().transpose()).norm() / inv.matrix().norm();
    assert!(sym < 1e-12);

    // the operator norm of the inverse is exactly C_obs^2
    let c_obs = gram.observability_constant().unwrap();
    let op_norm = inv
        .matrix()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |m, &e| m.max(e.abs()));
    assert!((op_norm - c_obs * c_obs).abs() < 1e-9 * op_norm);
}

#[test]
fn free_uniform_constant_is_the_inverse_square_root_horizon() {
    let geom = TorusGeometry::line(32).unwrap();
    let split = FrequencySplit::new(&geom, 5).unwrap();
    let scale = SobolevScale::new(&geom, 1.0).unwrap();
    let window = ObservationWindow::uniform(&geom);
    let nl = NonlinearitySpec::none();
    // G = T I exactly, so quadrupling T quarters every eigenvalue of the
    // inverse and halves the constant
    let mut constants = Vec::new();
    for horizon in [0.5, 2.0] {
        let v = PotentialPath::zero(&geom, horizon, 201).unwrap();
        let op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl).unwrap();
        let c = op.gramian().observability_constant().unwrap();
        assert!((c - 1.0 / horizon.sqrt()).abs() < 1e-10);
        constants.push(c);
    }
    assert!((constants[0] / constants[1] - 2.0).abs() < 1e-10);
}

#[test]
fn constant_is_stable_across_split_ranks() {
    let geom = TorusGeometry::line(64).unwrap();
    let scale = SobolevScale::new(&geom, 1.0).unwrap();
    let window = gcc_window(&geom);
    let nl = NonlinearitySpec::none();
    let v = PotentialPath::zero(&geom, 1.0, 401).unwrap();
    let mut constants = Vec::new();
    for n in [8, 16, 32] {
        let split = FrequencySplit::new(&geom, n).unwrap();
        let op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl).unwrap();
        let gram = op.gramian();
        assert!(gram.lambda_min() > 0.0, "free flow must be observable");
        constants.push(gram.observability_constant().unwrap());
    }
    let max = constants.iter().cloned().fold(f64::MIN, f64::max);
    let min = constants.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        max / min <= 2.0,
        "constants across ranks spread too far: {constants:?}"
    );
}

#[test]
fn lambda_min_is_uniform_across_ranks_with_a_potential() {
    let geom = TorusGeometry::line(64).unwrap();
    let scale = SobolevScale::new(&geom, 1.0).unwrap();
    let window = gcc_window(&geom);
    let nl = NonlinearitySpec::cubic();
    let v = nls_potential(&geom, 1.0, 2.5e-3);
    let mut minima = Vec::new();
    for n in [8, 16, 32] {
        let split = FrequencySplit::new(&geom, n).unwrap();
        let op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl).unwrap();
        let lm = op.gramian().lambda_min();
        assert!(lm > 0.0);
        minima.push(lm);
    }
    let max = minima.iter().cloned().fold(f64::MIN, f64::max);
    let min = minima.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        max / min <= 4.0,
        "lambda_min not uniform across ranks: {minima:?}"
    );
}

#[test]
fn projector_annihilates_the_orthogonal_complement() {
    let geom = TorusGeometry::line(32).unwrap();
    let split = FrequencySplit::new(&geom, 6).unwrap();
    let scale = SobolevScale::new(&geom, 1.0).unwrap();
    let window = ObservationWindow::interval(&geom, (1.0, 4.0), (2.0, 3.0)).unwrap();
    let nl = NonlinearitySpec::cubic();
    let v = nls_potential(&geom, 0.5, 2.5e-3);
    let op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl).unwrap();
    let inv = op.gramian().inverse(DEFAULT_RCOND).unwrap();

    // an arbitrary trace, orthogonalized against the range by one
    // projection step
    let fields: Vec<SpectralField> = (0..v.node_count())
        .map(|j| seeded_field(&geom, 900 + j as u64, 0.5))
        .collect();
    let g = torobs_core::ObservedTrace::new(fields, v.horizon(), &scale).unwrap();
    let pg = apply_projector(&g, &op, &inv).unwrap();
    let complement = g.sub(&pg).unwrap();
    let killed = apply_projector(&complement, &op, &inv).unwrap();
    assert!(
        killed.l2_norm() <= 1e-9 * complement.l2_norm().max(1e-30),
        "projector left {:.3e} of the complement",
        killed.l2_norm() / complement.l2_norm()
    );
}

#[test]
fn solver_recovers_manufactured_inhomogeneous_data() {
    let geom = TorusGeometry::line(64).unwrap();
    let split = FrequencySplit::new(&geom, 8).unwrap();
    let scale = SobolevScale::new(&geom, 1.0).unwrap();
    let window = gcc_window(&geom);
    let nl = NonlinearitySpec::cubic();
    let v = nls_potential(&geom, 1.0, 2.5e-3);

    let w0 = split.project_high(&seeded_field(&geom, 55, 0.3)).unwrap();
    let h_nodes: Vec<SpectralField> = (0..v.node_count())
        .map(|j| {
            split
                .project_high(&seeded_field(&geom, 7000 + j as u64, 0.1))
                .unwrap()
        })
        .collect();
    let h = PotentialPath::new(h_nodes, v.horizon()).unwrap();

    let forward = evolve_with_source(&split, &v, &w0, 0.0, &h, &nl).unwrap();
    let g = observe_path(&forward, &window, &scale).unwrap();

    let solver =
        ObservedCauchySolver::new(&split, &window, &scale, &v, &nl, DEFAULT_RCOND).unwrap();
    let (rec, traj) = solver.solve(&g, Some(&h)).unwrap();
    let err =
        sobolev_norm(&rec.sub(&w0).unwrap(), &scale).unwrap() / sobolev_norm(&w0, &scale).unwrap();
    assert!(err < 1e-7, "recovered datum off by {err:.3e}");
    let path_err = traj.sub(&forward).unwrap().sup_norm(&scale).unwrap();
    assert!(path_err < 1e-7, "trajectory off by {path_err:.3e}");
}

#[test]
fn inverse_moves_lipschitz_with_the_potential() {
    let geom = TorusGeometry::line(32).unwrap();
    let split = FrequencySplit::new(&geom, 6).unwrap();
    let scale = SobolevScale::new(&geom, 1.0).unwrap();
    let window = ObservationWindow::interval(&geom, (1.0, 4.0), (2.0, 3.0)).unwrap();
    let nl = NonlinearitySpec::cubic();
    let v = nls_potential(&geom, 0.5, 2.5e-3);
    let dir = PotentialPath::constant(
        &SpectralField::mode(&geom, &[2], C64::new(0.4, -0.1)).unwrap(),
        v.horizon(),
        v.node_count(),
    )
    .unwrap();

    let inv_for = |delta: f64| -> nalgebra::DMatrix<f64> {
        let mut vd = v.clone();
        vd.axpy(C64::new(delta, 0.0), &dir).unwrap();
        ObservationOperator::assemble(&split, &window, &scale, &vd, &nl)
            .unwrap()
            .gramian()
            .inverse(DEFAULT_RCOND)
            .unwrap()
            .matrix()
            .clone()
    };
    let base = inv_for(0.0);
    let g1 = (inv_for(1e-2) - &base).norm();
    let g2 = (inv_for(1e-3) - &base).norm();
    let ratio = g1 / g2;
    assert!(
        ratio > 6.0 && ratio < 14.0,
        "inverse should move linearly in the potential: {g1:.3e} / {g2:.3e}"
    );
}
