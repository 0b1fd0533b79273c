mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use obs_forge::attack::{self, Tolerances};
use obs_forge::fixtures;
use obs_forge::numerics::{eigenvalues, spectra_distance};
use obs_forge::observer::{self, augmented_jacobian, error_rhs, observer_block, observer_rhs, plant_rhs};
use proptest::prelude::*;
use rand::Rng;

fn reference_design() -> (obs_forge::model::ClosedLoop, attack::AttackDesign, observer::ObserverDesign) {
    let (p, c) = fixtures::reference_models();
    let cl = obs_forge::model::ClosedLoop::assemble(&p, &c);
    let fs = attack::forbidden_set(&p, &c).unwrap();
    let y = DMatrix::identity(4, 4) * fixtures::Y_SCALE;
    let design = attack::build_design(&cl, fs, &fixtures::pi_star(), fixtures::GAMMA_FRACTION, &y, Tolerances::default())
        .unwrap();
    let obs = observer::design_gain(&cl, &design, &fixtures::observer_poles()).unwrap();
    (cl, design, obs)
}

proptest! {
    #![proptest_config(prop_config(100))]

    #[test]
    fn similarity_preserves_augmented_spectrum(seed in any::<u64>(), n_p in 1usize..=3, n_c in 1usize..=3) {
        let mut r = rng(seed);
        let l = random_loop(&mut r, n_p, n_c, false);
        let Some((design, obs)) = random_design(&mut r, &l) else { return Ok(()) };
        let jac = augmented_jacobian(&l.cl, &design, &obs);
        // both eigenproblems must resolve their spectra below the tolerance
        prop_assume!(eigenvalue_error_bound(&jac.j_phi) < 1e-10 && eigenvalue_error_bound(&jac.j_tilde) < 1e-10);
        let a = eigenvalues(&jac.j_phi).unwrap();
        let b = eigenvalues(&jac.j_tilde).unwrap();
        let err = spectra_distance(&a, &b);
        prop_assert!(err <= 1e-8, "spectra differ by {err}");
    }

    #[test]
    fn transform_zeroes_lower_left_block(seed in any::<u64>(), n_p in 1usize..=4, n_c in 1usize..=4) {
        let mut r = rng(seed);
        let l = random_loop(&mut r, n_p, n_c, false);
        let Some((design, obs)) = random_design(&mut r, &l) else { return Ok(()) };
        let jac = augmented_jacobian(&l.cl, &design, &obs);
        // the cancellation is exact up to rounding of the largest entry
        let tol = 1e-12 * jac.j_phi.amax().max(1.0);
        prop_assert!(jac.lower_left_residual() <= tol, "residual {:e} vs {tol:e}", jac.lower_left_residual());
        let identity = &jac.t * jac.t_inverse();
        prop_assert_eq!(identity, DMatrix::identity(2 * l.cl.n(), 2 * l.cl.n()));
    }

    #[test]
    fn error_rhs_is_observer_minus_plant(seed in any::<u64>(), n_p in 1usize..=3, n_c in 1usize..=3) {
        let mut r = rng(seed);
        let l = random_loop(&mut r, n_p, n_c, false);
        let Some((design, obs)) = random_design(&mut r, &l) else { return Ok(()) };
        let n = l.cl.n();
        for _ in 0..20 {
            let z = gaussian_vec(&mut r, n) * r.random_range(0.01..10.0);
            let e = gaussian_vec(&mut r, n) * r.random_range(0.01..10.0);
            let zhat = &z + &e;
            let y_tilde = observer::corrupted_output(&l.cl, &design, &z, &zhat);
            let direct = error_rhs(&l.cl, &design, &obs, &z, &e);
            let diff = observer_rhs(&l.cl, &design, &obs, &zhat, y_tilde) - plant_rhs(&l.cl, &design, &z, &zhat);
            let scale = direct.norm().max(diff.norm()).max(1.0);
            let dev = (&direct - &diff).norm() / scale;
            prop_assert!(dev < 1e-10, "relative deviation {dev:e}");
        }
    }

    #[test]
    fn placed_spectrum_is_no_slower_than_requested(seed in any::<u64>(), n_p in 1usize..=3, n_c in 1usize..=3) {
        let mut r = rng(seed);
        let l = random_loop(&mut r, n_p, n_c, false);
        let Some((design, obs)) = random_design(&mut r, &l) else { return Ok(()) };
        let block = observer_block(&l.cl, &design, &obs.gain);
        prop_assume!(eigenvalue_error_bound(&block) < 1e-8);
        let placed = eigenvalues(&block).unwrap();
        let slowest_placed = placed.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max);
        let slowest_wanted = obs.desired_poles.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(slowest_placed <= slowest_wanted + 1e-6);
        prop_assert!(spectra_distance(&placed, &obs.desired_poles) <= 1e-6);
    }
}

#[test]
fn error_identity_on_reference_design() {
    let (cl, design, obs) = reference_design();
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let z = gaussian_vec(&mut r, 4) * r.random_range(0.01..5.0);
        let e = gaussian_vec(&mut r, 4) * r.random_range(0.01..5.0);
        let zhat = &z + &e;
        let y_tilde = observer::corrupted_output(&cl, &design, &z, &zhat);
        let direct = error_rhs(&cl, &design, &obs, &z, &e);
        let diff = observer_rhs(&cl, &design, &obs, &zhat, y_tilde) - plant_rhs(&cl, &design, &z, &zhat);
        worst = worst.max((&direct - &diff).norm() / direct.norm().max(1.0));
    }
    assert!(worst < 1e-10, "max relative deviation {worst:e}");
}

#[test]
fn reference_jacobian_is_block_triangular() {
    let (cl, design, obs) = reference_design();
    let jac = augmented_jacobian(&cl, &design, &obs);
    assert!(jac.lower_left_residual() <= 1e-12);
    let mut want = eigenvalues(cl.a()).unwrap();
    want.extend(fixtures::observer_poles());
    assert!(spectra_distance(&eigenvalues(&jac.j_phi).unwrap(), &want) <= 1e-6);
    let z = DVector::zeros(4);
    assert_eq!(error_rhs(&cl, &design, &obs, &z, &z), z);
}
