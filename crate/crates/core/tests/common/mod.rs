#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use obs_forge::attack::{self, AttackDesign, ForbiddenSet, Tolerances};
use obs_forge::model::{ClosedLoop, ControllerModel, PlantModel};
use obs_forge::numerics;
use obs_forge::observer::{self, ObserverDesign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    gaussian(rng, n, n).qr().q()
}

/// Stable block diagonal (real entries and 2×2 rotation blocks) under a
/// random orthogonal similarity.
pub fn hurwitz(rng: &mut ChaCha8Rng, n: usize, real_only: bool) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::zeros(n, n);
    let mut k = 0;
    while k < n {
        let re = -rng.random_range(0.5..4.0);
        if !real_only && k + 1 < n && rng.random_bool(0.5) {
            let im = rng.random_range(0.3..3.0);
            d[(k, k)] = re;
            d[(k + 1, k + 1)] = re;
            d[(k, k + 1)] = im;
            d[(k + 1, k)] = -im;
            k += 2;
        } else {
            d[(k, k)] = re;
            k += 1;
        }
    }
    let q = orthogonal(rng, n);
    &q * d * q.transpose()
}

/// Symmetric positive definite with eigenvalues in `[lo, hi]`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = orthogonal(rng, n);
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..hi)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Conjugate-closed stable set of `n` distinct poles.
pub fn stable_poles(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let re = -rng.random_range(0.5..6.0);
        if out.len() + 1 < n && rng.random_bool(0.4) {
            let im = rng.random_range(0.3..3.0);
            out.push(Complex64::new(re, im));
            out.push(Complex64::new(re, -im));
        } else {
            out.push(Complex64::new(re, 0.0));
        }
    }
    out
}

pub struct RandomLoop {
    pub plant: PlantModel,
    pub controller: ControllerModel,
    pub cl: ClosedLoop,
}

/// Hurwitz plant and controller (hence Hurwitz block-triangular `A`) with
/// disjoint spectra and `B_pC_c ≠ 0`.
pub fn random_loop(rng: &mut ChaCha8Rng, n_p: usize, n_c: usize, real_only: bool) -> RandomLoop {
    loop {
        let a_p = hurwitz(rng, n_p, real_only);
        let a_c = hurwitz(rng, n_c, real_only);
        let b_p = gaussian_vec(rng, n_p);
        let b_c = gaussian_vec(rng, n_c);
        let c_c = gaussian(rng, 1, n_c).row(0).into_owned();
        let d_c: f64 = StandardNormal.sample(rng);
        let q_p = spd(rng, n_p, 0.2, 2.0);
        let plant = PlantModel::new(a_p, b_p, q_p).unwrap();
        let controller = ControllerModel::new(a_c, b_c, c_c, d_c).unwrap();
        let cl = ClosedLoop::assemble(&plant, &controller);
        let report = obs_forge::model::validate_assumptions(&plant, &controller, &cl).unwrap();
        if report.all_pass() && report.min_eigenvalue_gap > 1e-3 {
            return RandomLoop { plant, controller, cl };
        }
    }
}

pub fn forbidden(l: &RandomLoop) -> ForbiddenSet {
    attack::forbidden_set(&l.plant, &l.controller).unwrap()
}

/// A verified attack design and a placed observer with a Hurwitz error
/// block, or `None` when this draw does not admit one.
pub fn random_design(rng: &mut ChaCha8Rng, l: &RandomLoop) -> Option<(AttackDesign, ObserverDesign)> {
    let fs = forbidden(l);
    let pi_star = gaussian_vec(rng, l.cl.n_p());
    if fs.margin(&pi_star) <= 1e-3 {
        return None;
    }
    let y = DMatrix::identity(l.cl.n(), l.cl.n()) * rng.random_range(0.1..1.0);
    let frac = rng.random_range(0.05..0.95);
    let design = attack::build_design(&l.cl, fs, &pi_star, frac, &y, Tolerances::default()).ok()?;
    let poles = stable_poles(rng, l.cl.n());
    let obs = observer::design_gain(&l.cl, &design, &poles).ok()?;
    if obs.observability_condition > 1e8 {
        return None;
    }
    Some((design, obs))
}

/// Unobservable iff some eigenvector `w` of `F` has `|Hw| ≤ tol·‖H‖`.
pub fn brute_force_unobservable(f: &DMatrix<f64>, h: &RowDVector<f64>, tol: f64) -> bool {
    let hn = h.norm();
    if hn == 0.0 {
        return true;
    }
    let pairs = numerics::eig(f).unwrap();
    let hc = h.map(|v| Complex64::new(v, 0.0));
    pairs.vectors.iter().any(|w| (&hc * w)[(0, 0)].norm() <= tol * hn)
}

/// Deterministic proptest configuration: fixed RNG seed, no regression
/// files.
pub fn prop_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x0b5f_0e6e),
        ..proptest::test_runner::Config::default()
    }
}

/// Bauer–Fike bound `κ(V)·ε·‖M‖` on eigenvalue error from rounding in `M`.
pub fn eigenvalue_error_bound(m: &DMatrix<f64>) -> f64 {
    let pairs = numerics::eig(m).unwrap();
    if pairs.defective {
        return f64::INFINITY;
    }
    let v = DMatrix::from_columns(&pairs.vectors);
    let sv = v.singular_values();
    let kappa = sv.max() / sv.min();
    kappa * f64::EPSILON * numerics::spectral_norm(m)
}

/// Smallest distance between two eigenvalues of `m`.
pub fn eigenvalue_separation(m: &DMatrix<f64>) -> f64 {
    let ev = numerics::eigenvalues(m).unwrap();
    let mut best = f64::INFINITY;
    for i in 0..ev.len() {
        for j in i + 1..ev.len() {
            best = best.min((ev[i] - ev[j]).norm());
        }
    }
    best
}

/// The reference loop under a small attack (`γ = 0.05·γ_max`) with observer
/// poles at `σ(A + 2BH̄)`, so `L ≈ 0` and the region estimate is feasible.
pub fn feasible_reference_design() -> (ClosedLoop, AttackDesign, ObserverDesign) {
    let (p, c) = obs_forge::fixtures::reference_models();
    let cl = ClosedLoop::assemble(&p, &c);
    let fs = attack::forbidden_set(&p, &c).unwrap();
    let y = DMatrix::identity(4, 4) * obs_forge::fixtures::Y_SCALE;
    let design =
        attack::build_design(&cl, fs, &obs_forge::fixtures::pi_star(), 0.05, &y, Tolerances::default()).unwrap();
    let poles = numerics::eigenvalues(&(cl.a() + cl.b() * &design.hbar * 2.0)).unwrap();
    let obs = observer::design_gain(&cl, &design, &poles).unwrap();
    (cl, design, obs)
}
