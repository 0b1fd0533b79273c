//! Luenberger observer on the induced pair and the coupled vector fields.
//!
//! The observer runs on the corrupted measurement `ỹ = h(z) + H̄ẑ`:
//!
//! ```text
//! dẑ/dt = Aẑ + B(ẑᵀQẑ + 2H̄ẑ) + L(ẑᵀQẑ + 2H̄ẑ − ỹ)
//! ```
//!
//! Its linearization in `(z, ẑ)` is block upper-triangular with diagonal
//! blocks `A` and `F̄ + (B+L)H̄`, so the gain is placed on that second block.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::attack::AttackDesign;
use crate::error::ObserverError;
use crate::model::ClosedLoop;
use crate::numerics;

/// Placement tolerance on the achieved spectrum.
pub const PLACEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverDesign {
    pub gain: DVector<f64>,
    pub desired_poles: Vec<Complex64>,
    pub placed_poles: Vec<Complex64>,
    pub placement_error: f64,
    pub observability_condition: f64,
    pub warning: Option<String>,
}

/// Real poles `-α₀, -α₀-1, …, -α₀-(n-1)` with `α₀` 1.5 times the magnitude
/// of the spectral abscissa of `A`.
pub fn default_poles(cl: &ClosedLoop) -> Result<Vec<Complex64>, ObserverError> {
    let abscissa = numerics::spectral_abscissa(&numerics::eigenvalues(cl.a())?);
    let alpha0 = 1.5 * abscissa.abs();
    Ok((0..cl.n())
        .map(|k| Complex64::new(-(alpha0 + k as f64), 0.0))
        .collect())
}

/// Places `σ(F̄ + L̃H̄)` at `desired` and returns `L = L̃ − B`.
pub fn design_gain(
    cl: &ClosedLoop,
    design: &AttackDesign,
    desired: &[Complex64],
) -> Result<ObserverDesign, ObserverError> {
    if let Some(p) = desired.iter().find(|p| !(p.re < 0.0)) {
        return Err(ObserverError::DesiredPoles(format!("{p} is not in the open left half-plane")));
    }
    if desired.len() != cl.n() {
        return Err(ObserverError::DesiredPoles(format!(
            "{} poles given for state dimension {}",
            desired.len(),
            cl.n()
        )));
    }
    if !numerics::is_conjugate_closed(desired) {
        return Err(ObserverError::DesiredPoles("set is not closed under conjugation".into()));
    }

    let placement = numerics::place_poles_dual(&design.fbar, &design.hbar, desired)?;
    let gain = &placement.gain - cl.b();
    let block = observer_block(cl, design, &gain);
    let placed_poles = numerics::eigenvalues(&block)?;
    let placement_error = numerics::spectra_distance(&placed_poles, desired);
    if !(placement_error <= PLACEMENT_TOL) {
        return Err(ObserverError::Placement {
            mismatch: placement_error,
            condition: placement.condition,
        });
    }
    Ok(ObserverDesign {
        gain,
        desired_poles: desired.to_vec(),
        placed_poles,
        placement_error,
        observability_condition: placement.condition,
        warning: placement.warning,
    })
}

/// `F̄ + (B+L)H̄`.
pub fn observer_block(cl: &ClosedLoop, design: &AttackDesign, gain: &DVector<f64>) -> DMatrix<f64> {
    &design.fbar + (cl.b() + gain) * &design.hbar
}

/// `F̄ + LH̄`, the error-dynamics block the region estimate works with.
pub fn error_block(design: &AttackDesign, gain: &DVector<f64>) -> DMatrix<f64> {
    &design.fbar + gain * &design.hbar
}

/// `ỹ = zᵀQz + H̄ẑ`.
pub fn corrupted_output(cl: &ClosedLoop, design: &AttackDesign, z: &DVector<f64>, zhat: &DVector<f64>) -> f64 {
    cl.output(z) + design.attack_signal(zhat)
}

/// `Az + B(zᵀQz + a(ẑ))`.
pub fn plant_rhs(cl: &ClosedLoop, design: &AttackDesign, z: &DVector<f64>, zhat: &DVector<f64>) -> DVector<f64> {
    cl.a() * z + cl.b() * (cl.output(z) + design.attack_signal(zhat))
}

pub fn observer_rhs(
    cl: &ClosedLoop,
    design: &AttackDesign,
    obs: &ObserverDesign,
    zhat: &DVector<f64>,
    y_tilde: f64,
) -> DVector<f64> {
    let model_output = cl.output(zhat) + 2.0 * design.attack_signal(zhat);
    cl.a() * zhat + cl.b() * model_output + &obs.gain * (model_output - y_tilde)
}

/// `(F̄+LH̄)e + (B+L)H̄z + (B+L)(2zᵀQe + eᵀQe)`.
pub fn error_rhs(
    cl: &ClosedLoop,
    design: &AttackDesign,
    obs: &ObserverDesign,
    z: &DVector<f64>,
    e: &DVector<f64>,
) -> DVector<f64> {
    let b_plus_l = cl.b() + &obs.gain;
    let qe = cl.q() * e;
    let quad = 2.0 * z.dot(&qe) + e.dot(&qe);
    error_block(design, &obs.gain) * e + &b_plus_l * (design.attack_signal(z) + quad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedJacobian {
    /// Jacobian of the `(z, e)` vector field at the origin.
    pub j_phi: DMatrix<f64>,
    /// `T·J_phi·T⁻¹`, block upper-triangular.
    pub j_tilde: DMatrix<f64>,
    /// `[[I, 0], [I, I]]`.
    pub t: DMatrix<f64>,
}

impl AugmentedJacobian {
    pub fn t_inverse(&self) -> DMatrix<f64> {
        let n = self.t.nrows() / 2;
        let mut inv = DMatrix::<f64>::identity(2 * n, 2 * n);
        inv.view_mut((n, 0), (n, n)).fill_with_identity();
        inv.view_mut((n, 0), (n, n)).scale_mut(-1.0);
        inv
    }

    /// Largest entry of the lower-left block of `j_tilde`.
    pub fn lower_left_residual(&self) -> f64 {
        let n = self.t.nrows() / 2;
        self.j_tilde.view((n, 0), (n, n)).amax()
    }
}

/// Assembles `[[F̄, BH̄], [(B+L)H̄, F̄+LH̄]]` and its transform.
pub fn augmented_jacobian(cl: &ClosedLoop, design: &AttackDesign, obs: &ObserverDesign) -> AugmentedJacobian {
    let n = cl.n();
    let bh = cl.b() * &design.hbar;
    let blh = (cl.b() + &obs.gain) * &design.hbar;
    let mut j_phi = DMatrix::<f64>::zeros(2 * n, 2 * n);
    j_phi.view_mut((0, 0), (n, n)).copy_from(&design.fbar);
    j_phi.view_mut((0, n), (n, n)).copy_from(&bh);
    j_phi.view_mut((n, 0), (n, n)).copy_from(&blh);
    j_phi.view_mut((n, n), (n, n)).copy_from(&error_block(design, &obs.gain));

    let mut t = DMatrix::<f64>::identity(2 * n, 2 * n);
    t.view_mut((n, 0), (n, n)).fill_with_identity();
    let mut jac = AugmentedJacobian { j_tilde: DMatrix::zeros(0, 0), j_phi, t };
    jac.j_tilde = &jac.t * &jac.j_phi * jac.t_inverse();
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{build_design, forbidden_set, Tolerances};
    use crate::fixtures;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn reference() -> (ClosedLoop, AttackDesign, ObserverDesign) {
        let (p, c) = fixtures::reference_models();
        let cl = ClosedLoop::assemble(&p, &c);
        let fs = forbidden_set(&p, &c).unwrap();
        let y = DMatrix::identity(4, 4) * 0.2;
        let d = build_design(&cl, fs, &fixtures::pi_star(), 0.9, &y, Tolerances::default()).unwrap();
        let o = design_gain(&cl, &d, &fixtures::observer_poles()).unwrap();
        (cl, d, o)
    }

    #[test]
    fn reference_placement() {
        let (_, _, o) = reference();
        assert!(o.placement_error < 1e-6);
        assert!(o.warning.is_none());
    }

    #[test]
    fn placement_at_current_spectrum() {
        let (cl, d, _) = reference();
        // L̃ = 0 leaves F̄ unchanged, so σ(F̄) is attainable
        let target = numerics::eigenvalues(&d.fbar).unwrap();
        let o = design_gain(&cl, &d, &target).unwrap();
        assert!(o.placement_error < 1e-6);
    }

    #[test]
    fn rejects_unstable_or_wrong_sized_targets() {
        let (cl, d, _) = reference();
        let bad = vec![Complex64::new(0.5, 0.0); 4];
        assert!(matches!(design_gain(&cl, &d, &bad), Err(ObserverError::DesiredPoles(_))));
        let short = vec![Complex64::new(-1.0, 0.0); 3];
        assert!(design_gain(&cl, &d, &short).is_err());
    }

    #[test]
    fn default_poles_are_faster_than_loop() {
        let cl = fixtures::reference_closed_loop();
        let poles = default_poles(&cl).unwrap();
        assert_abs_diff_eq!(poles[0].re, -5.25, epsilon = 1e-9);
        assert_abs_diff_eq!(poles[3].re, -8.25, epsilon = 1e-9);
    }

    #[test]
    fn rhs_at_origin() {
        let (cl, d, o) = reference();
        let zero = DVector::zeros(4);
        assert_eq!(plant_rhs(&cl, &d, &zero, &zero), zero);
        assert_eq!(observer_rhs(&cl, &d, &o, &zero, 0.0), zero);
        assert_eq!(error_rhs(&cl, &d, &o, &zero, &zero), zero);
    }

    #[test]
    fn zero_attack_reduces_to_unattacked_loop() {
        let (cl, d, _) = reference();
        let mut none = d.clone();
        none.hbar.fill(0.0);
        let z = dvector![0.3, -0.2, 0.1, 0.05];
        let zhat = dvector![1.0, 2.0, 3.0, 4.0];
        assert_eq!(plant_rhs(&cl, &none, &z, &zhat), cl.rhs(&z));
    }

    #[test]
    fn consistent_estimate_still_has_innovation() {
        let (cl, d, o) = reference();
        let z = dvector![0.3, -0.2, 0.1, 0.05];
        let y_tilde = corrupted_output(&cl, &d, &z, &z);
        let got = observer_rhs(&cl, &d, &o, &z, y_tilde);
        // hand expansion: innovation collapses to H̄z
        let hz = d.attack_signal(&z);
        let expected = cl.a() * &z + cl.b() * (cl.output(&z) + 2.0 * hz) + &o.gain * hz;
        assert!((got - expected).amax() < 1e-14);
        assert!(hz.abs() > 0.0);
    }

    #[test]
    fn zero_gain_is_open_loop_prediction() {
        let (cl, d, o) = reference();
        let mut open = o.clone();
        open.gain.fill(0.0);
        let zhat = dvector![0.3, -0.2, 0.1, 0.05];
        let got = observer_rhs(&cl, &d, &open, &zhat, 123.0);
        let expected = cl.a() * &zhat + cl.b() * (cl.output(&zhat) + 2.0 * d.attack_signal(&zhat));
        assert_eq!(got, expected);
    }

    #[test]
    fn error_dynamics_at_zero_state() {
        let (cl, d, o) = reference();
        let e = dvector![0.1, 0.2, -0.3, 0.4];
        let zero = DVector::zeros(4);
        let expected = error_block(&d, &o.gain) * &e + (cl.b() + &o.gain) * cl.output(&e);
        assert!((error_rhs(&cl, &d, &o, &zero, &e) - expected).amax() < 1e-14);
    }

    #[test]
    fn plant_jacobian_at_fixed_estimate_is_a() {
        let (cl, d, _) = reference();
        let h = 1e-6;
        let zero = DVector::zeros(4);
        let mut fd = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let mut dz = DVector::zeros(4);
            dz[j] = h;
            let col = (plant_rhs(&cl, &d, &dz, &zero) - plant_rhs(&cl, &d, &(-&dz), &zero)) / (2.0 * h);
            fd.set_column(j, &col);
        }
        assert!((fd - cl.a()).amax() < 1e-8);
    }

    #[test]
    fn jacobian_is_triangularized() {
        let (cl, d, o) = reference();
        let jac = augmented_jacobian(&cl, &d, &o);
        assert_eq!(&jac.t * jac.t_inverse(), DMatrix::identity(8, 8));
        assert!(jac.lower_left_residual() <= 1e-12);
        let upper = jac.j_tilde.view((0, 0), (4, 4)).into_owned();
        assert!((upper - cl.a()).amax() < 1e-12);
        let lower = jac.j_tilde.view((4, 4), (4, 4)).into_owned();
        assert!((lower - observer_block(&cl, &d, &o.gain)).amax() < 1e-12);
    }
}
