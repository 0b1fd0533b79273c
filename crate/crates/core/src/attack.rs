//! Attack synthesis: the set of projection vectors that leave the induced
//! linearization unobservable, the choice of a projection outside it, the
//! stability-preserving scale factor and the resulting attack signal
//! `a(ẑ) = H̄(π)ẑ` with `H̄(π) = [2πᵀQ_p, 0]`.

use std::fmt;

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::AttackError;
use crate::model::{ClosedLoop, ControllerModel, PlantModel};
use crate::numerics;
use crate::par::{map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative smallest-singular-value threshold on the observability matrix.
    pub obs: f64,
    /// Minimum angular margin of an accepted projection vector.
    pub margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { obs: 1e-9, margin: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenSource {
    PlantEig(usize),
    ControllerEig(usize),
}

impl fmt::Display for EigenSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EigenSource::PlantEig(i) => write!(f, "plant eigenpair {i}"),
            EigenSource::ControllerEig(j) => write!(f, "controller eigenpair {j}"),
        }
    }
}

/// `{π : πᵀv = 0 for every normal v}`. A complex eigenpair contributes the
/// real and imaginary parts of its normal, so its subspace has codimension
/// up to two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenSubspace {
    pub normals: Vec<DVector<f64>>,
    pub source: EigenSource,
    pub eigenvalue: Complex64,
}

impl ForbiddenSubspace {
    /// Number of linearly independent normals.
    pub fn codimension(&self) -> usize {
        if self.normals.is_empty() {
            return 0;
        }
        let m = DMatrix::from_columns(&self.normals);
        let sv = m.singular_values();
        let max = sv.max();
        sv.iter().filter(|&&s| s > 1e-10 * max).count()
    }

    /// Largest `|πᵀv| / (‖π‖‖v‖)` over the normals; zero means `π` lies in
    /// the subspace.
    pub fn margin(&self, pi: &DVector<f64>) -> f64 {
        let pn = pi.norm();
        if pn == 0.0 {
            return 0.0;
        }
        self.normals
            .iter()
            .map(|v| pi.dot(v).abs() / (pn * v.norm()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenSet {
    pub subspaces: Vec<ForbiddenSubspace>,
    /// Vacuous constraints that were dropped, and eigensolver warnings.
    pub notes: Vec<String>,
}

impl ForbiddenSet {
    /// Smallest margin over all subspaces; `1` when the set is empty.
    pub fn margin(&self, pi: &DVector<f64>) -> f64 {
        if pi.norm() == 0.0 {
            return 0.0;
        }
        self.subspaces.iter().map(|s| s.margin(pi)).fold(1.0, f64::min)
    }

    /// True when every subspace is the origin alone, i.e. only `π = 0` is
    /// forbidden.
    pub fn only_origin(&self, n_p: usize) -> bool {
        self.subspaces.iter().all(|s| s.codimension() == n_p)
    }
}

fn split_normal(
    v: &DVector<Complex64>,
    complex: bool,
    zero_tol: f64,
) -> Vec<DVector<f64>> {
    let re = v.map(|c| c.re);
    let mut out = Vec::new();
    if re.norm() > zero_tol {
        out.push(re);
    }
    if complex {
        let im = v.map(|c| c.im);
        if im.norm() > zero_tol {
            out.push(im);
        }
    }
    out
}

/// Normals from `Q_p w_p` for plant eigenpairs and from
/// `Q_p (λ_c I - A_p)⁻¹ B_p C_c w_c` for controller eigenpairs. One entry
/// per conjugate pair; vacuous (zero) normals are dropped with a note.
pub fn forbidden_set(
    plant: &PlantModel,
    controller: &ControllerModel,
) -> Result<ForbiddenSet, AttackError> {
    let n_p = plant.n();
    let q_p = plant.q_p().map(|x| Complex64::new(x, 0.0));
    let zero_tol = 1e-12 * numerics::spectral_norm(plant.q_p());
    let mut subspaces = Vec::new();
    let mut notes = Vec::new();

    let plant_pairs = numerics::eig(plant.a_p())?;
    if plant_pairs.defective {
        notes.push("A_p is defective; only returned eigenvectors are used".into());
    }
    for (i, (lambda, w)) in plant_pairs.values.iter().zip(&plant_pairs.vectors).enumerate() {
        if lambda.im < 0.0 {
            continue;
        }
        let source = EigenSource::PlantEig(i);
        let normals = split_normal(&(&q_p * w), lambda.im > 0.0, zero_tol);
        if normals.is_empty() {
            notes.push(format!("{source} (λ = {lambda}): Q_p w = 0, constraint vacuous"));
        } else {
            subspaces.push(ForbiddenSubspace { normals, source, eigenvalue: *lambda });
        }
    }

    let ctrl_pairs = numerics::eig(controller.a_c())?;
    if ctrl_pairs.defective {
        notes.push("A_c is defective; only returned eigenvectors are used".into());
    }
    let coupling = (plant.b_p() * controller.c_c()).map(|x| Complex64::new(x, 0.0));
    let a_p = plant.a_p().map(|x| Complex64::new(x, 0.0));
    for (j, (lambda, w_c)) in ctrl_pairs.values.iter().zip(&ctrl_pairs.vectors).enumerate() {
        if lambda.im < 0.0 {
            continue;
        }
        let source = EigenSource::ControllerEig(j);
        let shifted = DMatrix::<Complex64>::identity(n_p, n_p) * *lambda - &a_p;
        let cond_ok = shifted.clone().singular_values().min()
            > 1e-12 * shifted.clone().singular_values().max().max(1.0);
        let w_p = shifted
            .lu()
            .solve(&(&coupling * w_c))
            .filter(|_| cond_ok)
            .ok_or_else(|| {
                AttackError::Assumption(format!(
                    "(λ I - A_p) is singular at controller eigenvalue {lambda}"
                ))
            })?;
        let normals = split_normal(&(&q_p * w_p), lambda.im > 0.0, zero_tol);
        if normals.is_empty() {
            notes.push(format!("{source} (λ = {lambda}): normal vanishes, constraint vacuous"));
        } else {
            subspaces.push(ForbiddenSubspace { normals, source, eigenvalue: *lambda });
        }
    }

    Ok(ForbiddenSet { subspaces, notes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityCheck {
    pub observable: bool,
    /// Smallest new-direction residual of the orthogonalized Krylov
    /// sequence `H, HF, …`, relative to `‖F‖`.
    pub margin: f64,
    /// `σ_min / σ_max` of `[H; HF; …; HF^{n-1}]`, reported only: it falls
    /// below any fixed threshold for well-observable pairs once `n` is large.
    pub krylov_ratio: f64,
}

/// Rank of `[H; HF; …; HF^{n-1}]` via an orthonormal basis of the row
/// Krylov space (Arnoldi with reorthogonalization). The pair is observable
/// when every step adds a direction of relative size above `tol_obs`.
pub fn is_observable(f: &DMatrix<f64>, hrow: &RowDVector<f64>, tol_obs: f64) -> ObservabilityCheck {
    let n = f.nrows();
    let krylov_ratio = {
        let sv = numerics::observability_matrix(f, hrow).singular_values();
        let max = sv.max();
        if max > 0.0 && max.is_finite() { sv.min() / max } else { 0.0 }
    };
    let h_norm = hrow.norm();
    if !(h_norm > 0.0 && h_norm.is_finite()) {
        return ObservabilityCheck { observable: false, margin: 0.0, krylov_ratio };
    }
    let f_norm = numerics::spectral_norm(f);
    let scale = if f_norm > 0.0 { f_norm } else { 1.0 };
    let mut basis: Vec<RowDVector<f64>> = vec![hrow / h_norm];
    let mut margin = 1.0f64;
    for _ in 1..n {
        let mut w = basis.last().expect("basis is non-empty") * f;
        for _ in 0..2 {
            for u in &basis {
                let c = w.dot(u);
                w -= u * c;
            }
        }
        let size = w.norm();
        margin = margin.min(size / scale);
        if !(size > 0.0) {
            break;
        }
        basis.push(w / size);
    }
    ObservabilityCheck { observable: margin > tol_obs, margin, krylov_ratio }
}

/// `H̄(π) = [2πᵀQ_p, 0]` and `F̄(π) = A + B·H̄(π)`.
pub fn induced_pair(cl: &ClosedLoop, pi: &DVector<f64>) -> (RowDVector<f64>, DMatrix<f64>) {
    let mut hbar = RowDVector::<f64>::zeros(cl.n());
    let head = (cl.q_p() * pi).transpose() * 2.0;
    hbar.columns_mut(0, cl.n_p()).copy_from(&head);
    let fbar = cl.a() + cl.b() * &hbar;
    (hbar, fbar)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiStrategy {
    User(Vec<f64>),
    Sampled { seed: u64, candidates: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiChoice {
    pub pi_star: DVector<f64>,
    pub margin: f64,
    pub observability_margin: f64,
    /// Index of the winning sample, for the sampled strategy.
    pub candidate: Option<usize>,
}

/// Picks `π*` outside every forbidden subspace. The induced pair at
/// `π = π*` must also pass [`is_observable`].
pub fn choose_pi_star(
    cl: &ClosedLoop,
    forbidden: &ForbiddenSet,
    strategy: &PiStrategy,
    tol: Tolerances,
    execution: Execution,
) -> Result<PiChoice, AttackError> {
    let n_p = cl.n_p();
    match strategy {
        PiStrategy::User(values) => {
            if values.len() != n_p {
                return Err(AttackError::ProjectionLength { expected: n_p, found: values.len() });
            }
            let pi = DVector::from_column_slice(values);
            if pi.norm() == 0.0 {
                return Err(AttackError::ForbiddenProjection {
                    source_tag: "the origin".into(),
                    margin: 0.0,
                });
            }
            if let Some(bad) = forbidden.subspaces.iter().find(|s| s.margin(&pi) <= tol.margin) {
                return Err(AttackError::ForbiddenProjection {
                    source_tag: bad.source.to_string(),
                    margin: bad.margin(&pi),
                });
            }
            let (hbar, fbar) = induced_pair(cl, &pi);
            let obs = is_observable(&fbar, &hbar, tol.obs);
            if !obs.observable {
                return Err(AttackError::Unobservable { margin: obs.margin });
            }
            Ok(PiChoice {
                margin: forbidden.margin(&pi),
                pi_star: pi,
                observability_margin: obs.margin,
                candidate: None,
            })
        }
        PiStrategy::Sampled { seed, candidates } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let samples: Vec<DVector<f64>> = (0..*candidates)
                .map(|_| {
                    let v = DVector::from_fn(n_p, |_, _| StandardNormal.sample(&mut rng));
                    let norm: f64 = v.norm();
                    if norm > 0.0 { v / norm } else { v }
                })
                .collect();
            let scored = map_indexed(samples.len(), execution, |k| {
                let pi = &samples[k];
                let margin = forbidden.margin(pi);
                let (hbar, fbar) = induced_pair(cl, pi);
                (margin, is_observable(&fbar, &hbar, tol.obs))
            });
            let mut best: Option<usize> = None;
            for (k, (margin, obs)) in scored.iter().enumerate() {
                if !obs.observable || *margin <= tol.margin {
                    continue;
                }
                if best.is_none_or(|b| *margin > scored[b].0) {
                    best = Some(k);
                }
            }
            let k = best.ok_or(AttackError::NoAdmissibleCandidate { candidates: *candidates })?;
            Ok(PiChoice {
                pi_star: samples[k].clone(),
                margin: scored[k].0,
                observability_margin: scored[k].1.margin,
                candidate: Some(k),
            })
        }
    }
}

/// Upper limit on γ keeping `F̄(γπ*)` Hurwitz:
/// `λ_min(Y) / (4‖SB‖‖Q_pπ*‖)` with `AᵀS + SA = -Y`.
pub fn gamma_max(cl: &ClosedLoop, pi_star: &DVector<f64>, y: &DMatrix<f64>) -> Result<f64, AttackError> {
    let qp_pi = (cl.q_p() * pi_star).norm();
    if qp_pi == 0.0 {
        return Err(AttackError::AnnihilatedProjection);
    }
    let s = numerics::solve_lyapunov(cl.a(), y)?;
    let sb = (&s * cl.b()).norm();
    let lambda_min = numerics::lambda_min_sym(y)?;
    Ok(lambda_min / (4.0 * sb * qp_pi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDesign {
    pub pi_star: DVector<f64>,
    pub gamma: f64,
    pub gamma_max: f64,
    pub pi: DVector<f64>,
    pub hbar: RowDVector<f64>,
    pub fbar: DMatrix<f64>,
    pub forbidden: ForbiddenSet,
    pub observability_margin: f64,
    pub fbar_abscissa: f64,
}

impl AttackDesign {
    /// Assembles a design from `π = γπ*` without verifying it.
    pub fn from_projection(
        cl: &ClosedLoop,
        pi_star: DVector<f64>,
        gamma: f64,
        gamma_max: f64,
        forbidden: ForbiddenSet,
        tol_obs: f64,
    ) -> Result<Self, AttackError> {
        let pi = &pi_star * gamma;
        let (hbar, fbar) = induced_pair(cl, &pi);
        let observability_margin = is_observable(&fbar, &hbar, tol_obs).margin;
        let fbar_abscissa = numerics::spectral_abscissa(&numerics::eigenvalues(&fbar)?);
        Ok(Self {
            pi_star,
            gamma,
            gamma_max,
            pi,
            hbar,
            fbar,
            forbidden,
            observability_margin,
            fbar_abscissa,
        })
    }

    /// `a(ẑ) = H̄ẑ = 2πᵀQ_p ẑ_p`.
    pub fn attack_signal(&self, zhat: &DVector<f64>) -> f64 {
        self.hbar.dot(&zhat.transpose())
    }

    pub fn is_observable(&self, tol_obs: f64) -> bool {
        self.observability_margin > tol_obs
    }
}

/// `γ = γ_fraction · γ_max`, `π = γπ*`, then checks that `F̄` is Hurwitz
/// and `(F̄, H̄)` observable.
pub fn build_design(
    cl: &ClosedLoop,
    forbidden: ForbiddenSet,
    pi_star: &DVector<f64>,
    gamma_fraction: f64,
    y: &DMatrix<f64>,
    tol: Tolerances,
) -> Result<AttackDesign, AttackError> {
    if !(gamma_fraction > 0.0 && gamma_fraction < 1.0) {
        return Err(AttackError::GammaFraction(gamma_fraction));
    }
    let g_max = gamma_max(cl, pi_star, y)?;
    let design = AttackDesign::from_projection(
        cl,
        pi_star.clone(),
        gamma_fraction * g_max,
        g_max,
        forbidden,
        tol.obs,
    )?;
    if !(design.fbar_abscissa < 0.0) {
        return Err(AttackError::Consistency(format!(
            "F̄ is not Hurwitz (spectral abscissa {:.3e})",
            design.fbar_abscissa
        )));
    }
    if !design.is_observable(tol.obs) {
        return Err(AttackError::Consistency(format!(
            "(F̄, H̄) unobservable (margin {:.3e})",
            design.observability_margin
        )));
    }
    Ok(design)
}
