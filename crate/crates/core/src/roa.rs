//! Region-of-attraction estimate for the coupled `(z, e)` system.
//!
//! With `F̄ᵀP₁ + P₁F̄ = -W₁` and `(F̄+LH̄)ᵀP₂ + P₂(F̄+LH̄) = -W₂`, the function
//! `V = zᵀP₁z + eᵀP₂e` satisfies `V̇ ≤ -c₂V + c₄V^{3/2}`, so every sublevel
//! set `V ≤ ((c₂-δ)/c₄)²` with `0 < δ < c₂` is forward invariant and
//! `V̇ ≤ -δV` holds inside it.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attack::AttackDesign;
use crate::error::RoaError;
use crate::model::ClosedLoop;
use crate::numerics::{self, lambda_min_sym, spectral_norm};
use crate::observer::{self, ObserverDesign};
use crate::par::{map_indexed, Execution};
use crate::sim::{CoupledSystem, SimOptions};

/// Relative slack on `V̇ ≤ -δV` absorbing integration and rounding error.
pub const TOL_DECAY: f64 = 1e-9;
/// Norm treated as divergence inside the Monte Carlo checks.
pub const MC_DIVERGENCE_NORM: f64 = 1e6;
/// Convergence threshold on `‖(z,e)(T)‖ / ‖(z,e)(0)‖` in the box check.
pub const BOX_CONVERGENCE_RATIO: f64 = 1e-3;
const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum RoaLevel {
    Bounded(f64),
    /// `c₄ = 0`: no quadratic term, the bound places no limit on `V`.
    Unbounded,
}

impl RoaLevel {
    pub fn value(&self) -> f64 {
        match self {
            RoaLevel::Bounded(v) => *v,
            RoaLevel::Unbounded => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaEstimate {
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub feasible: bool,
    pub delta: Option<f64>,
    pub level: Option<RoaLevel>,
    pub notes: Vec<String>,
}

/// Solves the two Lyapunov equations; both `F̄` and `F̄+LH̄` must be Hurwitz.
pub fn lyapunov_pairs(
    design: &AttackDesign,
    obs: &ObserverDesign,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), RoaError> {
    let fbar_abscissa = numerics::spectral_abscissa(&numerics::eigenvalues(&design.fbar)?);
    if !(fbar_abscissa < 0.0) {
        return Err(RoaError::NotHurwitz { which: "F̄", abscissa: fbar_abscissa });
    }
    let block = observer::error_block(design, &obs.gain);
    let block_abscissa = numerics::spectral_abscissa(&numerics::eigenvalues(&block)?);
    if !(block_abscissa < 0.0) {
        return Err(RoaError::NotHurwitz { which: "F̄ + LH̄", abscissa: block_abscissa });
    }
    let p1 = numerics::solve_lyapunov(&design.fbar, w1)?;
    let p2 = numerics::solve_lyapunov(&block, w2)?;
    Ok((p1, p2))
}

/// The three constants `c₁`, `c₃(π)`, `c₄` with spectral norms, and
/// `c₂ = c₁ - c₃`.
#[allow(clippy::too_many_arguments)]
pub fn roa_constants(
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    b: &DVector<f64>,
    gain: &DVector<f64>,
    q: &DMatrix<f64>,
    hbar: &RowDVector<f64>,
) -> Result<RoaEstimate, RoaError> {
    let w_min = lambda_min_sym(w1)?.min(lambda_min_sym(w2)?);
    let p_max = spectral_norm(p1).max(spectral_norm(p2));
    let c1 = w_min / p_max;

    let lam1 = lambda_min_sym(p1)?;
    let lam2 = lambda_min_sym(p2)?;
    let b_plus_l = b + gain;
    let cross = 2.0 * spectral_norm(&(p1 * b * hbar))
        + 2.0 * spectral_norm(&(hbar.transpose() * b_plus_l.transpose() * p2));
    let c3 = cross / (lam1 * lam2).sqrt();

    let q_norm = spectral_norm(q);
    let p1b = (p1 * b).norm();
    let p2bl = (p2 * &b_plus_l).norm();
    let c4 = 2.0 * p1b * q_norm / lam1.powf(1.5)
        + 4.0 * p2bl * q_norm / (lam1.sqrt() * lam2)
        + 2.0 * p2bl * q_norm / lam2.powf(1.5);

    let c2 = c1 - c3;
    Ok(RoaEstimate {
        p1: p1.clone(),
        p2: p2.clone(),
        w1: w1.clone(),
        w2: w2.clone(),
        c1,
        c2,
        c3,
        c4,
        feasible: c2 > 0.0,
        delta: None,
        level: None,
        notes: Vec::new(),
    })
}

/// Sets `δ` and the sublevel value `((c₂-δ)/c₄)²`.
pub fn roa_level(estimate: &RoaEstimate, delta: f64) -> Result<RoaEstimate, RoaError> {
    if !estimate.feasible {
        return Err(RoaError::Infeasible { c2: estimate.c2 });
    }
    if !(delta > 0.0 && delta < estimate.c2) {
        return Err(RoaError::Delta { delta, c2: estimate.c2 });
    }
    let mut out = estimate.clone();
    out.delta = Some(delta);
    if estimate.c4 == 0.0 {
        out.level = Some(RoaLevel::Unbounded);
        out.notes
            .push("c4 = 0: no quadratic term, the sublevel bound is unbounded".into());
    } else {
        out.level = Some(RoaLevel::Bounded(((estimate.c2 - delta) / estimate.c4).powi(2)));
    }
    Ok(out)
}

/// `zᵀP₁z + eᵀP₂e`.
pub fn lyapunov_value(p1: &DMatrix<f64>, p2: &DMatrix<f64>, z: &DVector<f64>, e: &DVector<f64>) -> f64 {
    z.dot(&(p1 * z)) + e.dot(&(p2 * e))
}

/// Outcome of the full certification step. An infeasible certificate is
/// data, not an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaCertificate {
    pub fbar_abscissa: f64,
    pub error_block_abscissa: f64,
    pub estimate: Option<RoaEstimate>,
    pub feasible: bool,
    pub reason: Option<String>,
}

/// Lyapunov pairs, constants and level with `δ = delta_fraction · c₂`.
pub fn certify(
    cl: &ClosedLoop,
    design: &AttackDesign,
    obs: &ObserverDesign,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    delta_fraction: f64,
) -> Result<RoaCertificate, RoaError> {
    let fbar_abscissa = numerics::spectral_abscissa(&numerics::eigenvalues(&design.fbar)?);
    let error_block_abscissa = numerics::spectral_abscissa(&numerics::eigenvalues(
        &observer::error_block(design, &obs.gain),
    )?);
    let (p1, p2) = match lyapunov_pairs(design, obs, w1, w2) {
        Ok(pair) => pair,
        Err(err @ RoaError::NotHurwitz { .. }) => {
            return Ok(RoaCertificate {
                fbar_abscissa,
                error_block_abscissa,
                estimate: None,
                feasible: false,
                reason: Some(err.to_string()),
            })
        }
        Err(err) => return Err(err),
    };
    let estimate = roa_constants(&p1, &p2, w1, w2, cl.b(), &obs.gain, cl.q(), &design.hbar)?;
    if !estimate.feasible {
        return Ok(RoaCertificate {
            fbar_abscissa,
            error_block_abscissa,
            reason: Some(format!(
                "c2 = c1 - c3 = {:.6} - {:.6} = {:.6} <= 0; retune the observer gain or W1/W2",
                estimate.c1, estimate.c3, estimate.c2
            )),
            estimate: Some(estimate),
            feasible: false,
        });
    }
    let delta = delta_fraction * estimate.c2;
    let estimate = roa_level(&estimate, delta)?;
    Ok(RoaCertificate {
        fbar_abscissa,
        error_block_abscissa,
        estimate: Some(estimate),
        feasible: true,
        reason: None,
    })
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Uniform sample of `{φ : φᵀPφ ≤ level}` with `P = blockdiag(P₁, P₂)`:
/// a uniform point of the unit ball mapped through the Cholesky factor.
fn sample_sublevel(
    chol_t: &DMatrix<f64>,
    level: f64,
    rng: &mut ChaCha8Rng,
    accept: impl Fn(&DVector<f64>) -> bool,
) -> Result<DVector<f64>, RoaError> {
    let dim = chol_t.nrows();
    for _ in 0..MAX_REJECTIONS {
        let g = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let norm: f64 = g.norm();
        if norm == 0.0 {
            continue;
        }
        let radius = rng.random::<f64>().powf(1.0 / dim as f64);
        let y = g * (level.sqrt() * radius / norm);
        let Some(phi) = chol_t.solve_upper_triangular(&y) else {
            break;
        };
        if accept(&phi) {
            return Ok(phi);
        }
    }
    Err(RoaError::Sampler(format!(
        "sublevel set V <= {level:.3e} after {MAX_REJECTIONS} rejections"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub index: usize,
    pub initial_v: f64,
    pub satisfied: bool,
    /// Smallest `(-δV - V̇)/V` seen along the trajectory.
    pub worst_margin: f64,
    pub stayed_inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub delta: f64,
    pub level: f64,
    pub n_samples: usize,
    pub satisfied: usize,
    pub fraction: f64,
    pub worst_margin: f64,
    pub all_stayed_inside: bool,
    pub samples: Vec<DecaySample>,
}

/// Simulates `n_samples` trajectories started uniformly inside the
/// sublevel set and checks `V̇ ≤ -δV + TOL_DECAY·V` at every step, with
/// `V̇ = 2zᵀP₁ż + 2eᵀP₂ė` evaluated from the right-hand sides.
#[allow(clippy::too_many_arguments)]
pub fn verify_decay(
    cl: &ClosedLoop,
    design: &AttackDesign,
    obs: &ObserverDesign,
    estimate: &RoaEstimate,
    n_samples: usize,
    seed: u64,
    opts: &SimOptions,
    execution: Execution,
) -> Result<DecayReport, RoaError> {
    let delta = estimate
        .delta
        .ok_or_else(|| RoaError::Sampler("estimate has no delta".into()))?;
    let level = match estimate.level {
        Some(RoaLevel::Bounded(v)) => v,
        Some(RoaLevel::Unbounded) => {
            return Err(RoaError::Sampler("an unbounded sublevel set".into()))
        }
        None => return Err(RoaError::Sampler("estimate has no level".into())),
    };
    let steps = opts
        .validate()
        .map_err(|e| RoaError::Sampler(e.to_string()))?;
    let n = cl.n();
    let mut p = DMatrix::<f64>::zeros(2 * n, 2 * n);
    p.view_mut((0, 0), (n, n)).copy_from(&estimate.p1);
    p.view_mut((n, n), (n, n)).copy_from(&estimate.p2);
    let chol_t = p
        .clone()
        .cholesky()
        .ok_or(RoaError::Numeric(crate::error::NumericError::NotPositiveDefinite {
            min_eigenvalue: lambda_min_sym(&p).unwrap_or(f64::NAN),
        }))?
        .l()
        .transpose();
    let v_of = |phi: &DVector<f64>| phi.dot(&(&p * phi));

    let initial: Vec<DVector<f64>> = (0..n_samples)
        .map(|i| sample_sublevel(&chol_t, level, &mut sample_rng(seed, i), |phi| v_of(phi) <= level))
        .collect::<Result<_, _>>()?;

    let sys = CoupledSystem::new(cl, design, obs);
    let samples = map_indexed(n_samples, execution, |i| {
        let phi0 = &initial[i];
        let z0 = phi0.rows(0, n).into_owned();
        let e0 = phi0.rows(n, n).into_owned();
        let mut x = sys.stack(&z0, &(&z0 + &e0)).expect("dimensions match");
        let mut worst = f64::INFINITY;
        let mut inside = true;
        let mut satisfied = true;
        for k in 0..=steps {
            if k > 0 {
                x = sys.rk4_step(&x, opts.dt);
            }
            if k % opts.stride != 0 && k != steps {
                continue;
            }
            let z = x.rows(0, n).into_owned();
            let zhat = x.rows(n, n).into_owned();
            let e = &zhat - &z;
            let v = lyapunov_value(&estimate.p1, &estimate.p2, &z, &e);
            if !v.is_finite() || x.norm() > MC_DIVERGENCE_NORM {
                satisfied = false;
                worst = f64::NEG_INFINITY;
                inside = false;
                break;
            }
            if v == 0.0 {
                continue;
            }
            let zdot = observer::plant_rhs(cl, design, &z, &zhat);
            let edot = observer::error_rhs(cl, design, obs, &z, &e);
            let vdot = 2.0 * z.dot(&(&estimate.p1 * zdot)) + 2.0 * e.dot(&(&estimate.p2 * edot));
            let margin = (-delta * v - vdot) / v;
            worst = worst.min(margin);
            if margin < -TOL_DECAY {
                satisfied = false;
            }
            if v > level * (1.0 + 1e-9) {
                inside = false;
            }
        }
        DecaySample {
            index: i,
            initial_v: v_of(phi0),
            satisfied,
            worst_margin: worst,
            stayed_inside: inside,
        }
    });

    let satisfied = samples.iter().filter(|s| s.satisfied).count();
    Ok(DecayReport {
        delta,
        level,
        n_samples,
        satisfied,
        fraction: if n_samples == 0 { 1.0 } else { satisfied as f64 / n_samples as f64 },
        worst_margin: samples.iter().map(|s| s.worst_margin).fold(f64::INFINITY, f64::min),
        all_stayed_inside: samples.iter().all(|s| s.stayed_inside),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSample {
    pub index: usize,
    pub converged: bool,
    pub final_ratio: f64,
    pub max_norm: f64,
    pub diverged_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxReport {
    pub halfwidth: f64,
    pub horizon: f64,
    pub n_samples: usize,
    pub converged: usize,
    pub fraction: f64,
    pub diverged: usize,
    pub max_transient_norm: f64,
    pub worst_final_ratio: f64,
    pub samples: Vec<BoxSample>,
}

/// Samples `(z₀, ẑ₀)` uniformly in `[-h, h]^{2n}` and counts trajectories
/// whose `‖(z, e)‖` shrinks below `BOX_CONVERGENCE_RATIO` of its initial
/// value by the horizon.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_box_check(
    cl: &ClosedLoop,
    design: &AttackDesign,
    obs: &ObserverDesign,
    halfwidth: f64,
    n_samples: usize,
    opts: &SimOptions,
    seed: u64,
    execution: Execution,
) -> Result<BoxReport, RoaError> {
    let steps = opts
        .validate()
        .map_err(|e| RoaError::Sampler(e.to_string()))?;
    if !(halfwidth >= 0.0 && halfwidth.is_finite()) {
        return Err(RoaError::Sampler(format!("a box of halfwidth {halfwidth}")));
    }
    let n = cl.n();
    let sys = CoupledSystem::new(cl, design, obs);
    let ze_norm = |x: &DVector<f64>| {
        let z = x.rows(0, n);
        let e = x.rows(n, n) - z;
        (z.norm_squared() + e.norm_squared()).sqrt()
    };

    let samples = map_indexed(n_samples, execution, |i| {
        let mut rng = sample_rng(seed, i);
        let mut x = DVector::from_fn(2 * n, |_, _| {
            if halfwidth == 0.0 {
                0.0
            } else {
                rng.random_range(-halfwidth..=halfwidth)
            }
        });
        let initial = ze_norm(&x);
        let mut max_norm = initial;
        let mut diverged_at = None;
        for k in 1..=steps {
            x = sys.rk4_step(&x, opts.dt);
            let norm = ze_norm(&x);
            if !(norm <= MC_DIVERGENCE_NORM) {
                diverged_at = Some(k as f64 * opts.dt);
                max_norm = f64::INFINITY;
                break;
            }
            max_norm = max_norm.max(norm);
        }
        let final_norm = if diverged_at.is_some() { f64::INFINITY } else { ze_norm(&x) };
        let final_ratio = if initial == 0.0 {
            if final_norm == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            final_norm / initial
        };
        BoxSample {
            index: i,
            converged: diverged_at.is_none() && final_ratio < BOX_CONVERGENCE_RATIO,
            final_ratio,
            max_norm,
            diverged_at,
        }
    });

    let converged = samples.iter().filter(|s| s.converged).count();
    Ok(BoxReport {
        halfwidth,
        horizon: opts.horizon,
        n_samples,
        converged,
        fraction: if n_samples == 0 { 1.0 } else { converged as f64 / n_samples as f64 },
        diverged: samples.iter().filter(|s| s.diverged_at.is_some()).count(),
        max_transient_norm: samples.iter().map(|s| s.max_norm).fold(0.0, f64::max),
        worst_final_ratio: samples.iter().map(|s| s.final_ratio).fold(0.0, f64::max),
        samples,
    })
}
