//! Dense kernels shared by the synthesis modules: eigenpairs, the continuous
//! Lyapunov equation, single-output pole placement and matrix norms.
//!
//! Complex arithmetic stays inside this module. Everything returned to the
//! callers that feeds a gain or a solution is real.

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::NumericError;

/// Iteration cap handed to the real Schur decomposition.
pub const SCHUR_MAX_ITER: usize = 10_000;

/// Relative threshold under which an eigenvalue's imaginary part is
/// treated as roundoff.
const REAL_SNAP: f64 = 1e-12;

/// Eigenvalues with their unit eigenvectors, paired by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPairs {
    pub values: Vec<Complex64>,
    pub vectors: Vec<DVector<Complex64>>,
    /// Set when a repeated eigenvalue has fewer independent eigenvectors
    /// than its algebraic multiplicity.
    pub defective: bool,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spectral_abscissa(&self) -> f64 {
        spectral_abscissa(&self.values)
    }
}

/// Largest real part, `-inf` for an empty spectrum.
pub fn spectral_abscissa(values: &[Complex64]) -> f64 {
    values.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max)
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<(), NumericError> {
    if !m.is_square() {
        return Err(NumericError::Contract(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(NumericError::Contract(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// Ratio of extreme singular values, `inf` for a singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues only, with conjugate pairs adjacent (positive imaginary
/// part first).
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>, NumericError> {
    check_square(m, "eigen input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(
        NumericError::NoConvergence {
            iterations: SCHUR_MAX_ITER,
            condition: condition_number(m),
        },
    )?;
    let raw = schur.complex_eigenvalues();
    let scale = m.norm().max(1.0);

    let mut reals = Vec::new();
    let mut uppers = Vec::new();
    let mut lowers = 0usize;
    for v in raw.iter() {
        if v.im.abs() <= REAL_SNAP * scale {
            reals.push(Complex64::new(v.re, 0.0));
        } else if v.im > 0.0 {
            uppers.push(*v);
        } else {
            lowers += 1;
        }
    }
    if uppers.len() != lowers {
        return Err(NumericError::Contract(
            "eigenvalues of a real matrix are not conjugate-closed".into(),
        ));
    }

    let mut out = Vec::with_capacity(n);
    out.extend(reals);
    for u in uppers {
        out.push(u);
        out.push(u.conj());
    }
    Ok(out)
}

/// Full eigendecomposition.
///
/// Eigenvalues come from nalgebra's real Schur form; each eigenvector is
/// the right singular vector of `M - λI` belonging to its smallest singular
/// value. Repeated eigenvalues take successive trailing singular vectors,
/// which gives an orthonormal basis of the eigenspace when the eigenvalue
/// is semisimple.
pub fn eig(m: &DMatrix<f64>) -> Result<EigenPairs, NumericError> {
    let values = eigenvalues(m)?;
    let n = m.nrows();
    let scale = m.norm().max(1.0);
    let cluster_tol = 1e-8 * scale;
    let null_tol = 1e-7 * scale;

    let mut vectors: Vec<Option<DVector<Complex64>>> = vec![None; n];
    let mut defective = false;

    for i in 0..n {
        if vectors[i].is_some() {
            continue;
        }
        let lambda = values[i];
        if lambda.im < 0.0 {
            // filled from the conjugate partner
            continue;
        }
        let cluster: Vec<usize> = (i..n)
            .filter(|&j| vectors[j].is_none() && (values[j] - lambda).norm() <= cluster_tol)
            .collect();

        let basis = null_basis(m, lambda, cluster.len());
        for (k, &j) in cluster.iter().enumerate() {
            let pick = if basis[k].1 <= null_tol {
                k
            } else {
                defective = true;
                0
            };
            vectors[j] = Some(basis[pick].0.clone());
        }
    }

    // conjugate partners
    for i in 0..n {
        if vectors[i].is_none() {
            let target = values[i].conj();
            let partner = (0..n)
                .filter(|&j| values[j].im > 0.0)
                .min_by(|&a, &b| {
                    (values[a] - target)
                        .norm()
                        .total_cmp(&(values[b] - target).norm())
                })
                .and_then(|j| vectors[j].clone())
                .ok_or_else(|| NumericError::Contract("missing conjugate partner".into()))?;
            vectors[i] = Some(partner.map(|c| c.conj()));
        }
    }

    Ok(EigenPairs {
        values,
        vectors: vectors.into_iter().map(|v| v.expect("filled above")).collect(),
        defective,
    })
}

/// Trailing `count` right singular vectors of `M - λI`, with their
/// singular values, smallest first.
fn null_basis(m: &DMatrix<f64>, lambda: Complex64, count: usize) -> Vec<(DVector<Complex64>, f64)> {
    let n = m.nrows();
    if lambda.im == 0.0 {
        let shifted = m - DMatrix::<f64>::identity(n, n) * lambda.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        order
            .into_iter()
            .take(count)
            .map(|k| {
                let v: DVector<Complex64> = v_t.row(k).transpose().map(|x| Complex64::new(x, 0.0));
                (normalize_phase(v), svd.singular_values[k])
            })
            .collect()
    } else {
        let shifted: DMatrix<Complex64> = m.map(|x| Complex64::new(x, 0.0))
            - DMatrix::<Complex64>::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        order
            .into_iter()
            .take(count)
            .map(|k| {
                let v: DVector<Complex64> = v_t.row(k).adjoint();
                (normalize_phase(v), svd.singular_values[k])
            })
            .collect()
    }
}

/// Unit norm, largest-modulus component real and positive.
fn normalize_phase(v: DVector<Complex64>) -> DVector<Complex64> {
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    let pivot = v
        .iter()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .copied()
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = pivot.conj() / pivot.norm();
    v.map(|c| c * phase / norm)
}

/// Largest singular value (induced 2-norm). Vectors give the Euclidean norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.norm();
    }
    m.clone().singular_values().max()
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min_sym(m: &DMatrix<f64>) -> Result<f64, NumericError> {
    check_square(m, "symmetric input")?;
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > 1e-9 * scale {
        return Err(NumericError::Contract(format!(
            "lambda_min_sym needs a symmetric matrix (asymmetry {asym:.3e})"
        )));
    }
    if m.is_empty() {
        return Ok(f64::INFINITY);
    }
    Ok(m.clone().symmetric_eigenvalues().min())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub spectral: f64,
    /// Only present for symmetric input.
    pub lambda_min_sym: Option<f64>,
}

pub fn norms(m: &DMatrix<f64>) -> Norms {
    Norms {
        spectral: spectral_norm(m),
        lambda_min_sym: lambda_min_sym(m).ok(),
    }
}

/// Solves `AᵀS + SA = -Y` through the vectorized system
/// `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(S) = -vec(Y)` and symmetrizes the result.
pub fn solve_lyapunov(a: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericError> {
    check_square(a, "A")?;
    check_square(y, "Y")?;
    let n = a.nrows();
    if y.nrows() != n {
        return Err(NumericError::Contract(format!(
            "Y is {}x{}, A is {n}x{n}",
            y.nrows(),
            y.ncols()
        )));
    }
    if max_asymmetry(y) > 1e-9 * y.amax().max(1.0) {
        return Err(NumericError::Contract("Y must be symmetric".into()));
    }

    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let kron = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(y.as_slice());
    let vec_s = kron
        .lu()
        .solve(&rhs)
        .ok_or(NumericError::Singular { context: "Lyapunov operator" })?;
    let s = DMatrix::from_column_slice(n, n, vec_s.as_slice());
    let s = (&s + s.transpose()) * 0.5;

    let residual = spectral_norm(&(&at * &s + &s * a + y));
    let tolerance = 1e-8 * spectral_norm(y).max(f64::MIN_POSITIVE);
    if !(residual <= tolerance) {
        return Err(NumericError::LyapunovResidual { residual, tolerance });
    }
    let min_eigenvalue = lambda_min_sym(&s)?;
    if !(min_eigenvalue > 0.0) {
        return Err(NumericError::NotPositiveDefinite { min_eigenvalue });
    }
    Ok(s)
}

/// `[h; hF; …; hF^{n-1}]`.
pub fn observability_matrix(f: &DMatrix<f64>, hrow: &RowDVector<f64>) -> DMatrix<f64> {
    let n = f.nrows();
    let mut o = DMatrix::<f64>::zeros(n, n);
    let mut row = hrow.clone();
    for k in 0..n {
        o.set_row(k, &row);
        row = &row * f;
    }
    o
}

/// Real coefficients `[c0, …, c_{n-1}]` of the monic polynomial with the
/// given conjugate-closed roots.
pub fn monic_poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)]; // ascending, monic
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * r;
        }
        coeffs = next;
    }
    coeffs.pop();
    coeffs.into_iter().map(|c| c.re).collect()
}

/// Checks that every root has its conjugate in the list (as a multiset).
pub fn is_conjugate_closed(roots: &[Complex64]) -> bool {
    let conj: Vec<Complex64> = roots.iter().map(|r| r.conj()).collect();
    let scale = roots.iter().map(|r| r.norm()).fold(1.0, f64::max);
    spectra_distance(roots, &conj) <= 1e-9 * scale
}

/// Ackermann output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub gain: DVector<f64>,
    /// Condition number of the observability matrix.
    pub condition: f64,
    pub warning: Option<String>,
}

/// Gain `l` with `σ(F + l·h)` equal to `desired`, by Ackermann's formula on
/// the dual single-input pair: `l = -p(F) O⁻¹ eₙ` with `p` the desired
/// characteristic polynomial and `O` the observability matrix.
pub fn place_poles_dual(
    f: &DMatrix<f64>,
    hrow: &RowDVector<f64>,
    desired: &[Complex64],
) -> Result<Placement, NumericError> {
    check_square(f, "F")?;
    let n = f.nrows();
    if hrow.len() != n {
        return Err(NumericError::Contract(format!(
            "output row has length {}, F is {n}x{n}",
            hrow.len()
        )));
    }
    if desired.len() != n {
        return Err(NumericError::Contract(format!(
            "{} desired poles for a state of dimension {n}",
            desired.len()
        )));
    }
    if !is_conjugate_closed(desired) {
        return Err(NumericError::Contract(
            "desired poles are not closed under conjugation".into(),
        ));
    }

    let o = observability_matrix(f, hrow);
    let sv = o.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smax == 0.0 || smin <= 1e-14 * smax {
        return Err(NumericError::Contract(
            "pair (F, H) is unobservable; poles cannot be placed".into(),
        ));
    }
    let condition = smax / smin;
    let warning = (condition > 1e12).then(|| {
        format!("observability matrix is ill-conditioned (condition {condition:.3e})")
    });

    let coeffs = monic_poly_from_roots(desired);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut p_of_f = eye.clone();
    for &c in coeffs.iter().rev() {
        p_of_f = &p_of_f * f + &eye * c;
    }

    let mut e_n = DVector::<f64>::zeros(n);
    e_n[n - 1] = 1.0;
    let x = o
        .lu()
        .solve(&e_n)
        .ok_or(NumericError::Singular { context: "observability matrix" })?;
    let gain = -(p_of_f * x);
    Ok(Placement { gain, condition, warning })
}

/// Bottleneck distance between two spectra of equal size: the smallest `t`
/// such that the values can be paired one-to-one with every pair within `t`.
/// Returns `inf` when the sizes differ.
pub fn spectra_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let dist: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| (x - y).norm()).collect())
        .collect();
    let mut thresholds: Vec<f64> = dist.iter().flatten().copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (mut lo, mut hi) = (0usize, thresholds.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if perfect_matching(&dist, thresholds[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    thresholds[lo]
}

/// Index pairs `(i, j)` of the bottleneck matching behind
/// [`spectra_distance`]; `None` when the lengths differ.
pub fn spectra_matching(a: &[Complex64], b: &[Complex64]) -> Option<Vec<(usize, usize)>> {
    if a.len() != b.len() {
        return None;
    }
    let t = spectra_distance(a, b);
    let dist: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| (x - y).norm()).collect())
        .collect();
    let owner = perfect_matching(&dist, t)?;
    let mut pairs: Vec<(usize, usize)> = owner
        .iter()
        .enumerate()
        .filter_map(|(j, i)| i.map(|i| (i, j)))
        .collect();
    pairs.sort_unstable();
    Some(pairs)
}

fn perfect_matching(dist: &[Vec<f64>], t: f64) -> Option<Vec<Option<usize>>> {
    let n = dist.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let mut seen = vec![false; n];
        if !augment(i, dist, t, &mut seen, &mut owner) {
            return None;
        }
    }
    Some(owner)
}

fn augment(
    i: usize,
    dist: &[Vec<f64>],
    t: f64,
    seen: &mut [bool],
    owner: &mut [Option<usize>],
) -> bool {
    for j in 0..dist.len() {
        if dist[i][j] <= t && !seen[j] {
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, dist, t, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
    }
    false
}
