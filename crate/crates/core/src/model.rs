//! Plant, controller and the assembled closed loop `ż = Az + B·zᵀQz`.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, NumericError};
use crate::numerics;

/// Absolute asymmetry accepted (and symmetrized away) in `Q_p`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Spectral abscissa of `A` must lie strictly below `-TOL_HURWITZ`.
pub const TOL_HURWITZ: f64 = 1e-9;
/// Minimum plant/controller eigenvalue gap and `‖B_p C_c‖`.
pub const TOL_GAP: f64 = 1e-9;

fn check_finite(field: &'static str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(ModelError::NonFinite { field, row: i, col: j });
            }
        }
    }
    Ok(())
}

fn check_shape(
    field: &'static str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), ModelError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(ModelError::Dimension {
            field,
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    check_finite(field, m)
}

/// `ẋ_p = A_p x_p + B_p u`, `y = x_pᵀ Q_p x_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    a_p: DMatrix<f64>,
    b_p: DVector<f64>,
    q_p: DMatrix<f64>,
}

impl PlantModel {
    /// Validates shapes and finiteness; `Q_p` is symmetrized when its
    /// asymmetry is at most [`SYMMETRY_TOL`] and rejected otherwise.
    pub fn new(a_p: DMatrix<f64>, b_p: DVector<f64>, q_p: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = a_p.nrows();
        if n == 0 {
            return Err(ModelError::Empty { field: "A_p" });
        }
        check_shape("A_p", &a_p, n, n)?;
        check_shape("B_p", &DMatrix::from_column_slice(b_p.len(), 1, b_p.as_slice()), n, 1)?;
        check_shape("Q_p", &q_p, n, n)?;
        let asymmetry = (&q_p - q_p.transpose()).amax();
        if asymmetry > SYMMETRY_TOL {
            return Err(ModelError::Asymmetric { asymmetry });
        }
        let q_p = (&q_p + q_p.transpose()) * 0.5;
        Ok(Self { a_p, b_p, q_p })
    }

    pub fn n(&self) -> usize {
        self.a_p.nrows()
    }

    pub fn a_p(&self) -> &DMatrix<f64> {
        &self.a_p
    }

    pub fn b_p(&self) -> &DVector<f64> {
        &self.b_p
    }

    pub fn q_p(&self) -> &DMatrix<f64> {
        &self.q_p
    }
}

/// `ẋ_c = A_c x_c + B_c y`, `u = C_c x_c + D_c y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerModel {
    a_c: DMatrix<f64>,
    b_c: DVector<f64>,
    c_c: RowDVector<f64>,
    d_c: f64,
}

impl ControllerModel {
    pub fn new(
        a_c: DMatrix<f64>,
        b_c: DVector<f64>,
        c_c: RowDVector<f64>,
        d_c: f64,
    ) -> Result<Self, ModelError> {
        let n = a_c.nrows();
        if n == 0 {
            return Err(ModelError::Empty { field: "A_c" });
        }
        check_shape("A_c", &a_c, n, n)?;
        check_shape("B_c", &DMatrix::from_column_slice(b_c.len(), 1, b_c.as_slice()), n, 1)?;
        check_shape("C_c", &DMatrix::from_row_slice(1, c_c.len(), c_c.as_slice()), 1, n)?;
        if !d_c.is_finite() {
            return Err(ModelError::NonFinite { field: "D_c", row: 0, col: 0 });
        }
        Ok(Self { a_c, b_c, c_c, d_c })
    }

    pub fn n(&self) -> usize {
        self.a_c.nrows()
    }

    pub fn a_c(&self) -> &DMatrix<f64> {
        &self.a_c
    }

    pub fn b_c(&self) -> &DVector<f64> {
        &self.b_c
    }

    pub fn c_c(&self) -> &RowDVector<f64> {
        &self.c_c
    }

    pub fn d_c(&self) -> f64 {
        self.d_c
    }
}

/// The feedback interconnection in the stacked state `z = [x_p; x_c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    a: DMatrix<f64>,
    b: DVector<f64>,
    q: DMatrix<f64>,
    n_p: usize,
    n_c: usize,
}

/// The blocks a [`ClosedLoop`] was assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub a_p: DMatrix<f64>,
    pub bp_cc: DMatrix<f64>,
    pub lower_left: DMatrix<f64>,
    pub a_c: DMatrix<f64>,
    pub bp_dc: DVector<f64>,
    pub b_c: DVector<f64>,
    pub q_p: DMatrix<f64>,
}

impl ClosedLoop {
    /// `A = [[A_p, B_p C_c], [0, A_c]]`, `B = [B_p D_c; B_c]`,
    /// `Q = blockdiag(Q_p, 0)`.
    pub fn assemble(plant: &PlantModel, controller: &ControllerModel) -> Self {
        let (n_p, n_c) = (plant.n(), controller.n());
        let n = n_p + n_c;
        let bp_cc = plant.b_p() * controller.c_c();

        let mut a = DMatrix::<f64>::zeros(n, n);
        a.view_mut((0, 0), (n_p, n_p)).copy_from(plant.a_p());
        a.view_mut((0, n_p), (n_p, n_c)).copy_from(&bp_cc);
        a.view_mut((n_p, n_p), (n_c, n_c)).copy_from(controller.a_c());

        let mut b = DVector::<f64>::zeros(n);
        b.rows_mut(0, n_p).copy_from(&(plant.b_p() * controller.d_c()));
        b.rows_mut(n_p, n_c).copy_from(controller.b_c());

        let mut q = DMatrix::<f64>::zeros(n, n);
        q.view_mut((0, 0), (n_p, n_p)).copy_from(plant.q_p());

        Self { a, b, q, n_p, n_c }
    }

    /// Builds a loop directly from `(A, B, Q)`; `Q` must vanish outside its
    /// leading `n_p × n_p` block.
    pub fn from_parts(
        a: DMatrix<f64>,
        b: DVector<f64>,
        q: DMatrix<f64>,
        n_p: usize,
    ) -> Result<Self, ModelError> {
        let n = a.nrows();
        if n_p == 0 || n_p >= n {
            return Err(ModelError::Dimension {
                field: "n_p",
                expected: format!("1..{n}"),
                found: n_p.to_string(),
            });
        }
        check_shape("A", &a, n, n)?;
        check_shape("B", &DMatrix::from_column_slice(b.len(), 1, b.as_slice()), n, 1)?;
        check_shape("Q", &q, n, n)?;
        let outside = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i >= n_p || j >= n_p)
            .any(|(i, j)| q[(i, j)] != 0.0);
        if outside {
            return Err(ModelError::Dimension {
                field: "Q",
                expected: "zero outside the plant block".into(),
                found: "nonzero controller entries".into(),
            });
        }
        let asymmetry = (&q - q.transpose()).amax();
        if asymmetry > SYMMETRY_TOL {
            return Err(ModelError::Asymmetric { asymmetry });
        }
        Ok(Self { a, b, q, n_p, n_c: n - n_p })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n(&self) -> usize {
        self.n_p + self.n_c
    }

    pub fn q_p(&self) -> DMatrix<f64> {
        self.q.view((0, 0), (self.n_p, self.n_p)).into_owned()
    }

    pub fn decompose(&self) -> Blocks {
        let (p, c) = (self.n_p, self.n_c);
        Blocks {
            a_p: self.a.view((0, 0), (p, p)).into_owned(),
            bp_cc: self.a.view((0, p), (p, c)).into_owned(),
            lower_left: self.a.view((p, 0), (c, p)).into_owned(),
            a_c: self.a.view((p, p), (c, c)).into_owned(),
            bp_dc: self.b.rows(0, p).into_owned(),
            b_c: self.b.rows(p, c).into_owned(),
            q_p: self.q_p(),
        }
    }

    /// `h(z) = zᵀQz`.
    pub fn output(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.q * z))
    }

    /// `Az + B·h(z)`, the unattacked loop.
    pub fn rhs(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a * z + &self.b * self.output(z)
    }
}

/// Numeric witnesses for the standing assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a_hurwitz: bool,
    pub spectral_abscissa: f64,
    pub spectra_disjoint: bool,
    pub min_eigenvalue_gap: f64,
    pub bpcc_nonzero: bool,
    pub bpcc_norm: f64,
    pub qp_symmetric: bool,
    pub closed_loop_spectrum: Vec<num_complex::Complex64>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.a_hurwitz && self.spectra_disjoint && self.bpcc_nonzero && self.qp_symmetric
    }

    /// Human-readable names of the failing checks.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.a_hurwitz {
            out.push("closed-loop stability: A is not Hurwitz");
        }
        if !self.spectra_disjoint {
            out.push("Assumption 3(i): plant and controller spectra intersect");
        }
        if !self.bpcc_nonzero {
            out.push("Assumption 3(ii): B_p C_c = 0");
        }
        if !self.qp_symmetric {
            out.push("Q_p is not symmetric");
        }
        out
    }
}

pub fn validate_assumptions(
    plant: &PlantModel,
    controller: &ControllerModel,
    closed_loop: &ClosedLoop,
) -> Result<AssumptionReport, NumericError> {
    let spectrum = numerics::eigenvalues(closed_loop.a())?;
    let spectral_abscissa = numerics::spectral_abscissa(&spectrum);

    let plant_eigs = numerics::eigenvalues(plant.a_p())?;
    let ctrl_eigs = numerics::eigenvalues(controller.a_c())?;
    let min_eigenvalue_gap = plant_eigs
        .iter()
        .flat_map(|p| ctrl_eigs.iter().map(move |c| (p - c).norm()))
        .fold(f64::INFINITY, f64::min);

    let bpcc_norm = numerics::spectral_norm(&(plant.b_p() * controller.c_c()));
    let qp_symmetric = (plant.q_p() - plant.q_p().transpose()).amax() <= SYMMETRY_TOL;

    Ok(AssumptionReport {
        a_hurwitz: spectral_abscissa < -TOL_HURWITZ,
        spectral_abscissa,
        spectra_disjoint: min_eigenvalue_gap > TOL_GAP,
        min_eigenvalue_gap,
        bpcc_nonzero: bpcc_norm > TOL_GAP,
        bpcc_norm,
        qp_symmetric,
        closed_loop_spectrum: spectrum,
    })
}

/// On-disk system definition; matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub plant: PlantFile,
    pub controller: ControllerFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct PlantFile {
    pub A_p: Vec<Vec<f64>>,
    pub B_p: Vec<Vec<f64>>,
    pub Q_p: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ControllerFile {
    pub A_c: Vec<Vec<f64>>,
    pub B_c: Vec<Vec<f64>>,
    pub C_c: Vec<Vec<f64>>,
    pub D_c: f64,
}

fn to_matrix(field: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(ModelError::Dimension {
            field,
            expected: format!("{c} columns in every row"),
            found: format!("{} columns in row {i}", row.len()),
        });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_column(field: &'static str, rows: &[Vec<f64>]) -> Result<DVector<f64>, ModelError> {
    let m = to_matrix(field, rows)?;
    if m.ncols() != 1 {
        return Err(ModelError::Dimension {
            field,
            expected: "a column (n x 1)".into(),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(m.column(0).into_owned())
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl SystemFile {
    /// Parses JSON, reporting the failing field path with line and column.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|err| {
            let path = err.path().to_string();
            let inner = err.into_inner();
            ModelError::Parse(format!(
                "at `{path}` (line {}, column {}): {inner}",
                inner.line(),
                inner.column()
            ))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn models(&self) -> Result<(PlantModel, ControllerModel), ModelError> {
        let plant = PlantModel::new(
            to_matrix("plant.A_p", &self.plant.A_p)?,
            to_column("plant.B_p", &self.plant.B_p)?,
            to_matrix("plant.Q_p", &self.plant.Q_p)?,
        )?;
        let c_c = to_matrix("controller.C_c", &self.controller.C_c)?;
        if c_c.nrows() != 1 {
            return Err(ModelError::Dimension {
                field: "controller.C_c",
                expected: "a single row (1 x n_c)".into(),
                found: format!("{}x{}", c_c.nrows(), c_c.ncols()),
            });
        }
        let controller = ControllerModel::new(
            to_matrix("controller.A_c", &self.controller.A_c)?,
            to_column("controller.B_c", &self.controller.B_c)?,
            c_c.row(0).into_owned(),
            self.controller.D_c,
        )?;
        Ok((plant, controller))
    }

    pub fn from_models(plant: &PlantModel, controller: &ControllerModel) -> Self {
        Self {
            plant: PlantFile {
                A_p: from_matrix(plant.a_p()),
                B_p: plant.b_p().iter().map(|&x| vec![x]).collect(),
                Q_p: from_matrix(plant.q_p()),
            },
            controller: ControllerFile {
                A_c: from_matrix(controller.a_c()),
                B_c: controller.b_c().iter().map(|&x| vec![x]).collect(),
                C_c: vec![controller.c_c().iter().copied().collect()],
                D_c: controller.d_c(),
            },
        }
    }
}
