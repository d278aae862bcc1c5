//! Combination-weight matrices `B = [w₁, …, w_n]`: the symmetric circulant
//! construction, rule checks, inversion, the mixup view of a column, and the
//! fixed catalog of hand-picked 3×3 baselines.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::SIMPLEX_TOL;

/// `|det B|` must exceed this for `B` to count as invertible.
pub const DET_TOL: f64 = 1e-9;

pub const MAX_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("beta {0} outside the allowed range")]
    BetaOutOfRange(f64),
    #[error("matrix dimension {0} not supported")]
    BadDimension(usize),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular (det = {det:e})")]
    Singular { det: f64 },
    #[error("columns {0:?} are not on the simplex")]
    NotColumnStochastic(Vec<usize>),
    #[error("entries do not match the recorded provenance {0:?}")]
    ProvenanceMismatch(Provenance),
    #[error("no catalog matrix with id {0}")]
    UnknownId(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Circulant { beta: f64 },
    Identity,
    RandomCatalog { id: usize },
    Custom,
}

/// A column-stochastic, invertible `n×n` matrix whose columns are the backbone
/// reward weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct CombinationMatrix {
    entries: DMatrix<f64>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRepr {
    rows: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl TryFrom<MatrixRepr> for CombinationMatrix {
    type Error = MatrixError;

    fn try_from(r: MatrixRepr) -> Result<Self, Self::Error> {
        let entries = from_rows(&r.rows).ok_or(MatrixError::NotSquare {
            rows: r.rows.len(),
            cols: r.rows.first().map_or(0, Vec::len),
        })?;
        CombinationMatrix::new(entries, r.provenance)
    }
}

impl From<CombinationMatrix> for MatrixRepr {
    fn from(m: CombinationMatrix) -> Self {
        Self {
            rows: to_rows(&m.entries),
            provenance: m.provenance,
        }
    }
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Square matrix from row-major nested vectors; `None` if ragged or non-square.
pub(crate) fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return None;
    }
    Some(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl CombinationMatrix {
    /// Validates Rule 2 (invertible) and Rule 3 (columns on the simplex).
    /// Rule 1 is reported by [`CombinationMatrix::rules`] but not enforced, so
    /// the identity (Rewarded Soup) remains constructible.
    pub fn new(entries: DMatrix<f64>, provenance: Provenance) -> Result<Self, MatrixError> {
        if entries.nrows() != entries.ncols() {
            return Err(MatrixError::NotSquare {
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        let n = entries.nrows();
        if !(2..=MAX_DIM).contains(&n) {
            return Err(MatrixError::BadDimension(n));
        }
        let report = validate_rules(&entries);
        if !report.simplex.passed {
            return Err(MatrixError::NotColumnStochastic(report.simplex.violations));
        }
        if !report.invertible.passed {
            return Err(MatrixError::Singular {
                det: report.determinant,
            });
        }
        let expected = match provenance {
            Provenance::Circulant { beta } => Some(circulant_entries(n, beta)),
            Provenance::Identity => Some(DMatrix::identity(n, n)),
            Provenance::RandomCatalog { id } => Some(catalog_entries(id)?),
            Provenance::Custom => None,
        };
        if let Some(expected) = expected {
            if expected.shape() != entries.shape() || (&expected - &entries).amax() > 1e-12 {
                return Err(MatrixError::ProvenanceMismatch(provenance));
            }
        }
        Ok(Self {
            entries,
            provenance,
        })
    }

    pub fn identity(n: usize) -> Result<Self, MatrixError> {
        Self::new(DMatrix::identity(n, n), Provenance::Identity)
    }

    /// Custom matrix from its columns `w₁, …, w_n`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let n = columns.len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(MatrixError::NotSquare {
                rows: columns.first().map_or(0, Vec::len),
                cols: n,
            });
        }
        Self::new(
            DMatrix::from_fn(n, n, |i, j| columns[j][i]),
            Provenance::Custom,
        )
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.entries.column(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        to_rows(&self.entries)
    }

    pub fn rules(&self) -> RuleReport {
        validate_rules(&self.entries)
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>, MatrixError> {
        invert(&self.entries)
    }

    /// Solves `B x = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, MatrixError> {
        if rhs.len() != self.n() {
            return Err(MatrixError::DimensionMismatch {
                expected: self.n(),
                got: rhs.len(),
            });
        }
        let b = DVector::from_column_slice(rhs);
        let x = self
            .entries
            .clone()
            .lu()
            .solve(&b)
            .ok_or(MatrixError::Singular {
                det: self.entries.determinant(),
            })?;
        Ok(x.iter().copied().collect())
    }

    /// `B x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.entries[(i, j)] * x[j]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleCheck {
    pub passed: bool,
    /// Offending column indices (empty for the invertibility rule).
    pub violations: Vec<usize>,
}

impl RuleCheck {
    fn from_violations(violations: Vec<usize>) -> Self {
        Self {
            passed: violations.is_empty(),
            violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleReport {
    /// Rule 1: each column has a unique strict maximum inside `(1/n, 1)`.
    pub dominance: RuleCheck,
    /// Rule 2: `|det B| > DET_TOL`.
    pub invertible: RuleCheck,
    /// Rule 3: each column lies on the simplex.
    pub simplex: RuleCheck,
    pub determinant: f64,
}

impl RuleReport {
    pub fn all_passed(&self) -> bool {
        self.dominance.passed && self.invertible.passed && self.simplex.passed
    }

    /// The identity passes Rules 2–3 but fails dominance: it is the Rewarded
    /// Soup special case rather than a Bone matrix.
    pub fn is_rewarded_soup_case(&self) -> bool {
        !self.dominance.passed && self.invertible.passed && self.simplex.passed
    }
}

pub fn validate_rules(entries: &DMatrix<f64>) -> RuleReport {
    let n = entries.nrows();
    let lower = 1.0 / n as f64;
    let mut dominance = Vec::new();
    let mut simplex = Vec::new();
    for j in 0..entries.ncols() {
        let col = entries.column(j);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties = col.iter().filter(|&&v| v == max).count();
        if ties != 1 || !(max > lower && max < 1.0) {
            dominance.push(j);
        }
        let sum: f64 = col.iter().sum();
        if col.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
            simplex.push(j);
        }
    }
    let determinant = if entries.is_square() {
        entries.determinant()
    } else {
        0.0
    };
    RuleReport {
        dominance: RuleCheck::from_violations(dominance),
        invertible: RuleCheck {
            passed: determinant.abs() > DET_TOL,
            violations: Vec::new(),
        },
        simplex: RuleCheck::from_violations(simplex),
        determinant,
    }
}

fn circulant_entries(n: usize, beta: f64) -> DMatrix<f64> {
    let off = (1.0 - beta) / (n as f64 - 1.0);
    DMatrix::from_fn(n, n, |i, j| if i == j { beta } else { off })
}

/// Diagonal `β`, off-diagonal `(1−β)/(n−1)`, with `β ∈ (0.5, 1)`.
pub fn build_circulant(n: usize, beta: f64) -> Result<CombinationMatrix, MatrixError> {
    if !(2..=MAX_DIM).contains(&n) {
        return Err(MatrixError::BadDimension(n));
    }
    if !(beta > 0.5 && beta < 1.0) {
        return Err(MatrixError::BetaOutOfRange(beta));
    }
    CombinationMatrix::new(circulant_entries(n, beta), Provenance::Circulant { beta })
}

/// `B⁻¹` for any square matrix with `|det| > DET_TOL`.
pub fn invert(entries: &DMatrix<f64>) -> Result<DMatrix<f64>, MatrixError> {
    if !entries.is_square() {
        return Err(MatrixError::NotSquare {
            rows: entries.nrows(),
            cols: entries.ncols(),
        });
    }
    let det = entries.determinant();
    if det.abs() <= DET_TOL {
        return Err(MatrixError::Singular { det });
    }
    entries
        .clone()
        .lu()
        .try_inverse()
        .ok_or(MatrixError::Singular { det })
}

/// Mixing weight `ξ = (βn − 1)/(n − 1)` such that the first circulant column is
/// `ξ·e₁ + (1−ξ)·u` with `u` uniform.
pub fn mixup_decompose(n: usize, beta: f64) -> Result<f64, MatrixError> {
    if n < 2 {
        return Err(MatrixError::BadDimension(n));
    }
    let nf = n as f64;
    if !(beta > 1.0 / nf && beta <= 1.0) {
        return Err(MatrixError::BetaOutOfRange(beta));
    }
    Ok((beta * nf - 1.0) / (nf - 1.0))
}

/// `ξ·e_i + (1−ξ)·u`.
pub fn mixup_column(n: usize, i: usize, xi: f64) -> Vec<f64> {
    let u = 1.0 / n as f64;
    (0..n)
        .map(|k| {
            if k == i {
                xi + (1.0 - xi) * u
            } else {
                (1.0 - xi) * u
            }
        })
        .collect()
}

const CATALOG: [[[f64; 3]; 3]; 8] = [
    [[0.7, 0.2, 0.15], [0.15, 0.6, 0.15], [0.15, 0.2, 0.7]],
    [[0.7, 0.1, 0.1], [0.15, 0.8, 0.1], [0.15, 0.1, 0.8]],
    [[0.7, 0.15, 0.1], [0.15, 0.7, 0.1], [0.15, 0.15, 0.8]],
    [[0.7, 0.15, 0.2], [0.15, 0.7, 0.2], [0.15, 0.15, 0.6]],
    [[0.8, 0.15, 0.2], [0.1, 0.7, 0.2], [0.1, 0.15, 0.6]],
    [[0.7, 0.2, 0.1], [0.15, 0.6, 0.1], [0.15, 0.2, 0.8]],
    [[0.7, 0.2, 0.2], [0.15, 0.6, 0.2], [0.15, 0.2, 0.6]],
    [[0.8, 0.2, 0.2], [0.1, 0.6, 0.2], [0.1, 0.2, 0.6]],
];

fn catalog_entries(id: usize) -> Result<DMatrix<f64>, MatrixError> {
    let rows = CATALOG
        .get(id.wrapping_sub(1))
        .ok_or(MatrixError::UnknownId(id))?;
    Ok(DMatrix::from_fn(3, 3, |i, j| rows[i][j]))
}

/// The hand-picked 3×3 baseline matrices `B₁ … B₈` (row-major as tabulated).
pub fn random_catalog(id: usize) -> Result<CombinationMatrix, MatrixError> {
    CombinationMatrix::new(catalog_entries(id)?, Provenance::RandomCatalog { id })
}
