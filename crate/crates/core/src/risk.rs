//! Risk matrices built from protocol scores, and the risk measures computed
//! from them.
//!
//! Contributions use the Euler decomposition of the quadratic risk
//! `wᵀ M w`: protocol `i` contributes `w_i (M w)_i` and the contributions sum
//! to the total.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::domain::{Universe, WeightVector};
use crate::error::{Error, Result};

/// Relative tolerance used when checking symmetry and positive
/// semi-definiteness of user-supplied matrices.
const STRUCTURE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RiskMatrix {
    ids: Vec<String>,
    entries: DMatrix<f64>,
    normalized: bool,
}

impl RiskMatrix {
    /// A general symmetric positive semi-definite risk matrix with a strictly
    /// positive diagonal.
    pub fn from_entries(ids: Vec<String>, entries: DMatrix<f64>) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::EmptyUniverse);
        }
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::InvalidMatrix(format!(
                "expected {n}x{n}, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let scale = entries.amax();
        for i in 0..n {
            if !(entries[(i, i)] > 0.0) {
                return Err(Error::InvalidMatrix(format!(
                    "diagonal entry for `{}` is not positive",
                    ids[i]
                )));
            }
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > STRUCTURE_TOLERANCE * scale {
                    return Err(Error::InvalidMatrix("matrix is not symmetric".into()));
                }
            }
        }
        let min_eig = entries.clone().symmetric_eigenvalues().min();
        if min_eig < -STRUCTURE_TOLERANCE * scale * n as f64 {
            return Err(Error::InvalidMatrix(format!(
                "matrix is not positive semi-definite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self {
            ids,
            entries,
            normalized: false,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.ids.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.entries.diagonal().iter().copied().collect()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.entries[(i, j)] == 0.0))
    }

    /// Frobenius norm of the entries.
    pub fn norm(&self) -> f64 {
        self.entries.norm()
    }

    /// `M w` as a plain vector.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let v = &self.entries * DVector::from_column_slice(w);
        v.iter().copied().collect()
    }

    /// Multiplies every entry by `c > 0`, keeping the normalization flag.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidMatrix(format!("scale factor {c} is not positive")));
        }
        Ok(Self {
            ids: self.ids.clone(),
            entries: &self.entries * c,
            normalized: self.normalized,
        })
    }

    /// Reorders rows and columns to follow `ids`, which must be a permutation
    /// of the current id list.
    pub fn permuted(&self, ids: &[String]) -> Result<Self> {
        let index: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::UnknownProtocol(id.clone()))
            })
            .collect::<Result<_>>()?;
        if index.len() != self.dim() {
            return Err(self.mismatch(ids));
        }
        let n = self.dim();
        let entries = DMatrix::from_fn(n, n, |i, j| self.entries[(index[i], index[j])]);
        Ok(Self {
            ids: ids.to_vec(),
            entries,
            normalized: self.normalized,
        })
    }

    pub(crate) fn check_ids(&self, ids: &[String]) -> Result<()> {
        if self.ids != ids {
            return Err(self.mismatch(ids));
        }
        Ok(())
    }

    fn mismatch(&self, ids: &[String]) -> Error {
        Error::UniverseMismatch {
            expected: self.ids.clone(),
            actual: ids.to_vec(),
        }
    }

    pub(crate) fn require_normalized(&self) -> Result<()> {
        if self.normalized {
            Ok(())
        } else {
            Err(Error::NotNormalized)
        }
    }
}

/// Diagonal matrix of raw scores in universe order.
pub fn build_risk_matrix(universe: &Universe) -> RiskMatrix {
    let scores = universe.scores();
    RiskMatrix {
        ids: universe.ids(),
        entries: DMatrix::from_diagonal(&DVector::from_vec(scores)),
        normalized: false,
    }
}

/// Divides the matrix by its Frobenius norm.
pub fn normalize(matrix: &RiskMatrix) -> Result<RiskMatrix> {
    if matrix.normalized {
        return Err(Error::AlreadyNormalized);
    }
    let norm = matrix.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::ZeroMatrix);
    }
    Ok(RiskMatrix {
        ids: matrix.ids.clone(),
        entries: &matrix.entries / norm,
        normalized: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskDecomposition {
    pub contributions: Vec<f64>,
    pub total: f64,
}

/// Per-protocol contributions `w_i (M w)_i` and their total `wᵀ M w`.
pub fn risk_contributions(w: &WeightVector, m: &RiskMatrix) -> Result<RiskDecomposition> {
    m.check_ids(w.ids())?;
    let contributions = contributions_raw(w.values(), m);
    let total = contributions.iter().sum();
    Ok(RiskDecomposition {
        contributions,
        total,
    })
}

pub(crate) fn contributions_raw(w: &[f64], m: &RiskMatrix) -> Vec<f64> {
    let mw = m.apply(w);
    w.iter().zip(mw).map(|(wi, mwi)| wi * mwi).collect()
}

/// Linear weighted score `Σ w_i m_ii`, the risk level reported in ledgers.
pub fn portfolio_risk_report(w: &WeightVector, m: &RiskMatrix) -> Result<f64> {
    m.check_ids(w.ids())?;
    m.require_normalized()?;
    Ok(w.values()
        .iter()
        .zip(m.entries.diagonal().iter())
        .map(|(wi, s)| wi * s)
        .sum())
}
