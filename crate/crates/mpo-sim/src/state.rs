//! Pure state vectors and density matrices on the truncated space.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::fock::{FockError, ModeLayout};
use crate::sparse::OperatorMatrix;

/// Either a pure state vector or a density matrix.
#[derive(Debug, Clone)]
pub enum QuantumState {
    Pure(DVector<Complex64>),
    Mixed(DMatrix<Complex64>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("state dimension {state} does not match operator dimension {operator}")]
    DimensionMismatch { state: usize, operator: usize },
    #[error("pure-state norm {norm} outside 1 +/- {tol}")]
    NormDrift { norm: f64, tol: f64 },
    #[error("density matrix not Hermitian: max asymmetry {max_asym} > {tol}")]
    NotHermitian { max_asym: f64, tol: f64 },
    #[error("density matrix trace {trace} outside 1 +/- {tol}")]
    TraceDrift { trace: f64, tol: f64 },
}

impl QuantumState {
    /// Unit basis vector for an occupation tuple.
    pub fn basis_state(layout: &ModeLayout, occ: &[usize]) -> Result<Self, FockError> {
        let idx = layout.basis_index(occ)?;
        let mut v = DVector::zeros(layout.dim());
        v[idx] = Complex64::ONE;
        Ok(Self::Pure(v))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Pure(v) => v.len(),
            Self::Mixed(m) => m.nrows(),
        }
    }

    pub fn is_pure(&self) -> bool {
        matches!(self, Self::Pure(_))
    }

    /// Convert to a density matrix (projector for pure states).
    pub fn to_density(&self) -> DMatrix<Complex64> {
        match self {
            Self::Pure(v) => v * v.adjoint(),
            Self::Mixed(m) => m.clone(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        match self {
            Self::Pure(v) => Complex64::new(v.norm_squared(), 0.0),
            Self::Mixed(m) => m.diagonal().sum(),
        }
    }

    /// Tr(X rho) for mixed states, <psi|X psi> for pure states.
    pub fn expectation(&self, op: &OperatorMatrix) -> Result<Complex64, StateError> {
        if op.dim() != self.dim() {
            return Err(StateError::DimensionMismatch { state: self.dim(), operator: op.dim() });
        }
        Ok(match self {
            Self::Pure(v) => v.dotc(&op.apply(v)),
            Self::Mixed(m) => op
                .entries()
                .map(|(r, c, x)| x * m[(c, r)])
                .sum(),
        })
    }

    /// Check the state invariants at the given tolerance.
    pub fn validate(&self, tol: f64) -> Result<(), StateError> {
        match self {
            Self::Pure(v) => {
                let norm = v.norm();
                if (norm - 1.0).abs() > tol {
                    return Err(StateError::NormDrift { norm, tol });
                }
            }
            Self::Mixed(m) => {
                let max_asym = (m - m.adjoint()).camax();
                if max_asym > tol {
                    return Err(StateError::NotHermitian { max_asym, tol });
                }
                let trace = m.diagonal().sum().re;
                if (trace - 1.0).abs() > tol {
                    return Err(StateError::TraceDrift { trace, tol });
                }
            }
        }
        Ok(())
    }
}
