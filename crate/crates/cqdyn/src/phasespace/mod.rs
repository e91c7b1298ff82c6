//! Variable sets, bracket structures, quadratic Hamiltonians, moment states
//! and the uncertainty (Robertson) feasibility check.
//!
//! Everything here is representation-agnostic: a [`StructureMatrix`] is the
//! single object distinguishing classical, quantum and Koopman variable sets,
//! and all dynamics are linear flows A = S H acting on first and second
//! moments.

pub(crate) mod linalg;
mod propagate;

pub use propagate::{
    evolve_moments, propagate_analytic, propagate_numeric, rk4_integrate, rk4_step, AnalyticFlow,
    Propagator,
};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance for exact-arithmetic structural identities.
pub const STRUCTURAL_TOL: f64 = 1e-10;
/// Tolerance for cross-oracle (analytic vs RK4) agreement.
pub const CROSS_ORACLE_TOL: f64 = 1e-6;

/// An ordered set of named dynamical variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSet {
    labels: Vec<String>,
}

impl VariableSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::DuplicateLabel(l.clone()));
            }
        }
        Ok(VariableSet { labels })
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Antisymmetric bracket structure: [xi_a, xi_b] = i hbar S_ab for commutator
/// readings, {xi_a, xi_b} = S_ab for Poisson readings.
#[derive(Debug, Clone)]
pub struct StructureMatrix {
    s: DMatrix<f64>,
    hbar: f64,
}

impl StructureMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Wrap an explicit antisymmetric matrix (bar-variable transforms build
    /// these); rejects asymmetry beyond rounding.
    pub fn from_matrix(s: DMatrix<f64>, hbar: f64) -> Result<Self> {
        if s.nrows() != s.ncols() {
            return Err(Error::DimensionMismatch {
                context: "structure matrix",
                left: s.nrows(),
                right: s.ncols(),
            });
        }
        if hbar <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "hbar must be positive, got {hbar}"
            )));
        }
        if (&s + s.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidArgument(
                "structure matrix must be antisymmetric".into(),
            ));
        }
        let anti = (&s - s.transpose()).scale(0.5);
        Ok(StructureMatrix { s: anti, hbar })
    }

    /// Restriction to a subset of variables (used for sector-wise checks).
    pub fn restrict(&self, idx: &[usize]) -> Result<StructureMatrix> {
        for &i in idx {
            if i >= self.dim() {
                return Err(Error::InvalidArgument(format!("index {i} out of range")));
            }
        }
        let k = idx.len();
        let s = DMatrix::from_fn(k, k, |i, j| self.s[(idx[i], idx[j])]);
        Ok(StructureMatrix { s, hbar: self.hbar })
    }
}

/// Build the structure matrix of a variable set from its canonical pairs:
/// S[a, b] = +1 and S[b, a] = -1 for each declared (position, momentum) pair,
/// zero elsewhere. Variables absent from the list commute with everything.
pub fn build_structure(
    vars: &VariableSet,
    pairs: &[(&str, &str)],
    hbar: f64,
) -> Result<StructureMatrix> {
    if hbar <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "hbar must be positive, got {hbar}"
        )));
    }
    let n = vars.dim();
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut used = vec![false; n];
    for (pos, mom) in pairs {
        let i = vars
            .index_of(pos)
            .ok_or_else(|| Error::UnknownLabel((*pos).into()))?;
        let j = vars
            .index_of(mom)
            .ok_or_else(|| Error::UnknownLabel((*mom).into()))?;
        if used[i] {
            return Err(Error::DuplicateLabel((*pos).into()));
        }
        if used[j] {
            return Err(Error::DuplicateLabel((*mom).into()));
        }
        used[i] = true;
        used[j] = true;
        s[(i, j)] = 1.0;
        s[(j, i)] = -1.0;
    }
    Ok(StructureMatrix { s, hbar })
}

/// A quadratic Hamiltonian H(xi) = 1/2 xi^T H xi over a variable set.
#[derive(Debug, Clone)]
pub struct QuadraticHamiltonian {
    h: DMatrix<f64>,
    vars: VariableSet,
}

impl QuadraticHamiltonian {
    pub fn new(vars: VariableSet, h: DMatrix<f64>) -> Result<Self> {
        if h.nrows() != vars.dim() || h.ncols() != vars.dim() {
            return Err(Error::DimensionMismatch {
                context: "quadratic Hamiltonian",
                left: h.nrows(),
                right: vars.dim(),
            });
        }
        if (&h - h.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidArgument(
                "Hamiltonian matrix must be symmetric".into(),
            ));
        }
        let h = (&h + h.transpose()).scale(0.5);
        Ok(QuadraticHamiltonian { h, vars })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn vars(&self) -> &VariableSet {
        &self.vars
    }

    pub fn dim(&self) -> usize {
        self.vars.dim()
    }
}

/// First and second moments of a distribution over a variable set.
#[derive(Debug, Clone)]
pub struct MomentState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MomentState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "moment state",
                left: cov.nrows(),
                right: mean.len(),
            });
        }
        if (&cov - cov.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidArgument("covariance must be symmetric".into()));
        }
        let cov = (&cov + cov.transpose()).scale(0.5);
        Ok(MomentState { mean, cov })
    }

    /// A sharp phase-space point: zero covariance.
    pub fn point(mean: DVector<f64>) -> Self {
        let n = mean.len();
        MomentState {
            mean,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Linear generator of the moment flow, A = S H, so that d<xi>/dt = A <xi>.
pub fn flow_matrix(ham: &QuadraticHamiltonian, s: &StructureMatrix) -> Result<DMatrix<f64>> {
    if ham.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            context: "flow matrix",
            left: ham.dim(),
            right: s.dim(),
        });
    }
    Ok(s.matrix() * ham.matrix())
}

/// <1/2 xi^T H xi> = 1/2 tr(H Sigma) + 1/2 m^T H m.
pub fn expectation_quadratic(state: &MomentState, ham: &QuadraticHamiltonian) -> Result<f64> {
    if state.dim() != ham.dim() {
        return Err(Error::DimensionMismatch {
            context: "quadratic expectation",
            left: state.dim(),
            right: ham.dim(),
        });
    }
    let h = ham.matrix();
    Ok(0.5 * (h * &state.cov).trace() + 0.5 * (&state.mean.transpose() * h * &state.mean)[(0, 0)])
}

/// Outcome of the uncertainty feasibility test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobertsonReport {
    pub feasible: bool,
    pub min_eigenvalue: f64,
}

/// Positive-semidefiniteness of Sigma + (i hbar / 2) S, the matrix form of
/// the Robertson uncertainty relations. A zero S block (commuting variables)
/// makes any positive-semidefinite Sigma feasible, including sharp points.
pub fn robertson_check(
    state: &MomentState,
    s: &StructureMatrix,
    subset: Option<&[usize]>,
) -> Result<RobertsonReport> {
    if state.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            context: "robertson check",
            left: state.dim(),
            right: s.dim(),
        });
    }
    let (cov, st) = match subset {
        Some(idx) => {
            for &i in idx {
                if i >= state.dim() {
                    return Err(Error::InvalidArgument(format!("index {i} out of range")));
                }
            }
            let k = idx.len();
            let cov = DMatrix::from_fn(k, k, |i, j| state.cov[(idx[i], idx[j])]);
            (cov, s.restrict(idx)?)
        }
        None => (state.cov.clone(), s.clone()),
    };
    let half = 0.5 * st.hbar();
    let n = cov.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| {
        Complex64::new(cov[(i, j)], half * st.matrix()[(i, j)])
    });
    let min_eigenvalue = linalg::hermitian_embedding_eigenvalues(&m)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(RobertsonReport {
        feasible: min_eigenvalue >= -STRUCTURAL_TOL,
        min_eigenvalue,
    })
}
