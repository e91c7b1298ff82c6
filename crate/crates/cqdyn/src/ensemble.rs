//! Weighted ensembles of embedded pure states coupled to a classical
//! oscillator.
//!
//! A quantum state is carried as the real and imaginary parts of its
//! amplitudes, which form symplectic pairs of a formally classical system.
//! An ensemble of such points plus weights holds strictly more information
//! than its density matrix: two mixtures with identical density matrices can
//! evolve into distinguishable ones once a hybrid coupling feeds the
//! per-member quantum expectation back into the shared classical sector.
//! hbar = 1 throughout this module.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phasespace::{rk4_integrate, rk4_step};

const HERMITIAN_TOL: f64 = 1e-12;
/// Accepted deviation of a pure-state norm from one.
pub const NORM_TOL: f64 = 1e-8;

/// A classical phase-space point together with one embedded pure state:
/// amplitudes a_i = re_i + i im_i.
#[derive(Debug, Clone, PartialEq)]
pub struct PureStatePoint {
    pub q: f64,
    pub p: f64,
    /// Real parts of the amplitudes.
    pub re: DVector<f64>,
    /// Imaginary parts of the amplitudes.
    pub im: DVector<f64>,
}

/// Split normalized amplitudes into their real and imaginary parts.
pub fn embed(amplitudes: &[Complex64]) -> Result<(DVector<f64>, DVector<f64>)> {
    let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidArgument(format!(
            "amplitudes must be normalized, got norm {norm}"
        )));
    }
    Ok((
        DVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|a| a.re)),
        DVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|a| a.im)),
    ))
}

impl PureStatePoint {
    pub fn from_amplitudes(q: f64, p: f64, amplitudes: &[Complex64]) -> Result<Self> {
        let (re, im) = embed(amplitudes)?;
        Ok(PureStatePoint { q, p, re, im })
    }

    pub fn amplitudes(&self) -> DVector<Complex64> {
        DVector::from_iterator(
            self.re.len(),
            self.re.iter().zip(self.im.iter()).map(|(r, i)| Complex64::new(*r, *i)),
        )
    }

    pub fn norm_squared(&self) -> f64 {
        self.re.norm_squared() + self.im.norm_squared()
    }

    /// Hilbert-space dimension of the embedded state.
    pub fn dim(&self) -> usize {
        self.re.len()
    }
}

/// A finite weighted mixture of pure-state points.
#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    members: Vec<(f64, PureStatePoint)>,
}

impl WeightedEnsemble {
    pub fn new(members: Vec<(f64, PureStatePoint)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("ensemble must have members".into()));
        }
        let dim = members[0].1.dim();
        let mut total = 0.0;
        for (w, pt) in &members {
            if *w < 0.0 || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("weight {w} is not admissible")));
            }
            if pt.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "ensemble members",
                    left: pt.dim(),
                    right: dim,
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights must sum to one, got {total}"
            )));
        }
        Ok(WeightedEnsemble { members })
    }

    pub fn members(&self) -> &[(f64, PureStatePoint)] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].1.dim()
    }

    /// Weighted mean of the classical position.
    pub fn q_mean(&self) -> f64 {
        self.members.iter().map(|(w, pt)| w * pt.q).sum()
    }

    /// Weighted variance of the classical position.
    pub fn q_variance(&self) -> f64 {
        let mean = self.q_mean();
        self.members
            .iter()
            .map(|(w, pt)| w * (pt.q - mean) * (pt.q - mean))
            .sum()
    }
}

/// A Hermitian, unit-trace, positive-semidefinite matrix.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    rho: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(rho: DMatrix<Complex64>) -> Result<Self> {
        if rho.nrows() != rho.ncols() {
            return Err(Error::DimensionMismatch {
                context: "density matrix",
                left: rho.nrows(),
                right: rho.ncols(),
            });
        }
        if (&rho - rho.adjoint()).camax() > HERMITIAN_TOL {
            return Err(Error::InvalidArgument("density matrix must be Hermitian".into()));
        }
        let trace = rho.trace();
        if (trace.re - 1.0).abs() > HERMITIAN_TOL || trace.im.abs() > HERMITIAN_TOL {
            return Err(Error::InvalidArgument(format!(
                "density matrix must have unit trace, got {trace}"
            )));
        }
        let min = crate::phasespace::linalg::hermitian_embedding_eigenvalues(&rho)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(Error::InvalidArgument(format!(
                "density matrix must be positive semidefinite, min eigenvalue {min}"
            )));
        }
        Ok(DensityMatrix { rho })
    }

    fn from_parts_unchecked(rho: DMatrix<Complex64>) -> Self {
        DensityMatrix { rho }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }
}

/// rho = sum_m w_m a_m a_m^dagger.
pub fn density_of(ensemble: &WeightedEnsemble) -> DensityMatrix {
    let n = ensemble.dim();
    let mut rho = DMatrix::<Complex64>::zeros(n, n);
    for (w, pt) in ensemble.members() {
        let a = pt.amplitudes();
        rho += (&a * a.adjoint()).scale(*w);
    }
    let rho = (&rho + rho.adjoint()).scale(0.5);
    DensityMatrix::from_parts_unchecked(rho)
}

/// <A> = sum_m w_m a_m^dagger A a_m for a Hermitian observable matrix.
pub fn observable_expectation(ensemble: &WeightedEnsemble, a: &DMatrix<Complex64>) -> Result<f64> {
    if a.nrows() != ensemble.dim() || a.ncols() != ensemble.dim() {
        return Err(Error::DimensionMismatch {
            context: "observable expectation",
            left: a.nrows(),
            right: ensemble.dim(),
        });
    }
    let mut value = Complex64::new(0.0, 0.0);
    for (w, pt) in ensemble.members() {
        let amp = pt.amplitudes();
        value += (amp.adjoint() * a * amp)[(0, 0)].scale(*w);
    }
    if value.im.abs() > HERMITIAN_TOL {
        return Err(Error::InvalidArgument(format!(
            "expectation has imaginary part {}; observable is not Hermitian",
            value.im
        )));
    }
    Ok(value.re)
}

/// Which classical variable multiplies the coupling operator in the
/// interaction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingProfile {
    /// H_I = gamma q <A>.
    #[default]
    Position,
    /// H_I = gamma p <A>.
    Momentum,
}

/// Pauli matrices for the two-level scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "x" | "X" => Ok(PauliAxis::X),
            "y" | "Y" => Ok(PauliAxis::Y),
            "z" | "Z" => Ok(PauliAxis::Z),
            other => Err(Error::InvalidArgument(format!("unknown Pauli axis `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PauliAxis::X => "x",
            PauliAxis::Y => "y",
            PauliAxis::Z => "z",
        }
    }
}

pub fn pauli(axis: PauliAxis) -> DMatrix<Complex64> {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    match axis {
        PauliAxis::X => DMatrix::from_row_slice(2, 2, &[z, one, one, z]),
        PauliAxis::Y => DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        PauliAxis::Z => DMatrix::from_row_slice(2, 2, &[one, z, z, -one]),
    }
}

/// Classical oscillator + quantum Hamiltonian + bilinear hybrid coupling
/// H_T = (p^2 + Omega^2 q^2)/2 + a^dag H_Q a + gamma f(q, p) a^dag A a.
#[derive(Debug, Clone)]
pub struct HybridCouplingSpec {
    /// Frequency of the unit-mass classical oscillator.
    pub classical_freq: f64,
    pub quantum_hamiltonian: DMatrix<Complex64>,
    /// Coupling strength gamma.
    pub coupling: f64,
    /// Hermitian coupling operator A.
    pub coupling_op: DMatrix<Complex64>,
    pub profile: CouplingProfile,
}

impl HybridCouplingSpec {
    pub fn new(
        classical_freq: f64,
        quantum_hamiltonian: DMatrix<Complex64>,
        coupling: f64,
        coupling_op: DMatrix<Complex64>,
    ) -> Result<Self> {
        if quantum_hamiltonian.nrows() != quantum_hamiltonian.ncols() {
            return Err(Error::DimensionMismatch {
                context: "quantum Hamiltonian",
                left: quantum_hamiltonian.nrows(),
                right: quantum_hamiltonian.ncols(),
            });
        }
        if coupling_op.nrows() != quantum_hamiltonian.nrows()
            || coupling_op.ncols() != quantum_hamiltonian.ncols()
        {
            return Err(Error::DimensionMismatch {
                context: "coupling operator",
                left: coupling_op.nrows(),
                right: quantum_hamiltonian.nrows(),
            });
        }
        if (&quantum_hamiltonian - quantum_hamiltonian.adjoint()).camax() > HERMITIAN_TOL {
            return Err(Error::InvalidArgument("quantum Hamiltonian must be Hermitian".into()));
        }
        if (&coupling_op - coupling_op.adjoint()).camax() > HERMITIAN_TOL {
            return Err(Error::InvalidArgument("coupling operator must be Hermitian".into()));
        }
        Ok(HybridCouplingSpec {
            classical_freq,
            quantum_hamiltonian,
            coupling,
            coupling_op,
            profile: CouplingProfile::Position,
        })
    }

    /// The two-level default: unit-frequency oscillator, H_Q = sigma_z / 2,
    /// coupling operator sigma_axis.
    pub fn spin_default(coupling: f64, axis: PauliAxis) -> Self {
        HybridCouplingSpec {
            classical_freq: 1.0,
            quantum_hamiltonian: pauli(PauliAxis::Z).scale(0.5),
            coupling,
            coupling_op: pauli(axis),
            profile: CouplingProfile::Position,
        }
    }

    fn weight_and_gradient(&self, q: f64, p: f64) -> (f64, f64, f64) {
        match self.profile {
            CouplingProfile::Position => (q, 1.0, 0.0),
            CouplingProfile::Momentum => (p, 0.0, 1.0),
        }
    }

    /// Total energy of one member; conserved by the Hamilton flow.
    pub fn total_energy(&self, pt: &PureStatePoint) -> f64 {
        let a = pt.amplitudes();
        let quantum = (a.adjoint() * &self.quantum_hamiltonian * &a)[(0, 0)].re;
        let coupling = (a.adjoint() * &self.coupling_op * &a)[(0, 0)].re;
        let (f, _, _) = self.weight_and_gradient(pt.q, pt.p);
        0.5 * (pt.p * pt.p + self.classical_freq * self.classical_freq * pt.q * pt.q)
            + quantum
            + self.coupling * f * coupling
    }
}

/// Hamilton equations of the hybrid: the classical pair feels the force
/// -gamma grad f <A>, and the amplitudes follow the Schroedinger flow of
/// H_Q + gamma f(q, p) A at the instantaneous classical point, which
/// preserves their norm.
pub fn hybrid_rhs(spec: &HybridCouplingSpec, pt: &PureStatePoint) -> PureStatePoint {
    let a = pt.amplitudes();
    let expectation = (a.adjoint() * &spec.coupling_op * &a)[(0, 0)].re;
    let (f, df_dq, df_dp) = spec.weight_and_gradient(pt.q, pt.p);
    let q_dot = pt.p + spec.coupling * df_dp * expectation;
    let p_dot = -spec.classical_freq * spec.classical_freq * pt.q
        - spec.coupling * df_dq * expectation;
    let h_eff = &spec.quantum_hamiltonian + spec.coupling_op.scale(spec.coupling * f);
    let a_dot = (&h_eff * &a).scale(1.0) * Complex64::new(0.0, -1.0);
    PureStatePoint {
        q: q_dot,
        p: p_dot,
        re: DVector::from_iterator(a_dot.len(), a_dot.iter().map(|c| c.re)),
        im: DVector::from_iterator(a_dot.len(), a_dot.iter().map(|c| c.im)),
    }
}

fn pack(pt: &PureStatePoint) -> DVector<f64> {
    let n = pt.dim();
    let mut y = DVector::zeros(2 + 2 * n);
    y[0] = pt.q;
    y[1] = pt.p;
    for i in 0..n {
        y[2 + i] = pt.re[i];
        y[2 + n + i] = pt.im[i];
    }
    y
}

fn unpack(y: &DVector<f64>, n: usize) -> PureStatePoint {
    PureStatePoint {
        q: y[0],
        p: y[1],
        re: DVector::from_fn(n, |i, _| y[2 + i]),
        im: DVector::from_fn(n, |i, _| y[2 + n + i]),
    }
}

fn member_rhs(spec: &HybridCouplingSpec, n: usize) -> impl Fn(f64, &DVector<f64>) -> DVector<f64> + '_ {
    move |_t, y| pack(&hybrid_rhs(spec, &unpack(y, n)))
}

/// Advance every member by fixed-step RK4 over [0, t]; weights are never
/// touched.
pub fn evolve_ensemble(
    ensemble: &WeightedEnsemble,
    spec: &HybridCouplingSpec,
    t: f64,
    dt: f64,
) -> Result<WeightedEnsemble> {
    if spec.quantum_hamiltonian.nrows() != ensemble.dim() {
        return Err(Error::DimensionMismatch {
            context: "ensemble evolution",
            left: spec.quantum_hamiltonian.nrows(),
            right: ensemble.dim(),
        });
    }
    let n = ensemble.dim();
    let rhs = member_rhs(spec, n);
    let mut members = Vec::with_capacity(ensemble.members().len());
    for (w, pt) in ensemble.members() {
        let y = rk4_integrate(&rhs, &pack(pt), t, dt)?;
        members.push((*w, unpack(&y, n)));
    }
    Ok(WeightedEnsemble { members })
}

/// 1/2 sum |eigenvalues| of the difference of two density matrices.
pub fn trace_distance(r1: &DensityMatrix, r2: &DensityMatrix) -> Result<f64> {
    if r1.dim() != r2.dim() {
        return Err(Error::DimensionMismatch {
            context: "trace distance",
            left: r1.dim(),
            right: r2.dim(),
        });
    }
    let diff = r1.matrix() - r2.matrix();
    // The embedding doubles every eigenvalue, so half its absolute sum is
    // the full absolute sum over the true spectrum.
    let total: f64 = crate::phasespace::linalg::hermitian_embedding_eigenvalues(&diff)
        .iter()
        .map(|l| l.abs())
        .sum();
    Ok(0.25 * total)
}

/// Time series comparing two representations of the same initial density
/// matrix under one hybrid coupling.
#[derive(Debug, Clone, Default)]
pub struct DivergenceSeries {
    pub times: Vec<f64>,
    pub trace_distance: Vec<f64>,
    pub q_mean_1: Vec<f64>,
    pub q_mean_2: Vec<f64>,
    pub q_var_1: Vec<f64>,
    pub q_var_2: Vec<f64>,
}

impl DivergenceSeries {
    pub fn max_trace_distance(&self) -> f64 {
        self.trace_distance.iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Evolve two ensembles with equal initial density matrices on a shared grid
/// and record the trace distance of their quantum marginals plus the
/// classical-sector statistics per representation. Rejects mixture pairs
/// whose initial densities differ.
pub fn representation_divergence(
    mix1: &WeightedEnsemble,
    mix2: &WeightedEnsemble,
    spec: &HybridCouplingSpec,
    t_max: f64,
    dt: f64,
) -> Result<DivergenceSeries> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    let initial = trace_distance(&density_of(mix1), &density_of(mix2))?;
    if initial > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "initial density matrices differ: trace distance {initial}"
        )));
    }
    let n = ensemble_dim_checked(mix1, spec)?;
    let rhs = member_rhs(spec, n);
    let steps = (t_max / dt + 1e-9).floor() as usize;
    let mut state1: Vec<(f64, DVector<f64>)> = mix1
        .members()
        .iter()
        .map(|(w, pt)| (*w, pack(pt)))
        .collect();
    let mut state2: Vec<(f64, DVector<f64>)> = mix2
        .members()
        .iter()
        .map(|(w, pt)| (*w, pack(pt)))
        .collect();
    let mut series = DivergenceSeries::default();
    for i in 0..=steps {
        let t = i as f64 * dt;
        let e1 = WeightedEnsemble {
            members: state1.iter().map(|(w, y)| (*w, unpack(y, n))).collect(),
        };
        let e2 = WeightedEnsemble {
            members: state2.iter().map(|(w, y)| (*w, unpack(y, n))).collect(),
        };
        series.times.push(t);
        series
            .trace_distance
            .push(trace_distance(&density_of(&e1), &density_of(&e2))?);
        series.q_mean_1.push(e1.q_mean());
        series.q_mean_2.push(e2.q_mean());
        series.q_var_1.push(e1.q_variance());
        series.q_var_2.push(e2.q_variance());
        if i < steps {
            for (_, y) in state1.iter_mut().chain(state2.iter_mut()) {
                *y = rk4_step(&rhs, t, y, dt);
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { step: i + 1 });
                }
            }
        }
    }
    Ok(series)
}

fn ensemble_dim_checked(e: &WeightedEnsemble, spec: &HybridCouplingSpec) -> Result<usize> {
    if spec.quantum_hamiltonian.nrows() != e.dim() {
        return Err(Error::DimensionMismatch {
            context: "ensemble evolution",
            left: spec.quantum_hamiltonian.nrows(),
            right: e.dim(),
        });
    }
    Ok(e.dim())
}

/// Equal mixture of the sigma_z eigenstates, every member at (q0, p0).
pub fn z_mixture(q0: f64, p0: f64) -> WeightedEnsemble {
    let up = PureStatePoint::from_amplitudes(
        q0,
        p0,
        &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
    )
    .expect("normalized");
    let down = PureStatePoint::from_amplitudes(
        q0,
        p0,
        &[Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
    )
    .expect("normalized");
    WeightedEnsemble::new(vec![(0.5, up), (0.5, down)]).expect("weights sum to one")
}

/// Equal mixture of the transverse (sigma_y) eigenstates (1, +-i)/sqrt 2,
/// every member at (q0, p0). Same density matrix as [`z_mixture`].
pub fn transverse_mixture(q0: f64, p0: f64) -> WeightedEnsemble {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus = PureStatePoint::from_amplitudes(
        q0,
        p0,
        &[Complex64::new(s, 0.0), Complex64::new(0.0, s)],
    )
    .expect("normalized");
    let minus = PureStatePoint::from_amplitudes(
        q0,
        p0,
        &[Complex64::new(s, 0.0), Complex64::new(0.0, -s)],
    )
    .expect("normalized");
    WeightedEnsemble::new(vec![(0.5, plus), (0.5, minus)]).expect("weights sum to one")
}
