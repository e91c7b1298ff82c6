//! Two coupled oscillators with a sharp classical initial condition on one
//! and a coherent state on the other, propagated at the level of means and
//! covariances.
//!
//! Both sectors evolve under the same linear phase-space flow; what keeps
//! track of who is "classical" and who is "quantum" is only the initial
//! covariance. The dispersion products Dq Dp and Dx Dk measure how the
//! interaction hands uncertainty back and forth; their sum never drops below
//! its initial value hbar/2.

use nalgebra::{DMatrix, DVector, Matrix2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phasespace::{
    build_structure, flow_matrix, AnalyticFlow, MomentState, QuadraticHamiltonian,
    StructureMatrix, VariableSet,
};

/// Variable order of the oscillator pair.
pub const PAIR_LABELS: [&str; 4] = ["q", "p", "x", "k"];

/// The (classical frequency, quantum frequency, coupling) configurations
/// exercised by the regression suite.
pub const SHIPPED_CONFIGS: [(f64, f64, f64); 6] = [
    (3.0, 2.0, 1.0),
    (2.0, 3.0, 1.0),
    (2.0, 0.51, 1.0),
    (0.51, 2.0, 1.0),
    (1.73, 1.73, 1.0),
    (1.0, 1.01, 1.0),
];

/// Frequencies, coupling and initial data of the oscillator pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscPairConfig {
    pub classical_freq: f64,
    pub quantum_freq: f64,
    pub coupling: f64,
    pub hbar: f64,
    pub q0: f64,
    pub p0: f64,
    pub x0: f64,
    pub k0: f64,
    /// Width of the coherent state in x.
    pub sigma_x: f64,
    /// Width of the coherent state in k.
    pub sigma_k: f64,
}

impl OscPairConfig {
    /// Zero means, hbar = 1, and the oscillator-matched coherent widths
    /// sigma_x^2 = hbar / (2 omega), sigma_k^2 = hbar omega / 2, which keep
    /// the decoupled quantum oscillator stationary.
    pub fn new(classical_freq: f64, quantum_freq: f64, coupling: f64) -> Self {
        let hbar = 1.0;
        OscPairConfig {
            classical_freq,
            quantum_freq,
            coupling,
            hbar,
            q0: 0.0,
            p0: 0.0,
            x0: 0.0,
            k0: 0.0,
            sigma_x: (hbar / (2.0 * quantum_freq)).sqrt(),
            sigma_k: (hbar * quantum_freq / 2.0).sqrt(),
        }
    }

    /// Rescales the coherent widths to the new hbar.
    pub fn with_hbar(mut self, hbar: f64) -> Self {
        self.hbar = hbar;
        self.sigma_x = (hbar / (2.0 * self.quantum_freq)).sqrt();
        self.sigma_k = (hbar * self.quantum_freq / 2.0).sqrt();
        self
    }

    pub fn with_means(mut self, q0: f64, p0: f64, x0: f64, k0: f64) -> Self {
        self.q0 = q0;
        self.p0 = p0;
        self.x0 = x0;
        self.k0 = k0;
        self
    }

    pub fn with_widths(mut self, sigma_x: f64, sigma_k: f64) -> Self {
        self.sigma_x = sigma_x;
        self.sigma_k = sigma_k;
        self
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("classical_freq", self.classical_freq),
            ("quantum_freq", self.quantum_freq),
            ("coupling", self.coupling),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        if self.hbar <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "hbar must be positive, got {}",
                self.hbar
            )));
        }
        if self.sigma_x <= 0.0 || self.sigma_k <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "coherent widths must be positive, got sigma_x = {}, sigma_k = {}",
                self.sigma_x, self.sigma_k
            )));
        }
        Ok(())
    }
}

/// Phase-space (Poisson) structure generating the flow: both pairs canonical.
pub fn flow_structure(cfg: &OscPairConfig) -> StructureMatrix {
    let vars = VariableSet::new(PAIR_LABELS).expect("labels are distinct");
    build_structure(&vars, &[("q", "p"), ("x", "k")], cfg.hbar).expect("labels exist")
}

/// Commutator structure for uncertainty checks: only (x, k) is a conjugate
/// pair, the classical block is commuting so sharp points are allowed.
pub fn commutator_structure(cfg: &OscPairConfig) -> StructureMatrix {
    let vars = VariableSet::new(PAIR_LABELS).expect("labels are distinct");
    build_structure(&vars, &[("x", "k")], cfg.hbar).expect("labels exist")
}

/// H = (p^2 + Omega^2 q^2)/2 + (k^2 + omega^2 x^2)/2 + gamma q x.
pub fn hamiltonian(cfg: &OscPairConfig) -> QuadraticHamiltonian {
    let vars = VariableSet::new(PAIR_LABELS).expect("labels are distinct");
    let mut h = DMatrix::<f64>::zeros(4, 4);
    h[(0, 0)] = cfg.classical_freq * cfg.classical_freq;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = cfg.quantum_freq * cfg.quantum_freq;
    h[(3, 3)] = 1.0;
    h[(0, 2)] = cfg.coupling;
    h[(2, 0)] = cfg.coupling;
    QuadraticHamiltonian::new(vars, h).expect("symmetric by construction")
}

/// The 4x4 linear generator of the pair.
pub fn flow(cfg: &OscPairConfig) -> DMatrix<f64> {
    flow_matrix(&hamiltonian(cfg), &flow_structure(cfg)).expect("dimensions agree")
}

/// Eigen-structure of the position-space coupling matrix
/// [[Omega^2, gamma], [gamma, omega^2]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalModes {
    /// Squared mode frequencies, ordered (classical branch, quantum branch).
    pub freqs_squared: [f64; 2],
    /// Orthogonal matrix whose columns are the mode shapes in (q, x).
    pub mode_matrix: Matrix2<f64>,
    /// False when a squared frequency is nonpositive (runaway coupling).
    pub stable: bool,
}

pub fn normal_modes(cfg: &OscPairConfig) -> NormalModes {
    let m = Matrix2::new(
        cfg.classical_freq * cfg.classical_freq,
        cfg.coupling,
        cfg.coupling,
        cfg.quantum_freq * cfg.quantum_freq,
    );
    let eig = m.symmetric_eigen();
    let (v0, v1) = (eig.eigenvectors.column(0), eig.eigenvectors.column(1));
    // The classical branch is the mode with the larger weight on q; at the
    // exact 45-degree tie the larger frequency takes the first slot.
    let classical = if (v0[0].abs() - v1[0].abs()).abs() < 1e-12 {
        if eig.eigenvalues[0] >= eig.eigenvalues[1] {
            0
        } else {
            1
        }
    } else if v0[0].abs() > v1[0].abs() {
        0
    } else {
        1
    };
    let quantum = 1 - classical;
    let mut mode_matrix = Matrix2::zeros();
    for (slot, idx) in [(0, classical), (1, quantum)] {
        let col = eig.eigenvectors.column(idx);
        let sign = if col[0] < 0.0 || (col[0] == 0.0 && col[1] < 0.0) {
            -1.0
        } else {
            1.0
        };
        mode_matrix.set_column(slot, &(col * sign));
    }
    let freqs_squared = [eig.eigenvalues[classical], eig.eigenvalues[quantum]];
    NormalModes {
        freqs_squared,
        mode_matrix,
        stable: freqs_squared[0] > 0.0 && freqs_squared[1] > 0.0,
    }
}

/// Product of a sharp classical point and a coherent state:
/// mean (q0, p0, x0, k0), covariance diag(0, 0, sigma_x^2, sigma_k^2).
pub fn initial_state(cfg: &OscPairConfig) -> Result<MomentState> {
    cfg.validate()?;
    let mean = DVector::from_row_slice(&[cfg.q0, cfg.p0, cfg.x0, cfg.k0]);
    let cov = DMatrix::from_diagonal(&DVector::from_row_slice(&[
        0.0,
        0.0,
        cfg.sigma_x * cfg.sigma_x,
        cfg.sigma_k * cfg.sigma_k,
    ]));
    MomentState::new(mean, cov)
}

/// Time series of the dispersion products.
#[derive(Debug, Clone, Default)]
pub struct DispersionSeries {
    pub times: Vec<f64>,
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
    pub dx: Vec<f64>,
    pub dk: Vec<f64>,
    /// Dq Dp, the product of classical-sector standard deviations.
    pub dqdp: Vec<f64>,
    /// Dx Dk, the product of quantum-sector standard deviations.
    pub dxdk: Vec<f64>,
    /// Dq Dp + Dx Dk.
    pub total: Vec<f64>,
}

impl DispersionSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Evolve the initial covariance over a uniform grid and record the
/// dispersion products Dq = sqrt(Sigma_qq) etc. at every grid time.
pub fn dispersion_series(cfg: &OscPairConfig, t_max: f64, dt: f64) -> Result<DispersionSeries> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    if t_max < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be nonnegative, got {t_max}"
        )));
    }
    let state = initial_state(cfg)?;
    let engine = AnalyticFlow::new(flow(cfg))?;
    let steps = (t_max / dt + 1e-9).floor() as usize;
    let mut series = DispersionSeries::default();
    for i in 0..=steps {
        let t = i as f64 * dt;
        let u = engine.at(t);
        let c = u.matrix() * &state.cov * u.matrix().transpose();
        let dq = c[(0, 0)].max(0.0).sqrt();
        let dp = c[(1, 1)].max(0.0).sqrt();
        let dx = c[(2, 2)].max(0.0).sqrt();
        let dk = c[(3, 3)].max(0.0).sqrt();
        series.times.push(t);
        series.dq.push(dq);
        series.dp.push(dp);
        series.dx.push(dx);
        series.dk.push(dk);
        series.dqdp.push(dq * dp);
        series.dxdk.push(dx * dk);
        series.total.push(dq * dp + dx * dk);
    }
    Ok(series)
}

/// Minimum of Dq Dp + Dx Dk over the series.
pub fn total_uncertainty_min(series: &DispersionSeries) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("empty dispersion series".into()));
    }
    Ok(series.total.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Chunk width of the Monte-Carlo accumulator. Chunk sums are combined in
/// index order, so the result is bitwise independent of the worker count.
const MC_CHUNK: usize = 4096;

/// Independent sampling oracle for the covariance propagation: draw initial
/// points from the delta x Gaussian initial data, transport each one by the
/// evolution matrix, and estimate the transported mean and covariance.
///
/// Sample i derives its randomness from RNG stream i of the given seed, so
/// the estimate is reproducible for any sharding of the index range. The
/// deterministic part of the transport is handled separately, which keeps
/// sectors with no sampled noise (the sharp classical point at gamma = 0)
/// at exactly zero covariance.
pub fn monte_carlo_covariance(
    cfg: &OscPairConfig,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<MomentState> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    cfg.validate()?;
    let u = AnalyticFlow::new(flow(cfg))?.at(t);
    let um = u.matrix();
    let u4 = nalgebra::Matrix4::from_fn(|i, j| um[(i, j)]);
    let deterministic = u4 * Vector4::new(cfg.q0, cfg.p0, cfg.x0, cfg.k0);

    let n_chunks = n.div_ceil(MC_CHUNK);
    let partials: Vec<(Vector4<f64>, nalgebra::Matrix4<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * MC_CHUNK;
            let hi = ((chunk + 1) * MC_CHUNK).min(n);
            let mut sum = Vector4::zeros();
            let mut outer = nalgebra::Matrix4::zeros();
            for i in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let zx: f64 = rng.sample(StandardNormal);
                let zk: f64 = rng.sample(StandardNormal);
                let noise = Vector4::new(0.0, 0.0, cfg.sigma_x * zx, cfg.sigma_k * zk);
                let y = u4 * noise;
                sum += y;
                outer += y * y.transpose();
            }
            (sum, outer)
        })
        .collect();

    let mut sum = Vector4::zeros();
    let mut outer = nalgebra::Matrix4::zeros();
    for (s, o) in partials {
        sum += s;
        outer += o;
    }
    let nf = n as f64;
    let mean_noise = sum / nf;
    let cov = (outer - sum * sum.transpose() / nf) / (nf - 1.0);
    let mean = deterministic + mean_noise;
    let cov = (cov + cov.transpose()).scale(0.5);
    MomentState::new(
        DVector::from_row_slice(mean.as_slice()),
        DMatrix::from_fn(4, 4, |i, j| cov[(i, j)]),
    )
}
