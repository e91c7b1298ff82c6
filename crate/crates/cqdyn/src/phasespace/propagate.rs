//! Analytic and fixed-step numeric propagation of linear moment flows.

use nalgebra::{DMatrix, DVector};

use super::linalg::ExpEngine;
use super::MomentState;
use crate::error::{Error, Result};

/// The evolution matrix U(t) = exp(A t) of a linear flow, together with the
/// generator it exponentiates.
pub struct Propagator {
    u: DMatrix<f64>,
    t: f64,
    flow: DMatrix<f64>,
}

impl Propagator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn flow(&self) -> &DMatrix<f64> {
        &self.flow
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }
}

/// A linear generator with its cached exponentiation strategy; evaluating
/// U(t) at many times reuses the spectral data.
pub struct AnalyticFlow {
    flow: DMatrix<f64>,
    engine: ExpEngine,
}

impl AnalyticFlow {
    pub fn new(flow: DMatrix<f64>) -> Result<Self> {
        if flow.nrows() != flow.ncols() {
            return Err(Error::DimensionMismatch {
                context: "flow generator",
                left: flow.nrows(),
                right: flow.ncols(),
            });
        }
        let engine = ExpEngine::new(&flow);
        Ok(AnalyticFlow { flow, engine })
    }

    pub fn at(&self, t: f64) -> Propagator {
        Propagator {
            u: self.engine.exp_t(&self.flow, t),
            t,
            flow: self.flow.clone(),
        }
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.flow
    }
}

/// U(t) = exp(flow * t). Callers evaluating a whole time grid should build an
/// [`AnalyticFlow`] once instead.
pub fn propagate_analytic(flow: &DMatrix<f64>, t: f64) -> Result<Propagator> {
    Ok(AnalyticFlow::new(flow.clone())?.at(t))
}

/// Transport a moment state: mean -> U mean, cov -> U cov U^T (re-symmetrized).
pub fn evolve_moments(state: &MomentState, prop: &Propagator) -> Result<MomentState> {
    let u = prop.matrix();
    if u.ncols() != state.dim() {
        return Err(Error::DimensionMismatch {
            context: "evolve_moments",
            left: u.ncols(),
            right: state.dim(),
        });
    }
    let mean = u * &state.mean;
    let raw = u * &state.cov * u.transpose();
    let cov = (&raw + raw.transpose()).scale(0.5);
    Ok(MomentState { mean, cov })
}

/// Fixed-step classical RK4 on the closed moment equations
/// dm/dt = A m, dSigma/dt = A Sigma + Sigma A^T.
pub fn propagate_numeric(
    flow: &DMatrix<f64>,
    state: &MomentState,
    t: f64,
    dt: f64,
) -> Result<MomentState> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    if flow.nrows() != state.dim() {
        return Err(Error::DimensionMismatch {
            context: "propagate_numeric",
            left: flow.nrows(),
            right: state.dim(),
        });
    }
    let mut mean = state.mean.clone();
    let mut cov = state.cov.clone();
    let mut step = 0usize;
    for h in step_sizes(t, dt) {
        rk4_moment_step(flow, &mut mean, &mut cov, h);
        step += 1;
        if !mean.iter().all(|x| x.is_finite()) || !cov.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { step });
        }
    }
    let cov = (&cov + cov.transpose()).scale(0.5);
    Ok(MomentState { mean, cov })
}

fn rk4_moment_step(a: &DMatrix<f64>, mean: &mut DVector<f64>, cov: &mut DMatrix<f64>, h: f64) {
    let fm = |m: &DVector<f64>| a * m;
    let fc = |c: &DMatrix<f64>| a * c + c * a.transpose();

    let k1m = fm(mean);
    let k1c = fc(cov);
    let k2m = fm(&(&*mean + k1m.scale(h / 2.0)));
    let k2c = fc(&(&*cov + k1c.scale(h / 2.0)));
    let k3m = fm(&(&*mean + k2m.scale(h / 2.0)));
    let k3c = fc(&(&*cov + k2c.scale(h / 2.0)));
    let k4m = fm(&(&*mean + k3m.scale(h)));
    let k4c = fc(&(&*cov + k3c.scale(h)));

    *mean += (k1m + k2m.scale(2.0) + k3m.scale(2.0) + k4m).scale(h / 6.0);
    *cov += (k1c + k2c.scale(2.0) + k3c.scale(2.0) + k4c).scale(h / 6.0);
}

/// One classical RK4 step for a generic right-hand side.
pub fn rk4_step<F>(rhs: &F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + h / 2.0, &(y + k1.scale(h / 2.0)));
    let k3 = rhs(t + h / 2.0, &(y + k2.scale(h / 2.0)));
    let k4 = rhs(t + h, &(y + k3.scale(h)));
    y + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0)
}

/// Integrate dy/dt = rhs(t, y) from 0 to t with fixed step dt, aborting on
/// non-finite intermediates.
pub fn rk4_integrate<F>(rhs: &F, y0: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    let mut y = y0.clone();
    let mut now = 0.0;
    let mut step = 0usize;
    for h in step_sizes(t, dt) {
        y = rk4_step(rhs, now, &y, h);
        now += h;
        step += 1;
        if !y.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { step });
        }
    }
    Ok(y)
}

/// Full steps of dt covering [0, t], with one shorter final step when t is
/// not an exact multiple.
fn step_sizes(t: f64, dt: f64) -> impl Iterator<Item = f64> {
    let n_full = (t / dt + 1e-9).floor() as usize;
    let rem = t - n_full as f64 * dt;
    let tail = if rem > dt * 1e-9 { Some(rem) } else { None };
    std::iter::repeat(dt).take(n_full).chain(tail)
}
