//! Fixed-step RK4 integration of a conditioned vector field.

use crate::error::{check_len, Error, Result};
use crate::flow::{LatentVector, MappingContext, SolverConfig};

/// Step used by [`FnDynamics`] for its finite-difference Jacobian trace.
pub const TRACE_FD_STEP: f64 = 1e-5;

/// A time- and score-conditioned vector field `dw/dt = phi(w, (t, s))`.
pub trait Dynamics {
    fn dim(&self) -> usize;

    fn velocity(&self, w: &[f64], ctx: MappingContext) -> Result<Vec<f64>>;

    /// Velocity together with the trace of its Jacobian in `w`.
    fn velocity_and_trace(&self, w: &[f64], ctx: MappingContext) -> Result<(Vec<f64>, f64)>;
}

/// Adapts a closure to [`Dynamics`]. The trace is obtained from `d`
/// central-difference directional derivatives.
pub struct FnDynamics<F> {
    dim: usize,
    f: F,
}

impl<F> FnDynamics<F>
where
    F: Fn(&[f64], MappingContext) -> Vec<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(&[f64], MappingContext) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, w: &[f64], ctx: MappingContext) -> Result<Vec<f64>> {
        let v = (self.f)(w, ctx);
        check_len("dynamics output", self.dim, v.len())?;
        Ok(v)
    }

    fn velocity_and_trace(&self, w: &[f64], ctx: MappingContext) -> Result<(Vec<f64>, f64)> {
        let v = self.velocity(w, ctx)?;
        let mut probe = w.to_vec();
        let mut trace = 0.0;
        for i in 0..self.dim {
            probe[i] = w[i] + TRACE_FD_STEP;
            let up = (self.f)(&probe, ctx)[i];
            probe[i] = w[i] - TRACE_FD_STEP;
            let dn = (self.f)(&probe, ctx)[i];
            probe[i] = w[i];
            trace += (up - dn) / (2.0 * TRACE_FD_STEP);
        }
        Ok((v, trace))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `t` runs from 0 to 1.
    Forward,
    /// `t` runs from 1 to 0.
    Reverse,
}

impl Direction {
    pub(crate) fn start_and_step(self, steps: usize) -> (f64, f64) {
        let h = 1.0 / steps as f64;
        match self {
            Direction::Forward => (0.0, h),
            Direction::Reverse => (1.0, -h),
        }
    }
}

/// Time of step `k` for a grid starting at `t0` with signed step `h`.
/// Snapped to the interval so round-off never leaves `[0, 1]`.
pub(crate) fn grid_time(t0: f64, h: f64, k: usize) -> f64 {
    (t0 + h * k as f64).clamp(0.0, 1.0)
}

pub(crate) fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(y, x)| y + a * x).collect()
}

/// Integrates one block over `[0, 1]` in the requested direction with the
/// score held fixed while `t` advances.
pub fn integrate(
    dynamics: &dyn Dynamics,
    w0: &LatentVector,
    score: f64,
    direction: Direction,
    solver: &SolverConfig,
) -> Result<LatentVector> {
    run(dynamics, w0, score, direction, solver, false).map(|(w, _)| w)
}

/// Like [`integrate`] but also accumulates `int tr(d phi / d w) dt` along the
/// path, with `dt` signed by the direction of travel.
pub fn integrate_with_trace(
    dynamics: &dyn Dynamics,
    w0: &LatentVector,
    score: f64,
    direction: Direction,
    solver: &SolverConfig,
) -> Result<(LatentVector, f64)> {
    run(dynamics, w0, score, direction, solver, true)
}

fn run(
    dynamics: &dyn Dynamics,
    w0: &LatentVector,
    score: f64,
    direction: Direction,
    solver: &SolverConfig,
    with_trace: bool,
) -> Result<(LatentVector, f64)> {
    solver.validate()?;
    crate::flow::check_score(score)?;
    check_len("latent", dynamics.dim(), w0.len())?;
    let (t0, h) = direction.start_and_step(solver.steps);
    let field = |w: &[f64], t: f64| -> Result<(Vec<f64>, f64)> {
        let ctx = MappingContext::new(t, score);
        if with_trace {
            dynamics.velocity_and_trace(w, ctx)
        } else {
            dynamics.velocity(w, ctx).map(|v| (v, 0.0))
        }
    };
    let mut y = w0.as_slice().to_vec();
    let mut acc = 0.0;
    for k in 0..solver.steps {
        let t = grid_time(t0, h, k);
        let t_mid = (t + 0.5 * h).clamp(0.0, 1.0);
        let t_end = grid_time(t0, h, k + 1);
        let (k1, r1) = field(&y, t)?;
        let (k2, r2) = field(&axpy(&y, 0.5 * h, &k1), t_mid)?;
        let (k3, r3) = field(&axpy(&y, 0.5 * h, &k2), t_mid)?;
        let (k4, r4) = field(&axpy(&y, h, &k3), t_end)?;
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        acc += h / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
        if y.iter().any(|v| !v.is_finite()) || !acc.is_finite() {
            return Err(Error::Divergence { step: k });
        }
    }
    Ok((LatentVector(y), acc))
}
