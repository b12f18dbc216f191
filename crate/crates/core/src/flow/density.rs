use std::f64::consts::PI;

use crate::error::{check_len, Result};
use crate::flow::ode::{integrate, integrate_with_trace, Direction, Dynamics};
use crate::flow::{check_score, CnfModel, LatentVector, SolverConfig};

pub fn standard_normal_log_pdf(z: &[f64]) -> f64 {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * sq - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

/// Base code `z` to latent `w`: every block integrated forward, in order.
pub fn forward_map(model: &CnfModel, z: &LatentVector, score: f64) -> Result<LatentVector> {
    check_score(score)?;
    check_len("latent", model.dim(), z.len())?;
    let mut w = z.clone();
    for b in 0..model.num_blocks() {
        w = integrate(
            &model.block(b),
            &w,
            score,
            Direction::Forward,
            model.solver(),
        )?;
    }
    Ok(w)
}

/// Latent `w` back to its base code: blocks inverted in reverse order.
pub fn reverse_map(model: &CnfModel, w: &LatentVector, score: f64) -> Result<LatentVector> {
    check_score(score)?;
    check_len("latent", model.dim(), w.len())?;
    let mut z = w.clone();
    for b in (0..model.num_blocks()).rev() {
        z = integrate(
            &model.block(b),
            &z,
            score,
            Direction::Reverse,
            model.solver(),
        )?;
    }
    Ok(z)
}

/// `log p(w | score)` by the instantaneous change of variables along the
/// reverse trajectory.
pub fn log_density(model: &CnfModel, w: &LatentVector, score: f64) -> Result<f64> {
    let blocks: Vec<_> = (0..model.num_blocks()).map(|b| model.block(b)).collect();
    let dyns: Vec<&dyn Dynamics> = blocks.iter().map(|b| b as &dyn Dynamics).collect();
    log_density_blocks(&dyns, w, score, model.solver())
}

/// [`log_density`] for an arbitrary stack of block dynamics (applied
/// forward in slice order).
pub fn log_density_blocks(
    blocks: &[&dyn Dynamics],
    w: &LatentVector,
    score: f64,
    solver: &SolverConfig,
) -> Result<f64> {
    check_score(score)?;
    let mut z = w.clone();
    // Integrating t: 1 -> 0 yields -int_0^1 tr dt for each block.
    let mut log_det = 0.0;
    for block in blocks.iter().rev() {
        let (next, acc) = integrate_with_trace(*block, &z, score, Direction::Reverse, solver)?;
        z = next;
        log_det += acc;
    }
    Ok(standard_normal_log_pdf(z.as_slice()) + log_det)
}
