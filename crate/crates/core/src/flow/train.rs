//! Maximum-likelihood training of a [`CnfModel`].
//!
//! Gradients are exact for the discretized objective: the RK4 steps are
//! unrolled and each stage is backpropagated through the block tape,
//! including the Jacobian-trace term.

use crate::binfmt::round_to_f32;
use crate::error::{check_len, Error, Result};
use crate::flow::density::standard_normal_log_pdf;
use crate::flow::ode::{grid_time, Direction};
use crate::flow::{check_score, CnfModel, LatentVector, MappingContext};
use crate::nn::{Adam, TrainConfig};
use crate::rng::substream;

#[derive(Clone, Debug)]
pub struct MapperTraining {
    pub model: CnfModel,
    /// Mean minibatch negative log-likelihood per iteration.
    pub losses: Vec<f64>,
}

/// Reusable buffers for [`sample_nll`]: one forward tape per RK4 stage.
struct Workspace {
    tapes: Vec<f64>,
    stride: usize,
    scratch: Vec<f64>,
    stage: Vec<f64>,
    stage_bar: Vec<f64>,
    products: Vec<Vec<f64>>,
    outer: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(model: &CnfModel) -> Self {
        let stride = (0..model.num_blocks())
            .map(|b| model.tape_layout(b).len())
            .max()
            .unwrap_or(0);
        let n = 4 * model.solver().steps * model.num_blocks();
        Self {
            tapes: vec![0.0; n * stride],
            stride,
            scratch: vec![0.0; stride],
            stage: vec![0.0; model.dim()],
            stage_bar: vec![0.0; model.dim()],
            products: vec![vec![]; model.num_blocks()],
            outer: vec![vec![]; model.num_blocks()],
        }
    }

    /// Refreshes the per-block trace factors after a parameter update.
    fn prepare(&mut self, model: &CnfModel) {
        for b in 0..model.num_blocks() {
            model.block(b).diag_products_into(&mut self.products[b]);
            self.outer[b].clear();
            self.outer[b].resize(self.products[b].len(), 0.0);
        }
    }

    /// Moves the collected trace gradients into `grad`.
    fn flush(&mut self, model: &CnfModel, grad: &mut [f64]) {
        for b in 0..model.num_blocks() {
            model.block(b).fold_outer(&self.outer[b], grad);
            self.outer[b].fill(0.0);
        }
    }
}

/// Negative log-likelihood of one sample; its parameter gradient is added to
/// `grad` except for the trace part held in the workspace until
/// [`Workspace::flush`].
fn sample_nll(
    model: &CnfModel,
    w: &[f64],
    score: f64,
    grad: &mut [f64],
    ws: &mut Workspace,
) -> Result<f64> {
    let steps = model.solver().steps;
    let d = model.dim();
    let (t0, h) = Direction::Reverse.start_and_step(steps);
    let times = |k: usize| {
        let t = grid_time(t0, h, k);
        let t_mid = (t + 0.5 * h).clamp(0.0, 1.0);
        [t, t_mid, t_mid, grid_time(t0, h, k + 1)]
    };
    let coefs = [0.0, 0.5 * h, 0.5 * h, h];
    let weights = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
    let stride = ws.stride;
    let mut y = w.to_vec();
    let mut log_det = 0.0;
    let mut slot = 0;
    for b in (0..model.num_blocks()).rev() {
        let field = model.block(b).with_products(&ws.products[b]);
        let lay = field.layout();
        for k in 0..steps {
            let ts = times(k);
            let mut incr = vec![0.0; d];
            for s in 0..4 {
                if s == 0 {
                    ws.stage.copy_from_slice(&y);
                } else {
                    let prev = &ws.tapes[(slot - 1) * stride..slot * stride];
                    let k_prev = lay.out(prev);
                    for i in 0..d {
                        ws.stage[i] = y[i] + coefs[s] * k_prev[i];
                    }
                }
                let tape = &mut ws.tapes[slot * stride..(slot + 1) * stride];
                field.eval_into(&ws.stage, MappingContext::new(ts[s], score), true, tape)?;
                for (a, v) in incr.iter_mut().zip(lay.out(tape)) {
                    *a += weights[s] * v;
                }
                log_det += weights[s] * lay.trace(tape);
                slot += 1;
            }
            for (yi, a) in y.iter_mut().zip(&incr) {
                *yi += a;
            }
        }
    }
    let nll = -(standard_normal_log_pdf(&y) + log_det);
    if !nll.is_finite() {
        return Ok(nll);
    }

    // d nll / d z = z ; d nll / d log_det = -1
    let mut y_bar = y;
    let trace_adj = -1.0;
    for b in 0..model.num_blocks() {
        let field = model.block(b).with_products(&ws.products[b]);
        for k in (0..steps).rev() {
            let ts = times(k);
            let mut k_bar: [Vec<f64>; 4] =
                std::array::from_fn(|s| y_bar.iter().map(|v| v * weights[s]).collect());
            for s in (0..4).rev() {
                slot -= 1;
                let tape = &ws.tapes[slot * stride..(slot + 1) * stride];
                let ctx = MappingContext::new(ts[s], score);
                field.backward_into(
                    tape,
                    ctx,
                    &k_bar[s],
                    trace_adj * weights[s],
                    grad,
                    &mut ws.scratch,
                    &mut ws.stage_bar,
                    Some(&mut ws.outer[b]),
                );
                for (yb, sb) in y_bar.iter_mut().zip(&ws.stage_bar) {
                    *yb += sb;
                }
                if s > 0 {
                    for (kb, sb) in k_bar[s - 1].iter_mut().zip(&ws.stage_bar) {
                        *kb += coefs[s] * sb;
                    }
                }
            }
        }
    }
    Ok(nll)
}

/// Mean negative log-likelihood of a batch and its gradient with respect to
/// the flat parameter vector.
pub fn nll_and_gradient(
    model: &CnfModel,
    batch: &[(LatentVector, f64)],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut grad = vec![0.0; model.param_count()];
    let mut ws = Workspace::new(model);
    ws.prepare(model);
    let mut total = 0.0;
    for (w, s) in batch {
        check_len("latent", model.dim(), w.len())?;
        check_score(*s)?;
        total += sample_nll(model, w.as_slice(), *s, &mut grad, &mut ws)?;
    }
    ws.flush(model, &mut grad);
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Minimizes the mean negative log-likelihood of `(latent, score)` pairs by
/// minibatch Adam, starting from `init`.
pub fn train_mapper(
    init: CnfModel,
    dataset: &[(LatentVector, f64)],
    cfg: &TrainConfig,
) -> Result<MapperTraining> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (w, s) in dataset {
        check_len("latent", init.dim(), w.len())?;
        check_score(*s)?;
    }
    let mut model = init;
    let mut rng = substream(cfg.seed, 0x6d6170);
    let mut adam = Adam::new(model.param_count(), cfg);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut grad = vec![0.0; model.param_count()];
    let mut ws = Workspace::new(&model);
    for it in 0..cfg.iterations {
        grad.fill(0.0);
        let batch = cfg.sample_batch(&mut rng, dataset.len());
        ws.prepare(&model);
        let mut loss = 0.0;
        for &i in &batch {
            let (w, s) = &dataset[i];
            loss +=
                sample_nll(&model, w.as_slice(), *s, &mut grad, &mut ws).map_err(|e| match e {
                    Error::NonFinite { .. } | Error::Divergence { .. } => {
                        Error::NonFiniteLoss { iteration: it }
                    }
                    other => other,
                })?;
        }
        ws.flush(&model, &mut grad);
        let n = batch.len() as f64;
        loss /= n;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        grad.iter_mut().for_each(|g| *g /= n);
        adam.step(model.params_mut(), &grad);
        losses.push(loss);
    }
    if cfg.iterations > 0 {
        round_to_f32(model.params_mut());
    }
    Ok(MapperTraining { model, losses })
}
