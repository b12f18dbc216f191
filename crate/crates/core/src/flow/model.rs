use serde::{Deserialize, Serialize};

use crate::binfmt::round_to_f32;
use crate::error::{check_len, Error, Result};
use crate::flow::block::{BlockField, TapeLayout};
use crate::flow::layer::{layer_param_count, LayerRef, CONTEXT_WIDTH};
use crate::flow::ode::Dynamics;
use crate::flow::{ConcatSquashLayer, LatentVector, MappingContext, SolverConfig};
use crate::rng::{normal, substream};

/// Architecture of a flow: every block is `d -> hidden... -> d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub num_blocks: usize,
    pub solver: SolverConfig,
    /// Std of initial weights is `gain / sqrt(fan_in)`; the output layer
    /// of each block is further scaled by `output_gain`.
    pub init_gain: f64,
    pub output_gain: f64,
}

impl FlowConfig {
    pub fn new(dim: usize, hidden: Vec<usize>, num_blocks: usize) -> Self {
        Self {
            dim,
            hidden,
            num_blocks,
            solver: SolverConfig::default(),
            init_gain: 1.0,
            output_gain: 0.1,
        }
    }

    /// Toy-world default: 12-d latents, 4 blocks of `12 -> 32 -> 12`.
    pub fn desk(dim: usize) -> Self {
        Self::new(dim, vec![32], 4)
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.dim];
        w.extend_from_slice(&self.hidden);
        w.push(self.dim);
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerLayout {
    pub d_in: usize,
    pub d_out: usize,
    pub offset: usize,
}

/// Stacked conditional CNF blocks for a single attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct CnfModel {
    dim: usize,
    attribute: String,
    solver: SolverConfig,
    blocks: Vec<Vec<LayerLayout>>,
    tapes: Vec<TapeLayout>,
    params: Vec<f64>,
}

impl CnfModel {
    /// Builds a model from per-block layer widths (`[d, ..., d]` each) and a
    /// flat parameter vector.
    pub fn from_parts(
        dim: usize,
        block_widths: &[Vec<usize>],
        params: Vec<f64>,
        attribute: impl Into<String>,
        solver: SolverConfig,
    ) -> Result<Self> {
        solver.validate()?;
        if dim == 0 || block_widths.is_empty() {
            return Err(Error::invalid("flow needs d >= 1 and at least one block"));
        }
        let mut blocks = Vec::with_capacity(block_widths.len());
        let mut offset = 0;
        for widths in block_widths {
            if widths.len() < 2
                || widths[0] != dim
                || *widths.last().unwrap() != dim
                || widths.contains(&0)
            {
                return Err(Error::invalid(format!(
                    "block widths {widths:?} do not map {dim} -> {dim}"
                )));
            }
            let layers = widths
                .windows(2)
                .map(|w| {
                    let l = LayerLayout {
                        d_in: w[0],
                        d_out: w[1],
                        offset,
                    };
                    offset += layer_param_count(w[0], w[1]);
                    l
                })
                .collect();
            blocks.push(layers);
        }
        check_len("flow parameters", offset, params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite flow parameter"));
        }
        let tapes = block_widths.iter().map(|w| TapeLayout::new(w)).collect();
        Ok(Self {
            dim,
            attribute: attribute.into(),
            solver,
            blocks,
            tapes,
            params,
        })
    }

    pub fn zeros(cfg: &FlowConfig, attribute: impl Into<String>) -> Result<Self> {
        let widths = vec![cfg.widths(); cfg.num_blocks];
        let n = widths
            .iter()
            .map(|w| {
                w.windows(2)
                    .map(|p| layer_param_count(p[0], p[1]))
                    .sum::<usize>()
            })
            .sum();
        Self::from_parts(cfg.dim, &widths, vec![0.0; n], attribute, cfg.solver)
    }

    /// Seeded random initialization. Gate and context weights start small so
    /// the initial flow is a mild perturbation of the identity.
    pub fn init(cfg: &FlowConfig, attribute: impl Into<String>, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(cfg, attribute)?;
        let mut rng = substream(seed, 0x636e66);
        for block in &model.blocks {
            let last = block.len() - 1;
            for (li, l) in block.iter().enumerate() {
                let gain = if li == last {
                    cfg.init_gain * cfg.output_gain
                } else {
                    cfg.init_gain
                };
                let std = gain / (l.d_in as f64).sqrt();
                let n = layer_param_count(l.d_in, l.d_out);
                let p = &mut model.params[l.offset..l.offset + n];
                let (w, rest) = p.split_at_mut(l.d_out * l.d_in);
                w.iter_mut().for_each(|v| *v = std * normal(&mut rng));
                let (_b, rest) = rest.split_at_mut(l.d_out);
                let (wg, rest) = rest.split_at_mut(l.d_out * CONTEXT_WIDTH);
                wg.iter_mut().for_each(|v| *v = 0.1 * normal(&mut rng));
                let (_bg, wc) = rest.split_at_mut(l.d_out);
                wc.iter_mut()
                    .for_each(|v| *v = 0.1 * gain * normal(&mut rng));
            }
        }
        round_to_f32(&mut model.params);
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn set_solver(&mut self, solver: SolverConfig) -> Result<()> {
        solver.validate()?;
        self.solver = solver;
        Ok(())
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Layer widths of each block, e.g. `[[12, 32, 12], ...]`.
    pub fn block_widths(&self) -> Vec<Vec<usize>> {
        self.blocks
            .iter()
            .map(|b| {
                let mut w = vec![b[0].d_in];
                w.extend(b.iter().map(|l| l.d_out));
                w
            })
            .collect()
    }

    pub fn layer(&self, block: usize, layer: usize) -> ConcatSquashLayer {
        let l = &self.blocks[block][layer];
        ConcatSquashLayer::from_flat(
            l.d_in,
            l.d_out,
            &self.params[l.offset..l.offset + layer_param_count(l.d_in, l.d_out)],
        )
    }

    pub fn set_layer(
        &mut self,
        block: usize,
        layer: usize,
        value: &ConcatSquashLayer,
    ) -> Result<()> {
        value.validate()?;
        let l = &self.blocks[block][layer];
        check_len("layer d_in", l.d_in, value.d_in)?;
        check_len("layer d_out", l.d_out, value.d_out)?;
        let n = layer_param_count(l.d_in, l.d_out);
        self.params[l.offset..l.offset + n].copy_from_slice(&value.to_flat());
        Ok(())
    }

    pub(crate) fn layer_ref(&self, l: &LayerLayout) -> LayerRef<'_> {
        LayerRef::new(
            l.d_in,
            l.d_out,
            &self.params[l.offset..l.offset + layer_param_count(l.d_in, l.d_out)],
        )
    }

    pub(crate) fn layouts(&self, block: usize) -> &[LayerLayout] {
        &self.blocks[block]
    }

    pub(crate) fn tape_layout(&self, block: usize) -> &TapeLayout {
        &self.tapes[block]
    }

    /// The vector field of one block.
    pub fn block(&self, index: usize) -> BlockField<'_> {
        BlockField::new(self, index)
    }

    /// Evaluates block `block_index`'s dynamics at `(w, ctx)`.
    pub fn dynamics_eval(
        &self,
        block_index: usize,
        w: &LatentVector,
        ctx: MappingContext,
    ) -> Result<Vec<f64>> {
        if block_index >= self.num_blocks() {
            return Err(Error::invalid(format!(
                "block index {block_index} out of range for {} blocks",
                self.num_blocks()
            )));
        }
        ctx.validate()?;
        self.block(block_index).velocity(w.as_slice(), ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded_model(dim: usize, hidden: Vec<usize>, seed: u64) -> CnfModel {
        let mut cfg = FlowConfig::new(dim, hidden, 2);
        cfg.output_gain = 1.0;
        CnfModel::init(&cfg, "test", seed).unwrap()
    }

    #[test]
    fn zero_model_has_zero_dynamics() {
        let m = CnfModel::zeros(&FlowConfig::desk(12), "trustworthiness").unwrap();
        let w = LatentVector::new((0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let v = m
            .dynamics_eval(3, &w, MappingContext::new(0.2, 0.9))
            .unwrap();
        assert_eq!(v, vec![0.0; 12]);
    }

    #[test]
    fn single_layer_identity_pass_through() {
        let mut m = CnfModel::zeros(&FlowConfig::new(3, vec![], 1), "test").unwrap();
        let mut layer = ConcatSquashLayer::zeros(3, 3);
        for i in 0..3 {
            // the zero gate contributes sigmoid(0) = 1/2
            layer.w[i * 3 + i] = 2.0;
        }
        m.set_layer(0, 0, &layer).unwrap();
        let w = LatentVector::new(vec![0.4, -1.25, 3.0]).unwrap();
        let v = m
            .dynamics_eval(0, &w, MappingContext::new(0.7, 0.1))
            .unwrap();
        assert_eq!(v, w.as_slice());
    }

    #[test]
    fn two_layer_block_matches_hand_composition() {
        let m = seeded_model(2, vec![3], 5);
        let w = [0.3, -0.2];
        let ctx = MappingContext::new(0.0, 0.5);
        let got = m
            .dynamics_eval(0, &LatentVector::new(w.to_vec()).unwrap(), ctx)
            .unwrap();
        let h: Vec<f64> = m
            .layer(0, 0)
            .apply(&w, ctx)
            .unwrap()
            .iter()
            .map(|v| v.tanh())
            .collect();
        let want = m.layer(0, 1).apply(&h, ctx).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn block_index_out_of_range() {
        let m = CnfModel::zeros(&FlowConfig::desk(4), "x").unwrap();
        assert!(m
            .dynamics_eval(4, &LatentVector::zeros(4), MappingContext::new(0.0, 0.5))
            .is_err());
    }
}
