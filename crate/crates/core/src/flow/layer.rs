use crate::error::{check_len, Error, Result};
use crate::flow::MappingContext;
use crate::nn::{dot, sigmoid};

/// Width of the conditioning vector `(t, score)`.
pub const CONTEXT_WIDTH: usize = 2;

/// Number of parameters of a ConcatSquash layer `d_in -> d_out`.
pub const fn layer_param_count(d_in: usize, d_out: usize) -> usize {
    d_out * d_in + d_out + d_out * CONTEXT_WIDTH + d_out + d_out * CONTEXT_WIDTH
}

/// Context-gated linear layer:
/// `(W x + b) * sigmoid(W_g c + b_g) + W_c c` with `c = (t, score)`.
///
/// Matrices are row-major `d_out x d_in` (`W`) and `d_out x 2` (`W_g`, `W_c`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConcatSquashLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub w_gate: Vec<f64>,
    pub b_gate: Vec<f64>,
    pub w_ctx: Vec<f64>,
}

impl ConcatSquashLayer {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            w: vec![0.0; d_out * d_in],
            b: vec![0.0; d_out],
            w_gate: vec![0.0; d_out * CONTEXT_WIDTH],
            b_gate: vec![0.0; d_out],
            w_ctx: vec![0.0; d_out * CONTEXT_WIDTH],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_len("ConcatSquash W", self.d_out * self.d_in, self.w.len())?;
        check_len("ConcatSquash b", self.d_out, self.b.len())?;
        check_len(
            "ConcatSquash W_g",
            self.d_out * CONTEXT_WIDTH,
            self.w_gate.len(),
        )?;
        check_len("ConcatSquash b_g", self.d_out, self.b_gate.len())?;
        check_len(
            "ConcatSquash W_c",
            self.d_out * CONTEXT_WIDTH,
            self.w_ctx.len(),
        )?;
        let all = [&self.w, &self.b, &self.w_gate, &self.b_gate, &self.w_ctx];
        if all.iter().any(|v| v.iter().any(|p| !p.is_finite())) {
            return Err(Error::invalid("non-finite ConcatSquash parameter"));
        }
        Ok(())
    }

    /// Flat parameter order used by [`crate::flow::CnfModel`].
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.w, &self.b, &self.w_gate, &self.b_gate, &self.w_ctx]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn from_flat(d_in: usize, d_out: usize, flat: &[f64]) -> Self {
        let v = LayerRef::new(d_in, d_out, flat);
        Self {
            d_in,
            d_out,
            w: v.w.to_vec(),
            b: v.b.to_vec(),
            w_gate: v.w_gate.to_vec(),
            b_gate: v.b_gate.to_vec(),
            w_ctx: v.w_ctx.to_vec(),
        }
    }

    pub fn apply(&self, x: &[f64], ctx: MappingContext) -> Result<Vec<f64>> {
        self.validate()?;
        check_len("ConcatSquash input", self.d_in, x.len())?;
        ctx.validate()?;
        let flat = self.to_flat();
        let layer = LayerRef::new(self.d_in, self.d_out, &flat);
        let mut pre = vec![0.0; self.d_out];
        let mut gate = vec![0.0; self.d_out];
        let mut out = vec![0.0; self.d_out];
        layer.eval(x, &ctx.as_array(), &mut pre, &mut gate, &mut out);
        Ok(out)
    }
}

/// Borrowed view of one layer inside a flat parameter vector.
#[derive(Clone, Copy)]
pub(crate) struct LayerRef<'a> {
    pub d_in: usize,
    pub d_out: usize,
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub w_gate: &'a [f64],
    pub b_gate: &'a [f64],
    pub w_ctx: &'a [f64],
}

impl<'a> LayerRef<'a> {
    pub fn new(d_in: usize, d_out: usize, flat: &'a [f64]) -> Self {
        debug_assert_eq!(flat.len(), layer_param_count(d_in, d_out));
        let (w, rest) = flat.split_at(d_out * d_in);
        let (b, rest) = rest.split_at(d_out);
        let (w_gate, rest) = rest.split_at(d_out * CONTEXT_WIDTH);
        let (b_gate, w_ctx) = rest.split_at(d_out);
        Self {
            d_in,
            d_out,
            w,
            b,
            w_gate,
            b_gate,
            w_ctx,
        }
    }

    /// Writes the linear part `W x + b`, the gate and the layer output.
    pub fn eval(
        &self,
        x: &[f64],
        c: &[f64; 2],
        pre: &mut [f64],
        gate: &mut [f64],
        out: &mut [f64],
    ) {
        for o in 0..self.d_out {
            let a = self.b[o] + dot(&self.w[o * self.d_in..(o + 1) * self.d_in], x);
            let gw = &self.w_gate[o * CONTEXT_WIDTH..(o + 1) * CONTEXT_WIDTH];
            let cw = &self.w_ctx[o * CONTEXT_WIDTH..(o + 1) * CONTEXT_WIDTH];
            let g = sigmoid(gw[0] * c[0] + gw[1] * c[1] + self.b_gate[o]);
            pre[o] = a;
            gate[o] = g;
            out[o] = a * g + cw[0] * c[0] + cw[1] * c[1];
        }
    }
}

/// Mutable gradient view with the same layout as [`LayerRef`].
pub(crate) struct LayerGrad<'a> {
    pub w: &'a mut [f64],
    pub b: &'a mut [f64],
    pub w_gate: &'a mut [f64],
    pub b_gate: &'a mut [f64],
    pub w_ctx: &'a mut [f64],
}

impl<'a> LayerGrad<'a> {
    pub fn new(d_in: usize, d_out: usize, flat: &'a mut [f64]) -> Self {
        let (w, rest) = flat.split_at_mut(d_out * d_in);
        let (b, rest) = rest.split_at_mut(d_out);
        let (w_gate, rest) = rest.split_at_mut(d_out * CONTEXT_WIDTH);
        let (b_gate, w_ctx) = rest.split_at_mut(d_out);
        Self {
            w,
            b,
            w_gate,
            b_gate,
            w_ctx,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, seeded};

    #[test]
    fn half_gate_scalar_case() {
        let mut layer = ConcatSquashLayer::zeros(1, 1);
        layer.w[0] = 2.0;
        let y = layer.apply(&[3.0], MappingContext::new(0.0, 0.0)).unwrap();
        assert_eq!(y, vec![3.0]);
    }

    #[test]
    fn zero_layer_gives_zero() {
        let layer = ConcatSquashLayer::zeros(3, 4);
        let y = layer
            .apply(&[1.0, -2.0, 5.0], MappingContext::new(0.3, 0.9))
            .unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn seeded_layer_matches_scalar_formula() {
        let mut rng = seeded(11);
        let n = layer_param_count(2, 2);
        let flat: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let layer = ConcatSquashLayer::from_flat(2, 2, &flat);
        let (x, t, s) = ([1.0, -1.0], 0.5, 0.7);
        let got = layer.apply(&x, MappingContext::new(t, s)).unwrap();
        // Independent scalar evaluation, indexing the flat vector directly.
        let (w, b, wg, bg, wc) = (
            &flat[0..4],
            &flat[4..6],
            &flat[6..10],
            &flat[10..12],
            &flat[12..16],
        );
        for o in 0..2 {
            let lin = w[2 * o] * x[0] + w[2 * o + 1] * x[1] + b[o];
            let gate = 1.0 / (1.0 + (-(wg[2 * o] * t + wg[2 * o + 1] * s + bg[o])).exp());
            let want = lin * gate + wc[2 * o] * t + wc[2 * o + 1] * s;
            assert!((got[o] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let layer = ConcatSquashLayer::zeros(3, 2);
        let err = layer
            .apply(&[1.0], MappingContext::new(0.0, 0.5))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }
}
