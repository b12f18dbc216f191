//! Evaluation of one block's vector field into a flat tape, with the exact
//! Jacobian trace and reverse-mode gradients through both.

use crate::error::{check_len, Error, Result};
use crate::flow::layer::{layer_param_count, LayerGrad, CONTEXT_WIDTH};
use crate::flow::ode::Dynamics;
use crate::flow::{CnfModel, MappingContext};
use crate::nn::dot;

/// Offsets of the intermediate values of one block inside a flat buffer.
///
/// Per layer `l` the tape holds `input[l]`, `pre[l]`, `gate[l]`, `slope[l]`
/// in that order; `input[L]` is the block output. The forward Jacobian
/// products `P_l = A_l ... A_0` (`l < L - 1`) and the trace follow.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct TapeLayout {
    widths: Vec<usize>,
    input: Vec<usize>,
    pre: Vec<usize>,
    gate: Vec<usize>,
    slope: Vec<usize>,
    prod: Vec<usize>,
    trace: usize,
    len: usize,
}

impl TapeLayout {
    pub fn new(widths: &[usize]) -> Self {
        let layers = widths.len() - 1;
        let d = widths[0];
        let mut off = 0;
        let (mut input, mut pre, mut gate, mut slope) = (vec![], vec![], vec![], vec![]);
        for l in 0..layers {
            input.push(off);
            off += widths[l];
            pre.push(off);
            off += widths[l + 1];
            gate.push(off);
            off += widths[l + 1];
            slope.push(off);
            off += widths[l + 1];
        }
        input.push(off);
        off += widths[layers];
        let mut prod = vec![];
        for l in 0..layers.saturating_sub(1) {
            prod.push(off);
            off += widths[l + 1] * d;
        }
        let trace = off;
        Self {
            widths: widths.to_vec(),
            input,
            pre,
            gate,
            slope,
            prod,
            trace,
            len: off + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn out<'t>(&self, tape: &'t [f64]) -> &'t [f64] {
        let l = self.layers();
        &tape[self.input[l]..self.input[l] + self.widths[l]]
    }

    pub fn trace(&self, tape: &[f64]) -> f64 {
        tape[self.trace]
    }
}

/// The vector field of one block of a [`CnfModel`].
#[derive(Clone, Copy)]
pub struct BlockField<'a> {
    model: &'a CnfModel,
    index: usize,
    products: Option<&'a [f64]>,
}

impl<'a> BlockField<'a> {
    pub(crate) fn new(model: &'a CnfModel, index: usize) -> Self {
        Self {
            model,
            index,
            products: None,
        }
    }

    /// For single-hidden-layer blocks: `D[j, i] = W1[i, j] W0[j, i]`, the
    /// parameter-only factor of the trace. Empty for other depths.
    pub(crate) fn diag_products_into(&self, out: &mut Vec<f64>) {
        out.clear();
        let layers = self.model.layouts(self.index);
        if layers.len() != 2 {
            return;
        }
        let (d, h) = (layers[0].d_in, layers[0].d_out);
        let (w0, w1) = (
            self.model.layer_ref(&layers[0]).w,
            self.model.layer_ref(&layers[1]).w,
        );
        for j in 0..h {
            out.extend((0..d).map(|i| w1[i * h + j] * w0[j * d + i]));
        }
    }

    /// Uses precomputed [`Self::diag_products_into`] output. The trace part of
    /// the weight gradient is then collected in an `outer` buffer passed to
    /// [`Self::backward_into`] and applied by [`Self::fold_outer`].
    pub(crate) fn with_products(self, products: &'a [f64]) -> Self {
        Self {
            products: (!products.is_empty()).then_some(products),
            ..self
        }
    }

    /// Adds the weight gradient held in `outer` (`sum tb * s0 s1^T`) to `grad`.
    pub(crate) fn fold_outer(&self, outer: &[f64], grad: &mut [f64]) {
        let layers = self.model.layouts(self.index);
        if layers.len() != 2 {
            return;
        }
        let (d, h) = (layers[0].d_in, layers[0].d_out);
        let (w0, w1) = (
            self.model.layer_ref(&layers[0]).w,
            self.model.layer_ref(&layers[1]).w,
        );
        let (o0, o1) = (layers[0].offset, layers[1].offset);
        for j in 0..h {
            for i in 0..d {
                let g = outer[j * d + i];
                grad[o1 + i * h + j] += g * w0[j * d + i];
                grad[o0 + j * d + i] += g * w1[i * h + j];
            }
        }
    }

    pub(crate) fn layout(&self) -> &'a TapeLayout {
        self.model.tape_layout(self.index)
    }

    /// Fills `tape` (of length `layout().len()`) with the forward pass at
    /// `(w, ctx)`; the trace slot is written only when `with_trace` is set.
    pub(crate) fn eval_into(
        &self,
        w: &[f64],
        ctx: MappingContext,
        with_trace: bool,
        tape: &mut [f64],
    ) -> Result<()> {
        let lay = self.layout();
        let layers = self.model.layouts(self.index);
        let c = ctx.as_array();
        let n = layers.len();
        tape[..w.len()].copy_from_slice(w);
        for (l, ll) in layers.iter().enumerate() {
            let p = self.model.layer_ref(ll);
            let (left, right) = tape.split_at_mut(lay.pre[l]);
            let x = &left[lay.input[l]..];
            let base = lay.pre[l];
            let m = ll.d_out;
            let (pre, rest) = right.split_at_mut(m);
            let (gate, rest) = rest.split_at_mut(m);
            let (slope, rest) = rest.split_at_mut(m);
            let next = &mut rest[lay.input[l + 1] - (base + 3 * m)..][..m];
            p.eval(x, &c, pre, gate, next);
            if l + 1 < n {
                for o in 0..m {
                    let y = next[o].tanh();
                    next[o] = y;
                    slope[o] = gate[o] * (1.0 - y * y);
                }
            } else {
                slope.copy_from_slice(gate);
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    block: self.index,
                    layer: l,
                });
            }
        }
        if with_trace {
            tape[lay.trace] = self.trace_forward(tape);
        }
        Ok(())
    }

    /// `tr(A_{L-1} ... A_0)` with `A_l = diag(slope_l) W_l`.
    fn trace_forward(&self, tape: &mut [f64]) -> f64 {
        let lay = self.layout();
        let layers = self.model.layouts(self.index);
        let n = layers.len();
        let d = lay.widths[0];
        let w_of = |l: usize| self.model.layer_ref(&layers[l]).w;
        if n == 1 {
            let (w, s) = (w_of(0), &tape[lay.slope[0]..]);
            return (0..d).map(|i| s[i] * w[i * d + i]).sum();
        }
        if n == 2 {
            // tr(A_1 A_0) = sum_j s0_j * s1 . (W1[:, j] * W0[j, :]) restricted to the diagonal
            let h = lay.widths[1];
            let (w0, w1) = (w_of(0), w_of(1));
            let (s0, s1) = (
                &tape[lay.slope[0]..lay.slope[0] + h],
                &tape[lay.slope[1]..lay.slope[1] + d],
            );
            if let Some(dp) = self.products {
                return (0..h)
                    .map(|j| s0[j] * dot(s1, &dp[j * d..(j + 1) * d]))
                    .sum();
            }
            let mut tr = 0.0;
            for j in 0..h {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += s1[i] * w1[i * h + j] * w0[j * d + i];
                }
                tr += s0[j] * acc;
            }
            return tr;
        }
        // P_0 = A_0
        {
            let h = lay.widths[1];
            let w0 = w_of(0);
            for j in 0..h {
                let s = tape[lay.slope[0] + j];
                for i in 0..d {
                    tape[lay.prod[0] + j * d + i] = s * w0[j * d + i];
                }
            }
        }
        for l in 1..n - 1 {
            let (rows, cols) = (lay.widths[l + 1], lay.widths[l]);
            let w = w_of(l);
            let (left, right) = tape.split_at_mut(lay.prod[l]);
            let prev = &left[lay.prod[l - 1]..lay.prod[l - 1] + cols * d];
            for i in 0..rows {
                let s = left[lay.slope[l] + i];
                let row = &mut right[i * d..(i + 1) * d];
                row.fill(0.0);
                for j in 0..cols {
                    let a = s * w[i * cols + j];
                    for (r, p) in row.iter_mut().zip(&prev[j * d..(j + 1) * d]) {
                        *r += a * p;
                    }
                }
            }
        }
        let cols = lay.widths[n - 1];
        let w = w_of(n - 1);
        let p = &tape[lay.prod[n - 2]..lay.prod[n - 2] + cols * d];
        let s = &tape[lay.slope[n - 1]..lay.slope[n - 1] + d];
        let mut tr = 0.0;
        for i in 0..d {
            for j in 0..cols {
                tr += s[i] * w[i * cols + j] * p[j * d + i];
            }
        }
        tr
    }

    /// Reverse pass for the scalar `<out_bar, phi(w)> + trace_bar * tr(J)`.
    ///
    /// Parameter gradients are accumulated into `grad` (full model length),
    /// the gradient with respect to `w` is written to `w_bar`. `scratch`
    /// must have the tape's length and is overwritten. `outer` is required
    /// when products were attached with [`Self::with_products`].
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_into(
        &self,
        tape: &[f64],
        ctx: MappingContext,
        out_bar: &[f64],
        trace_bar: f64,
        grad: &mut [f64],
        scratch: &mut [f64],
        w_bar: &mut [f64],
        outer: Option<&mut [f64]>,
    ) {
        let lay = self.layout();
        let layers = self.model.layouts(self.index);
        let n = layers.len();
        let d = lay.widths[0];
        let c = ctx.as_array();
        let sc = scratch;
        sc.fill(0.0);
        // scratch reuses the tape offsets: slope -> s_bar, gate -> g_bar,
        // input -> x_bar, pre -> u_bar, prod -> P_bar
        if trace_bar != 0.0 {
            self.trace_backward(tape, trace_bar, grad, sc, outer);
            for l in 0..n {
                let m = lay.widths[l + 1];
                for o in 0..m {
                    let sb = sc[lay.slope[l] + o];
                    if l + 1 < n {
                        let y = tape[lay.input[l + 1] + o];
                        let g = tape[lay.gate[l] + o];
                        sc[lay.gate[l] + o] += sb * (1.0 - y * y);
                        sc[lay.input[l + 1] + o] += sb * g * (-2.0 * y);
                    } else {
                        sc[lay.gate[l] + o] += sb;
                    }
                }
            }
        }
        sc[lay.pre[n - 1]..lay.pre[n - 1] + d].copy_from_slice(out_bar);
        for l in (0..n).rev() {
            let ll = &layers[l];
            let (din, dout) = (ll.d_in, ll.d_out);
            let p = self.model.layer_ref(ll);
            let g = LayerGrad::new(
                din,
                dout,
                &mut grad[ll.offset..ll.offset + layer_param_count(din, dout)],
            );
            let x = &tape[lay.input[l]..lay.input[l] + din];
            for o in 0..dout {
                let ub = sc[lay.pre[l] + o];
                let gate = tape[lay.gate[l] + o];
                let a_bar = ub * gate;
                let gb = sc[lay.gate[l] + o] + ub * tape[lay.pre[l] + o];
                let gpre = gb * gate * (1.0 - gate);
                for (k, ck) in c.iter().enumerate().take(CONTEXT_WIDTH) {
                    g.w_ctx[o * CONTEXT_WIDTH + k] += ub * ck;
                    g.w_gate[o * CONTEXT_WIDTH + k] += gpre * ck;
                }
                g.b_gate[o] += gpre;
                if a_bar != 0.0 {
                    g.b[o] += a_bar;
                    let grow = &mut g.w[o * din..(o + 1) * din];
                    for (gw, xi) in grow.iter_mut().zip(x) {
                        *gw += a_bar * xi;
                    }
                    let wrow = &p.w[o * din..(o + 1) * din];
                    let xb = &mut sc[lay.input[l]..lay.input[l] + din];
                    for (b, wi) in xb.iter_mut().zip(wrow) {
                        *b += a_bar * wi;
                    }
                }
            }
            if l > 0 {
                for i in 0..din {
                    let y = x[i];
                    sc[lay.pre[l - 1] + i] = sc[lay.input[l] + i] * (1.0 - y * y);
                }
            }
        }
        w_bar.copy_from_slice(&sc[lay.input[0]..lay.input[0] + d]);
    }

    /// Adjoint of [`Self::trace_forward`]: fills the slope adjoints in
    /// `sc` and adds the direct `W` contributions to `grad`.
    fn trace_backward(
        &self,
        tape: &[f64],
        tb: f64,
        grad: &mut [f64],
        sc: &mut [f64],
        outer: Option<&mut [f64]>,
    ) {
        let lay = self.layout();
        let layers = self.model.layouts(self.index);
        let n = layers.len();
        let d = lay.widths[0];
        let w_of = |l: usize| self.model.layer_ref(&layers[l]).w;
        if n == 1 {
            let w = w_of(0);
            let off = layers[0].offset;
            for i in 0..d {
                sc[lay.slope[0] + i] += tb * w[i * d + i];
                grad[off + i * d + i] += tb * tape[lay.slope[0] + i];
            }
            return;
        }
        if n == 2 {
            let h = lay.widths[1];
            if let (Some(dp), Some(outer)) = (self.products, outer) {
                let (s0, s1) = (
                    &tape[lay.slope[0]..lay.slope[0] + h],
                    &tape[lay.slope[1]..lay.slope[1] + d],
                );
                let (lo, hi) = sc.split_at_mut(lay.slope[1]);
                let s1_bar = &mut hi[..d];
                for j in 0..h {
                    let row = &dp[j * d..(j + 1) * d];
                    lo[lay.slope[0] + j] += tb * dot(s1, row);
                    let a = tb * s0[j];
                    for ((sb, r), (g, v)) in s1_bar
                        .iter_mut()
                        .zip(row)
                        .zip(outer[j * d..(j + 1) * d].iter_mut().zip(s1))
                    {
                        *sb += a * r;
                        *g += a * v;
                    }
                }
                return;
            }
            let (w0, w1) = (w_of(0), w_of(1));
            let (o0, o1) = (layers[0].offset, layers[1].offset);
            for j in 0..h {
                let s0 = tape[lay.slope[0] + j];
                let mut acc = 0.0;
                for i in 0..d {
                    let s1 = tape[lay.slope[1] + i];
                    let a = w1[i * h + j];
                    let b = w0[j * d + i];
                    acc += s1 * a * b;
                    sc[lay.slope[1] + i] += tb * s0 * a * b;
                    grad[o1 + i * h + j] += tb * s0 * s1 * b;
                    grad[o0 + j * d + i] += tb * s0 * s1 * a;
                }
                sc[lay.slope[0] + j] += tb * acc;
            }
            return;
        }
        // last layer: tr = sum_ij s_i W[i,j] P[j,i]
        {
            let l = n - 1;
            let cols = lay.widths[l];
            let w = w_of(l);
            let off = layers[l].offset;
            for i in 0..d {
                let s = tape[lay.slope[l] + i];
                for j in 0..cols {
                    let pji = tape[lay.prod[l - 1] + j * d + i];
                    let a_bar = tb * pji;
                    sc[lay.slope[l] + i] += a_bar * w[i * cols + j];
                    grad[off + i * cols + j] += a_bar * s;
                    sc[lay.prod[l - 1] + j * d + i] += tb * s * w[i * cols + j];
                }
            }
        }
        for l in (1..n - 1).rev() {
            let (rows, cols) = (lay.widths[l + 1], lay.widths[l]);
            let w = w_of(l);
            let off = layers[l].offset;
            for i in 0..rows {
                let s = tape[lay.slope[l] + i];
                let (lo, hi) = sc.split_at_mut(lay.prod[l]);
                let pbar = &hi[i * d..(i + 1) * d];
                for j in 0..cols {
                    let prev = &tape[lay.prod[l - 1] + j * d..lay.prod[l - 1] + (j + 1) * d];
                    let a_bar = dot(pbar, prev);
                    let wij = w[i * cols + j];
                    lo[lay.slope[l] + i] += a_bar * wij;
                    grad[off + i * cols + j] += a_bar * s;
                    let a = s * wij;
                    let prev_bar = &mut lo[lay.prod[l - 1] + j * d..lay.prod[l - 1] + (j + 1) * d];
                    for (pb, v) in prev_bar.iter_mut().zip(pbar) {
                        *pb += a * v;
                    }
                }
            }
        }
        let h = lay.widths[1];
        let w0 = w_of(0);
        let off = layers[0].offset;
        for j in 0..h {
            let s = tape[lay.slope[0] + j];
            for i in 0..d {
                let a_bar = sc[lay.prod[0] + j * d + i];
                sc[lay.slope[0] + j] += a_bar * w0[j * d + i];
                grad[off + j * d + i] += a_bar * s;
            }
        }
    }

    fn checked_tape(&self, w: &[f64], ctx: MappingContext, with_trace: bool) -> Result<Vec<f64>> {
        check_len("latent", self.model.dim(), w.len())?;
        let mut tape = vec![0.0; self.layout().len()];
        self.eval_into(w, ctx, with_trace, &mut tape)?;
        Ok(tape)
    }
}

impl Dynamics for BlockField<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn velocity(&self, w: &[f64], ctx: MappingContext) -> Result<Vec<f64>> {
        let tape = self.checked_tape(w, ctx, false)?;
        Ok(self.layout().out(&tape).to_vec())
    }

    fn velocity_and_trace(&self, w: &[f64], ctx: MappingContext) -> Result<(Vec<f64>, f64)> {
        let tape = self.checked_tape(w, ctx, true)?;
        let lay = self.layout();
        Ok((lay.out(&tape).to_vec(), lay.trace(&tape)))
    }
}
