use nalgebra::{DMatrix, DVector};

use crate::binfmt::round_to_f32;
use crate::error::{check_len, Error, Result};
use crate::rng::{normal, substream};
use crate::world::{FaceParams, PARAM_DIM};
use rand::Rng;

/// Seeded invertible map `w = M p` from face parameters to latents.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix {
    m: DMatrix<f64>,
    inv: DMatrix<f64>,
}

impl MixingMatrix {
    /// `U diag(s) V^T` with Haar-ish orthogonal factors and singular values
    /// drawn from `[0.5, 2]`, stored on the f32 grid.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = substream(seed, 0x6d6978);
        let mut orth = || {
            let g = DMatrix::from_fn(PARAM_DIM, PARAM_DIM, |_, _| normal(&mut rng));
            g.qr().q()
        };
        let u = orth();
        let v = orth();
        let mut rng = substream(seed, 0x73766c);
        let s = DVector::from_fn(PARAM_DIM, |_, _| rng.random_range(0.5..2.0));
        let m = u * DMatrix::from_diagonal(&s) * v.transpose();
        let mut vals: Vec<f64> = m.iter().copied().collect();
        round_to_f32(&mut vals);
        Self::from_row_major(&transpose_flat(&vals)).expect("well-conditioned by construction")
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        check_len("mixing matrix", PARAM_DIM * PARAM_DIM, values.len())?;
        let m = DMatrix::from_row_slice(PARAM_DIM, PARAM_DIM, values);
        if m.determinant().abs() <= 1e-6 {
            return Err(Error::invalid("mixing matrix is singular"));
        }
        let inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::invalid("mixing matrix is singular"))?;
        Ok(Self { m, inv })
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.m.transpose().iter().copied().collect()
    }

    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    pub fn condition_number(&self) -> f64 {
        let s = self.m.clone().singular_values();
        s.max() / s.min()
    }

    pub fn apply(&self, p: &FaceParams) -> Vec<f64> {
        (&self.m * DVector::from_column_slice(&p.0))
            .iter()
            .copied()
            .collect()
    }

    /// `M^{-1} w` (not clamped).
    pub fn invert(&self, w: &[f64]) -> Result<FaceParams> {
        check_len("latent", PARAM_DIM, w.len())?;
        let p = &self.inv * DVector::from_column_slice(w);
        FaceParams::from_slice(p.as_slice())
    }
}

fn transpose_flat(col_major: &[f64]) -> Vec<f64> {
    let n = PARAM_DIM;
    (0..n * n).map(|k| col_major[(k % n) * n + k / n]).collect()
}
