//! E2: per-cell statistics on an 8x8 grid mixed to `C` channels.

use crate::error::{check_len, Result};
use crate::rng::{normal, substream};
use crate::world::{ImageGrid, IMAGE_SIDE};

pub const CELL_GRID: usize = 8;
/// mean, horizontal gradient, vertical gradient, standard deviation
pub const CELL_STATS: usize = 4;
const CELL: usize = IMAGE_SIDE / CELL_GRID;
const CELLS: usize = CELL_GRID * CELL_GRID;

/// Raw statistics, laid out `[stat][row][col]`.
pub fn cell_statistics(img: &ImageGrid) -> Result<Vec<f64>> {
    img.check_shape(IMAGE_SIDE, IMAGE_SIDE)?;
    let mut out = vec![0.0; CELL_STATS * CELLS];
    let half = CELL / 2;
    let n = (CELL * CELL) as f64;
    let side = (CELL * half) as f64;
    for cr in 0..CELL_GRID {
        for cc in 0..CELL_GRID {
            let (mut sum, mut sq, mut left, mut right, mut top, mut bottom) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for r in 0..CELL {
                for c in 0..CELL {
                    let v = img.get(cr * CELL + r, cc * CELL + c);
                    sum += v;
                    sq += v * v;
                    if c < half {
                        left += v
                    } else {
                        right += v
                    }
                    if r < half {
                        top += v
                    } else {
                        bottom += v
                    }
                }
            }
            let mean = sum / n;
            let var = (sq / n - mean * mean).max(0.0);
            let k = cr * CELL_GRID + cc;
            out[k] = mean;
            out[CELLS + k] = (right - left) / side;
            out[2 * CELLS + k] = (bottom - top) / side;
            out[3 * CELLS + k] = var.sqrt();
        }
    }
    Ok(out)
}

/// Learned 1x1 mixing of the cell statistics: `tanh(A r + a)` per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMixer {
    channels: usize,
    /// `channels x CELL_STATS` row-major, then `channels` biases.
    params: Vec<f64>,
}

impl FeatureMixer {
    pub fn init(channels: usize, seed: u64) -> Self {
        let mut rng = substream(seed, 0x6532);
        let mut params = vec![0.0; channels * (CELL_STATS + 1)];
        for p in &mut params[..channels * CELL_STATS] {
            *p = (normal(&mut rng) * 2.0) as f32 as f64;
        }
        Self { channels, params }
    }

    pub fn from_parts(channels: usize, params: Vec<f64>) -> Result<Self> {
        check_len("feature mixer", channels * (CELL_STATS + 1), params.len())?;
        Ok(Self { channels, params })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn output_len(&self) -> usize {
        self.channels * CELLS
    }

    /// Features laid out `[channel][row][col]`.
    pub fn apply(&self, stats: &[f64]) -> Vec<f64> {
        let (a, b) = self.params.split_at(self.channels * CELL_STATS);
        let mut out = vec![0.0; self.output_len()];
        for ch in 0..self.channels {
            for k in 0..CELLS {
                let mut z = b[ch];
                for s in 0..CELL_STATS {
                    z += a[ch * CELL_STATS + s] * stats[s * CELLS + k];
                }
                out[ch * CELLS + k] = z.tanh();
            }
        }
        out
    }

    /// Accumulates the parameter gradient given the output features and
    /// their upstream gradient.
    pub fn backward(&self, stats: &[f64], out: &[f64], out_bar: &[f64], grad: &mut [f64]) {
        let (ga, gb) = grad.split_at_mut(self.channels * CELL_STATS);
        for ch in 0..self.channels {
            for k in 0..CELLS {
                let y = out[ch * CELLS + k];
                let d = out_bar[ch * CELLS + k] * (1.0 - y * y);
                gb[ch] += d;
                for s in 0..CELL_STATS {
                    ga[ch * CELL_STATS + s] += d * stats[s * CELLS + k];
                }
            }
        }
    }
}

/// Appearance code `h`: channel concatenation of the features of the
/// reconstruction and of the original, `2C x 8 x 8`.
pub fn appearance_code(
    mixer: &FeatureMixer,
    recon: &ImageGrid,
    original: &ImageGrid,
) -> Result<Vec<f64>> {
    let mut h = mixer.apply(&cell_statistics(recon)?);
    h.extend(mixer.apply(&cell_statistics(original)?));
    Ok(h)
}
