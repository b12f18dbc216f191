use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::world::{FaceParams, ImageGrid, MixingMatrix, BACKGROUND, IDENTITY_DIM};

/// Size of the full-scale evaluation pool.
pub const FULL_EVAL_COUNT: usize = 19921;

/// Identity block of `M^{-1} w`.
pub fn identity_embed(mixing: &MixingMatrix, w: &[f64]) -> Result<Vec<f64>> {
    Ok(mixing.invert(w)?.identity().to_vec())
}

pub fn identity_embed_params(p: &FaceParams) -> Vec<f64> {
    p.0[..IDENTITY_DIM].to_vec()
}

/// Detection surrogate: fraction of pixels brighter than the background by
/// more than 0.1.
pub fn detection_energy(img: &ImageGrid) -> f64 {
    let n = img.pixels().len() as f64;
    img.pixels()
        .iter()
        .filter(|&&v| v > BACKGROUND + 0.1)
        .count() as f64
        / n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityThresholds {
    /// Minimum detection energy (inclusive).
    pub energy: f64,
    /// Identity similarity must exceed this.
    pub identity: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            energy: 0.2,
            identity: 0.85,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityRecord<T> {
    pub item: T,
    pub energy: f64,
    pub identity_similarity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub passed: usize,
    pub failed_energy: usize,
    pub failed_identity: usize,
}

impl FilterReport {
    pub fn total(&self) -> usize {
        self.passed + self.failed_energy + self.failed_identity
    }
}

/// Keeps records with `energy >= thresholds.energy` and
/// `identity_similarity > thresholds.identity`, preserving order.
pub fn quality_filter<T>(
    records: Vec<QualityRecord<T>>,
    thresholds: QualityThresholds,
) -> (Vec<QualityRecord<T>>, FilterReport) {
    let mut report = FilterReport::default();
    let kept = records
        .into_iter()
        .filter(|r| {
            if !(r.energy >= thresholds.energy) {
                report.failed_energy += 1;
                false
            } else if !(r.identity_similarity > thresholds.identity) {
                report.failed_identity += 1;
                false
            } else {
                report.passed += 1;
                true
            }
        })
        .collect();
    (kept, report)
}
