//! Procedural toy world: parametric faces, a fixed mixing into latent
//! space, ground-truth attribute oracles and the inversion stack.

mod dataset;
mod encoder;
mod features;
mod identity;
mod mixing;
mod render;

use serde::{Deserialize, Serialize};

use crate::attribute::AttributeKind;
use crate::error::{check_len, Error, Result};
use crate::nn::sigmoid;

pub use dataset::{sample_dataset, WorldSample, FULL_TRAIN_SIZE};
pub use encoder::{
    invert_with_restoration, train_corrector, train_encoder, Corrector, EncoderModel,
    InversionTraining, APPEARANCE_CHANNELS,
};
pub use features::{appearance_code, cell_statistics, FeatureMixer, CELL_GRID, CELL_STATS};
pub use identity::{
    detection_energy, identity_embed, identity_embed_params, quality_filter, FilterReport,
    QualityRecord, QualityThresholds, FULL_EVAL_COUNT,
};
pub use mixing::MixingMatrix;
pub use render::{mouth_band_mean, render_face, RenderInfo, BACKGROUND};

pub const PARAM_DIM: usize = 12;
pub const IDENTITY_DIM: usize = 6;
pub const IMAGE_SIDE: usize = 32;

pub const FACE_WIDTH: usize = 0;
pub const EYE_SPACING: usize = 1;
pub const NOSE_LENGTH: usize = 2;
pub const CHIN_SHAPE: usize = 3;
pub const SKIN_TONE: usize = 4;
pub const HAIR: usize = 5;
pub const SMILE: usize = 6;
pub const BROW: usize = 7;
pub const EYE_OPEN: usize = 8;
pub const WRINKLE: usize = 9;
pub const FACIAL_HAIR: usize = 10;
pub const TILT: usize = 11;

pub const COVARIATE_NAMES: [&str; 6] = [
    "smile",
    "brow",
    "eye_open",
    "wrinkle",
    "facial_hair",
    "tilt",
];

/// Parameter vector `p`: identity entries `0..6`, covariates `6..12`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceParams(pub [f64; PARAM_DIM]);

impl FaceParams {
    pub fn zeros() -> Self {
        Self([0.0; PARAM_DIM])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        check_len("face params", PARAM_DIM, v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite face parameter"));
        }
        let mut p = [0.0; PARAM_DIM];
        p.copy_from_slice(v);
        Ok(Self(p))
    }

    pub fn identity(&self) -> &[f64] {
        &self.0[..IDENTITY_DIM]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.0[IDENTITY_DIM..]
    }

    pub fn with(mut self, index: usize, value: f64) -> Self {
        self.0[index] = value;
        self
    }
}

/// Grayscale raster, row-major, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        check_len("image pixels", height * width, pixels.len())?;
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel outside [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value.clamp(0.0, 1.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn check_shape(&self, height: usize, width: usize) -> Result<()> {
        check_len("image height", height, self.height)?;
        check_len("image width", width, self.width)
    }

    /// Rounds every pixel to the 8-bit grid used by PGM files.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self
                .pixels
                .iter()
                .map(|v| (v * 255.0).round() / 255.0)
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8], maxval: u16) -> Result<Self> {
        check_len("image bytes", height * width, bytes.len())?;
        let m = maxval as f64;
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| (b as f64 / m).min(1.0)).collect(),
        )
    }
}

/// Settings shared by every stage that touches the toy world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Fixes the mixing matrix.
    pub seed: u64,
    /// Fixes the sampled faces.
    pub sample_seed: u64,
    pub n: usize,
    pub adult_only: bool,
    /// Std of the covariate block before truncation to `[-1, 1]`.
    pub covariate_scale: f64,
    pub thresholds: QualityThresholds,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            sample_seed: 1,
            n: 5000,
            adult_only: false,
            covariate_scale: 0.25,
            thresholds: QualityThresholds::default(),
        }
    }
}

/// Ground-truth oracle: a sigmoid of a fixed linear form over covariates.
pub fn truth_score(p: &FaceParams, attr: AttributeKind) -> f64 {
    let c = &p.0;
    let z = match attr {
        AttributeKind::Trustworthiness => {
            1.5 * c[SMILE] - 1.2 * c[BROW] - 0.8 * c[WRINKLE] + 0.3 * c[EYE_OPEN]
        }
        AttributeKind::Dominance => {
            1.4 * c[BROW] + 1.0 * c[FACIAL_HAIR] + 0.8 * c[WRINKLE] - 0.6 * c[SMILE]
        }
        AttributeKind::Attractiveness => 1.0 * c[SMILE] + 0.8 * c[EYE_OPEN] - 1.0 * c[WRINKLE],
    };
    sigmoid(z)
}

/// Truth scores for all attributes, in [`AttributeKind::ALL`] order.
pub fn truth_scores(p: &FaceParams) -> [f64; 3] {
    AttributeKind::ALL.map(|a| truth_score(p, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_covariates_score_one_half() {
        let p = FaceParams::zeros().with(FACE_WIDTH, 0.7).with(HAIR, -0.3);
        for a in AttributeKind::ALL {
            assert_eq!(truth_score(&p, a), 0.5);
        }
    }

    #[test]
    fn smile_only_trust() {
        let p = FaceParams::zeros().with(SMILE, 1.0);
        assert!((truth_score(&p, AttributeKind::Trustworthiness) - 0.8176).abs() < 1e-4);
    }

    #[test]
    fn smile_signs_at_origin() {
        let h = 1e-4;
        let up = FaceParams::zeros().with(SMILE, h);
        let base = FaceParams::zeros();
        assert!(
            truth_score(&up, AttributeKind::Trustworthiness)
                > truth_score(&base, AttributeKind::Trustworthiness)
        );
        assert!(
            truth_score(&up, AttributeKind::Dominance)
                < truth_score(&base, AttributeKind::Dominance)
        );
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ImageGrid::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(ImageGrid::new(1, 2, vec![0.0]).is_err());
    }
}
