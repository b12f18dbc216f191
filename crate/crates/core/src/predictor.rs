//! Attribute-score regressors on pooled image features.

use std::path::Path;

use crate::attribute::AttributeKind;
use crate::binfmt::{Reader, Writer};
use crate::error::{check_len, Error, Result};
use crate::nn::{fit_mse, Mlp, OutputActivation, TrainConfig};
use crate::world::{ImageGrid, IMAGE_SIDE};

pub const REGRESSOR_MAGIC: &[u8; 8] = b"IMPREGR1";
pub const REGRESSOR_VERSION: u32 = 1;

const POOL_SIDES: [usize; 4] = [32, 16, 8, 4];
pub const FEATURE_LEN: usize = 32 * 32 + 16 * 16 + 8 * 8 + 4 * 4;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub image: ImageGrid,
    pub score: f64,
    pub source: String,
}

/// Multi-scale mean pooling (32x32, 16x16, 8x8, 4x4), centred at zero.
pub fn pooled_features(img: &ImageGrid) -> Result<Vec<f64>> {
    img.check_shape(IMAGE_SIDE, IMAGE_SIDE)?;
    let mut out = Vec::with_capacity(FEATURE_LEN);
    for side in POOL_SIDES {
        let f = IMAGE_SIDE / side;
        let mut cells = vec![0.0; side * side];
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                cells[(r / f) * side + c / f] += img.get(r, c);
            }
        }
        let n = (f * f) as f64;
        out.extend(cells.iter().map(|v| 2.0 * (v / n - 0.5)));
    }
    Ok(out)
}

/// Pooled features followed by a sigmoid-output perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorModel {
    pub attribute: AttributeKind,
    pub mlp: Mlp,
}

impl RegressorModel {
    pub const HIDDEN: [usize; 2] = [32, 16];

    fn sizes() -> Vec<usize> {
        vec![FEATURE_LEN, Self::HIDDEN[0], Self::HIDDEN[1], 1]
    }

    /// Seeded hidden layers with a zero output layer (predicts 0.5).
    pub fn fresh(attribute: AttributeKind, seed: u64) -> Self {
        let mut mlp = Mlp::init(&Self::sizes(), OutputActivation::Sigmoid, seed, 1.0);
        mlp.zero_output_layer();
        Self { attribute, mlp }
    }

    pub fn predict(&self, img: &ImageGrid) -> Result<f64> {
        Ok(self.mlp.forward(&pooled_features(img)?)[0])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(REGRESSOR_MAGIC, REGRESSOR_VERSION);
        w.str(self.attribute.tag());
        w.usize(self.mlp.sizes().len());
        for &s in self.mlp.sizes() {
            w.usize(s);
        }
        w.f32s(self.mlp.params());
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::open(buf, REGRESSOR_MAGIC, REGRESSOR_VERSION, "regressor")?;
        let attribute: AttributeKind = r.str()?.parse()?;
        let n = r.usize()?;
        if n > 16 {
            return Err(Error::Corrupt("regressor layer count".into()));
        }
        let sizes = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let params = r.f32s()?;
        r.finish()?;
        if sizes.first() != Some(&FEATURE_LEN) || sizes.last() != Some(&1) {
            return Err(Error::Corrupt("regressor shape".into()));
        }
        let mlp = Mlp::from_parts(sizes, OutputActivation::Sigmoid, params)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(Self { attribute, mlp })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn predict_score(model: &RegressorModel, image: &ImageGrid) -> Result<f64> {
    model.predict(image)
}

#[derive(Clone, Debug)]
pub struct RegressorTraining {
    pub model: RegressorModel,
    pub losses: Vec<f64>,
}

/// Mean-squared-error fit starting from `init`; passing a trained model
/// fine-tunes it.
pub fn train_regressor(
    train: &[ScoredSample],
    init: RegressorModel,
    cfg: &TrainConfig,
) -> Result<RegressorTraining> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut inputs = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    for s in train {
        if !(0.0..=1.0).contains(&s.score) {
            return Err(Error::invalid(format!("score {} outside [0, 1]", s.score)));
        }
        inputs.push(pooled_features(&s.image)?);
        targets.push(vec![s.score]);
    }
    let mut model = init;
    let losses = fit_mse(&mut model.mlp, &inputs, &targets, cfg)?;
    Ok(RegressorTraining { model, losses })
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_len("predictions", targets.len(), predictions.len())?;
    if targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("R^2 of constant targets"));
    }
    let ss_res: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}
