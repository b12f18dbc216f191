//! E1 image encoder, the E2 appearance features and the residual corrector
//! used for identity-restorative inversion.

use rand::Rng;

use crate::binfmt::round_to_f32;
use crate::error::{check_len, Error, Result};
use crate::flow::LatentVector;
use crate::nn::{fit_mse, Adam, Mlp, OutputActivation, TrainConfig};
use crate::rng::{normal, substream};
use crate::world::features::{cell_statistics, FeatureMixer, CELL_GRID};
use crate::world::*;

/// Channels per source in the appearance code.
pub const APPEARANCE_CHANNELS: usize = 8;

fn centered(img: &ImageGrid) -> Vec<f64> {
    img.pixels().iter().map(|v| v - 0.5).collect()
}

/// Residual corrector: a perceptron from the appearance code to a
/// full-resolution additive image correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Corrector {
    pub mixer: FeatureMixer,
    pub mlp: Mlp,
}

impl Corrector {
    pub fn zeros(hidden: usize) -> Self {
        let mixer = FeatureMixer::from_parts(
            APPEARANCE_CHANNELS,
            vec![0.0; APPEARANCE_CHANNELS * (CELL_STATS + 1)],
        )
        .unwrap();
        let input = 2 * mixer.output_len();
        Self {
            mixer,
            mlp: Mlp::zeros(
                &[input, hidden, IMAGE_SIDE * IMAGE_SIDE],
                OutputActivation::Linear,
            ),
        }
    }

    pub fn init(hidden: usize, seed: u64) -> Self {
        let mixer = FeatureMixer::init(APPEARANCE_CHANNELS, seed);
        let input = 2 * mixer.output_len();
        let mut mlp = Mlp::init(
            &[input, hidden, IMAGE_SIDE * IMAGE_SIDE],
            OutputActivation::Linear,
            seed,
            1.0,
        );
        mlp.zero_output_layer();
        Self { mixer, mlp }
    }

    fn residual(&self, recon: &ImageGrid, original: &ImageGrid) -> Result<Vec<f64>> {
        let h = appearance_code(&self.mixer, recon, original)?;
        Ok(self.mlp.forward(&h))
    }
}

/// E1 plus the (optional) trained corrector.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub e1: Mlp,
    pub corrector: Option<Corrector>,
}

impl EncoderModel {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            e1: Mlp::zeros(
                &[IMAGE_SIDE * IMAGE_SIDE, hidden, PARAM_DIM],
                OutputActivation::Linear,
            ),
            corrector: None,
        }
    }

    pub fn init(hidden: usize, seed: u64) -> Self {
        Self {
            e1: Mlp::init(
                &[IMAGE_SIDE * IMAGE_SIDE, hidden, PARAM_DIM],
                OutputActivation::Linear,
                seed,
                1.0,
            ),
            corrector: None,
        }
    }

    /// E1: estimate of `w = M p` for a rendered face.
    pub fn encode(&self, x: &ImageGrid) -> Result<LatentVector> {
        x.check_shape(IMAGE_SIDE, IMAGE_SIDE)?;
        LatentVector::new(self.e1.forward(&centered(x)))
    }

    /// Identity embedding read off an image: identity block of `M^{-1} E1(x)`.
    pub fn identity_of_image(&self, mixing: &MixingMatrix, x: &ImageGrid) -> Result<Vec<f64>> {
        identity_embed(mixing, self.encode(x)?.as_slice())
    }
}

/// Renders `M^{-1} w`, then adds the corrector's residual computed from the
/// appearance code of the render and `x_orig`. Output is clamped to `[0, 1]`.
pub fn invert_with_restoration(
    model: &EncoderModel,
    mixing: &MixingMatrix,
    w: &LatentVector,
    x_orig: &ImageGrid,
) -> Result<ImageGrid> {
    let corrector = model
        .corrector
        .as_ref()
        .ok_or(Error::NotReady("residual corrector"))?;
    x_orig.check_shape(IMAGE_SIDE, IMAGE_SIDE)?;
    let recon = render_face(&mixing.invert(w.as_slice())?).0;
    let r = corrector.residual(&recon, x_orig)?;
    let pixels = recon
        .pixels()
        .iter()
        .zip(&r)
        .map(|(a, b)| (a + b).clamp(0.0, 1.0))
        .collect();
    ImageGrid::new(IMAGE_SIDE, IMAGE_SIDE, pixels)
}

#[derive(Clone, Debug)]
pub struct InversionTraining {
    pub model: EncoderModel,
    pub losses: Vec<f64>,
}

/// Fits E1 by mean squared latent error on `(image, w)` pairs.
pub fn train_encoder(
    images: &[ImageGrid],
    latents: &[Vec<f64>],
    init: EncoderModel,
    cfg: &TrainConfig,
) -> Result<InversionTraining> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_len("encoder targets", images.len(), latents.len())?;
    for img in images {
        img.check_shape(IMAGE_SIDE, IMAGE_SIDE)?;
    }
    let inputs: Vec<Vec<f64>> = images.iter().map(centered).collect();
    let mut model = init;
    let losses = fit_mse(&mut model.e1, &inputs, latents, cfg)?;
    Ok(InversionTraining { model, losses })
}

struct EditExample {
    recon_stats: Vec<f64>,
    orig_stats: Vec<f64>,
    /// target minus reconstruction
    delta: Vec<f64>,
}

/// Builds simulated edits: the reconstruction comes from E1 on the
/// original, optionally with identity drift and shifted covariates; the
/// target keeps the original identity with the reconstruction's covariates.
fn simulate_edits(
    model: &EncoderModel,
    mixing: &MixingMatrix,
    samples: &[WorldSample],
    count: usize,
    seed: u64,
) -> Result<Vec<EditExample>> {
    let mut rng = substream(seed, 0x656469);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let s = &samples[rng.random_range(0..samples.len())];
        let w = model.encode(&s.image)?;
        let mut q = mixing.invert(w.as_slice())?.0;
        let mode = rng.random_range(0..3);
        if mode > 0 {
            for v in &mut q[..IDENTITY_DIM] {
                *v += 0.08 * normal(&mut rng);
            }
        }
        if mode < 2 {
            for v in &mut q[IDENTITY_DIM..] {
                *v += 0.3 * normal(&mut rng);
            }
        }
        q.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        let recon = render_face(&FaceParams(q)).0;
        let mut t = q;
        t[..IDENTITY_DIM].copy_from_slice(s.params.identity());
        let target = render_face(&FaceParams(t)).0;
        out.push(EditExample {
            recon_stats: cell_statistics(&recon)?,
            orig_stats: cell_statistics(&s.image)?,
            delta: target
                .pixels()
                .iter()
                .zip(recon.pixels())
                .map(|(a, b)| a - b)
                .collect(),
        });
    }
    Ok(out)
}

/// Trains the corrector (E2 mixing and residual perceptron) on `pool`
/// simulated edits drawn from `samples`.
pub fn train_corrector(
    model: &EncoderModel,
    mixing: &MixingMatrix,
    samples: &[WorldSample],
    init: Corrector,
    pool: usize,
    cfg: &TrainConfig,
) -> Result<InversionTraining> {
    cfg.validate()?;
    if samples.is_empty() || pool == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut corrector = init;
    let mut losses = Vec::with_capacity(cfg.iterations);
    if cfg.iterations > 0 {
        let data = simulate_edits(model, mixing, samples, pool, cfg.seed)?;
        let mut rng = substream(cfg.seed, 0x636f72);
        let mut adam_mlp = Adam::new(corrector.mlp.params().len(), cfg);
        let mut adam_mix = Adam::new(corrector.mixer.params().len(), cfg);
        let mut g_mlp = vec![0.0; corrector.mlp.params().len()];
        let mut g_mix = vec![0.0; corrector.mixer.params().len()];
        let half = corrector.mixer.output_len();
        let n_px = (IMAGE_SIDE * IMAGE_SIDE) as f64;
        for it in 0..cfg.iterations {
            g_mlp.fill(0.0);
            g_mix.fill(0.0);
            let batch = cfg.sample_batch(&mut rng, data.len());
            let scale = 1.0 / (batch.len() as f64 * n_px);
            let mut loss = 0.0;
            for &i in &batch {
                let ex = &data[i];
                let f_recon = corrector.mixer.apply(&ex.recon_stats);
                let f_orig = corrector.mixer.apply(&ex.orig_stats);
                let h: Vec<f64> = f_recon.iter().chain(&f_orig).copied().collect();
                let cache = corrector.mlp.forward_cached(&h);
                let g: Vec<f64> = cache
                    .output()
                    .iter()
                    .zip(&ex.delta)
                    .map(|(r, d)| {
                        loss += (r - d) * (r - d) * scale;
                        2.0 * (r - d) * scale
                    })
                    .collect();
                let h_bar = corrector.mlp.backward(&cache, &g, &mut g_mlp);
                corrector
                    .mixer
                    .backward(&ex.recon_stats, &f_recon, &h_bar[..half], &mut g_mix);
                corrector
                    .mixer
                    .backward(&ex.orig_stats, &f_orig, &h_bar[half..], &mut g_mix);
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: it });
            }
            adam_mlp.step(corrector.mlp.params_mut(), &g_mlp);
            adam_mix.step(corrector.mixer.params_mut(), &g_mix);
            losses.push(loss);
        }
        round_to_f32(corrector.mlp.params_mut());
        round_to_f32(corrector.mixer.params_mut());
    }
    let mut out = model.clone();
    out.corrector = Some(corrector);
    Ok(InversionTraining { model: out, losses })
}

const _: () = assert!(IMAGE_SIDE.is_multiple_of(CELL_GRID));

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_encoder_gives_zero_latent() {
        let m = EncoderModel::zeros(8);
        let img = render_face(&FaceParams::zeros()).0;
        assert_eq!(m.encode(&img).unwrap().as_slice(), &[0.0; 12]);
    }

    #[test]
    fn missing_corrector_is_not_ready() {
        let m = EncoderModel::zeros(8);
        let mix = MixingMatrix::seeded(1);
        let img = render_face(&FaceParams::zeros()).0;
        let err = invert_with_restoration(&m, &mix, &LatentVector::zeros(12), &img).unwrap_err();
        assert!(matches!(err, Error::NotReady(_)));
    }

    #[test]
    fn zero_corrector_returns_plain_render() {
        let mut m = EncoderModel::zeros(8);
        m.corrector = Some(Corrector::zeros(4));
        let mix = MixingMatrix::seeded(1);
        let p = FaceParams([
            0.2, 0.1, -0.3, 0.4, 0.5, -0.6, 0.3, 0.1, -0.2, 0.0, 0.4, 0.1,
        ]);
        let w = LatentVector::new(mix.apply(&p)).unwrap();
        let img = render_face(&FaceParams::zeros()).0;
        let out = invert_with_restoration(&m, &mix, &w, &img).unwrap();
        let plain = render_face(&mix.invert(w.as_slice()).unwrap()).0;
        assert_eq!(out, plain);
    }

    #[test]
    fn encoder_training_is_deterministic_and_zero_iterations_keep_init() {
        let data = sample_dataset(30, 2, false, 0.25).unwrap();
        let mix = MixingMatrix::seeded(2);
        let imgs: Vec<ImageGrid> = data.iter().map(|s| s.image.clone()).collect();
        let lat: Vec<Vec<f64>> = data.iter().map(|s| mix.apply(&s.params)).collect();
        let init = EncoderModel::init(6, 1);
        let same =
            train_encoder(&imgs, &lat, init.clone(), &TrainConfig::new(0, 8, 1e-3, 0)).unwrap();
        assert_eq!(same.model, init);
        let cfg = TrainConfig::new(20, 8, 1e-3, 5);
        let a = train_encoder(&imgs, &lat, init.clone(), &cfg).unwrap();
        let b = train_encoder(&imgs, &lat, init, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.losses.last().unwrap() < &a.losses[0]);
    }
}
