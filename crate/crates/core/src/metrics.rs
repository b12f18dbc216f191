//! Identity similarity, perceptual distance, Fréchet distance and ADAS.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::dot;
use crate::rng::{normal, substream};
use crate::world::ImageGrid;

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("embedding", a.len(), b.len())?;
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("zero-norm embedding"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity over `(original, edited)` embedding pairs.
pub fn identity_similarity(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = 0.0;
    for (o, e) in pairs {
        acc += cosine(o, e)?;
    }
    Ok(acc / pairs.len() as f64)
}

/// One layer `H x W x C`, stored `[h][w][c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLayer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub layers: Vec<FeatureLayer>,
    /// Nonnegative per-channel weights of each layer.
    pub weights: Vec<Vec<f64>>,
}

impl FeatureStack {
    /// Divides every channel vector by its Euclidean norm (zero vectors are
    /// left as they are).
    pub fn normalize_channels(&mut self) {
        for l in &mut self.layers {
            for v in l.values.chunks_exact_mut(l.channels) {
                let n = dot(v, v).sqrt();
                if n > 0.0 {
                    v.iter_mut().for_each(|x| *x /= n);
                }
            }
        }
    }
}

/// `sum_l 1/(H_l W_l) sum_{h,w} || w_l * (a - b) ||^2`.
pub fn perceptual_distance(a: &FeatureStack, b: &FeatureStack) -> Result<f64> {
    check_len("feature layers", a.layers.len(), b.layers.len())?;
    check_len("layer weights", a.layers.len(), a.weights.len())?;
    if a.weights != b.weights {
        return Err(Error::invalid("feature stacks use different layer weights"));
    }
    let mut total = 0.0;
    for ((la, lb), w) in a.layers.iter().zip(&b.layers).zip(&a.weights) {
        if (la.height, la.width, la.channels) != (lb.height, lb.width, lb.channels) {
            return Err(Error::invalid("feature layer shapes differ"));
        }
        check_len("channel weights", la.channels, w.len())?;
        let mut acc = 0.0;
        for (ca, cb) in la
            .values
            .chunks_exact(la.channels)
            .zip(lb.values.chunks_exact(lb.channels))
        {
            for c in 0..la.channels {
                let d = w[c] * (ca[c] - cb[c]);
                acc += d * d;
            }
        }
        total += acc / (la.height * la.width) as f64;
    }
    Ok(total)
}

/// Mean perceptual distance over paired image sets.
pub fn perceptual_distance_sets(a: &[FeatureStack], b: &[FeatureStack]) -> Result<f64> {
    check_len("image set", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += perceptual_distance(x, y)?;
    }
    Ok(acc / a.len() as f64)
}

/// Fixed random-projection pyramid standing in for a pretrained backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidFeatures {
    channels: usize,
    /// Per level: `channels x 9` projection of a 3x3 neighbourhood.
    projections: Vec<Vec<f64>>,
    resolutions: Vec<usize>,
}

impl PyramidFeatures {
    pub fn new(seed: u64) -> Self {
        let resolutions = vec![16, 8, 4];
        let channels = 8;
        let mut rng = substream(seed, 0x7079);
        let projections = resolutions
            .iter()
            .map(|_| (0..channels * 9).map(|_| normal(&mut rng) * 3.0).collect())
            .collect();
        Self {
            channels,
            projections,
            resolutions,
        }
    }

    fn pooled(img: &ImageGrid, side: usize) -> Vec<f64> {
        let f = img.height() / side;
        let mut out = vec![0.0; side * side];
        for r in 0..img.height() {
            for c in 0..img.width() {
                out[(r / f) * side + c / f] += img.get(r, c) - 0.5;
            }
        }
        let n = (f * f) as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Raw (unnormalized) features.
    fn raw(&self, img: &ImageGrid) -> Result<Vec<FeatureLayer>> {
        img.check_shape(32, 32)?;
        let mut layers = Vec::with_capacity(self.resolutions.len());
        for (&side, proj) in self.resolutions.iter().zip(&self.projections) {
            let pooled = Self::pooled(img, side);
            let at = |r: isize, c: isize| {
                let r = r.clamp(0, side as isize - 1) as usize;
                let c = c.clamp(0, side as isize - 1) as usize;
                pooled[r * side + c]
            };
            let mut values = Vec::with_capacity(side * side * self.channels);
            for r in 0..side as isize {
                for c in 0..side as isize {
                    let mut patch = [0.0; 9];
                    for (k, p) in patch.iter_mut().enumerate() {
                        *p = at(r + k as isize / 3 - 1, c + k as isize % 3 - 1);
                    }
                    for ch in 0..self.channels {
                        values.push(dot(&proj[ch * 9..(ch + 1) * 9], &patch).tanh());
                    }
                }
            }
            layers.push(FeatureLayer {
                height: side,
                width: side,
                channels: self.channels,
                values,
            });
        }
        Ok(layers)
    }

    /// Channel-normalized stack with unit layer weights.
    pub fn extract(&self, img: &ImageGrid) -> Result<FeatureStack> {
        let layers = self.raw(img)?;
        let weights = layers.iter().map(|l| vec![1.0; l.channels]).collect();
        let mut s = FeatureStack { layers, weights };
        s.normalize_channels();
        Ok(s)
    }

    /// Global feature vector for Fréchet statistics: per-level channel means
    /// and standard deviations of the raw features.
    pub fn global(&self, img: &ImageGrid) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for l in self.raw(img)? {
            let n = (l.height * l.width) as f64;
            for ch in 0..l.channels {
                let vals = l.values.iter().skip(ch).step_by(l.channels);
                let mean = vals.clone().sum::<f64>() / n;
                let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                out.push(mean);
                out.push(var.sqrt());
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub cov: Vec<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, n: usize) -> Result<Self> {
        check_len("covariance", mean.len() * mean.len(), cov.len())?;
        Ok(Self { mean, cov, n })
    }

    /// Sample mean and unbiased covariance; needs at least two rows.
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::invalid(
                "Fréchet statistics need at least two samples",
            ));
        }
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            check_len("feature vector", d, r.len())?;
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut cov = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in 0..d {
                    cov[i * d + j] += di * (r[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= n - 1.0);
        Self::new(mean, cov, rows.len())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn matrix(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let m = DMatrix::from_row_slice(d, d, &self.cov);
        let asym = (&m - m.transpose()).abs().max();
        let scale = m.abs().max().max(1.0);
        if asym > 1e-9 * scale {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        Ok((&m + m.transpose()) * 0.5)
    }
}

const EIGEN_FLOOR: f64 = -1e-8;

/// Square root of a symmetric PSD matrix by eigendecomposition; eigenvalues
/// down to `-1e-8` (relative to the largest magnitude) are clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.abs().max().max(1.0);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < EIGEN_FLOOR * scale {
            return Err(Error::invalid(format!(
                "matrix is not PSD (eigenvalue {v})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidVariant {
    /// `|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`
    #[default]
    Standard,
    /// Square root of the standard value.
    Rooted,
}

pub fn frechet_distance(
    s1: &GaussianStats,
    s2: &GaussianStats,
    variant: FidVariant,
) -> Result<f64> {
    check_len("Fréchet statistics", s1.dim(), s2.dim())?;
    let (a, b) = (s1.matrix()?, s2.matrix()?);
    let ra = sqrtm_psd(&a)?;
    let inner = &ra * &b * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = sqrtm_psd(&inner)?.trace();
    let mean_term: f64 = s1
        .mean
        .iter()
        .zip(&s2.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let d = mean_term + a.trace() + b.trace() - 2.0 * cross;
    Ok(match variant {
        FidVariant::Standard => d,
        FidVariant::Rooted => d.max(0.0).sqrt(),
    })
}

/// Mean `|edited - target|`.
pub fn adas(edited: &[f64], target: &[f64]) -> Result<f64> {
    check_len("ADAS scores", target.len(), edited.len())?;
    if edited.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(edited
        .iter()
        .zip(target)
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / edited.len() as f64)
}

/// Full-scale reference values kept in reports for comparison only.
pub const REFERENCE_ADAS_TRUST: f64 = 0.088;

/// Edits of one evaluation image at every `lambda` of an [`EvalSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpectrum {
    /// Aligned with [`EvalSet::lambdas`]; the `lambda = 0` slot holds the original.
    pub images: Vec<ImageGrid>,
    /// Predicted score of each image.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub lambdas: Vec<f64>,
    pub items: Vec<EvalSpectrum>,
}

impl EvalSet {
    fn origin(&self) -> Result<usize> {
        if self.lambdas.len() < 2 {
            return Err(Error::invalid("spectrum needs at least two points"));
        }
        if self.lambdas.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::invalid(
                "spectrum lambdas must be strictly increasing",
            ));
        }
        let origin = self
            .lambdas
            .iter()
            .position(|l| *l == 0.0)
            .ok_or_else(|| Error::invalid("spectrum must contain the original at lambda 0"))?;
        if self.items.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for it in &self.items {
            check_len("spectrum images", self.lambdas.len(), it.images.len())?;
            check_len("spectrum scores", self.lambdas.len(), it.scores.len())?;
        }
        Ok(origin)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub is: f64,
    pub pd: f64,
    pub fid: f64,
    /// ADAS of the pair's edit farther from the original.
    pub adas: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub is: f64,
    pub pd: f64,
    pub fid: f64,
    pub adas: f64,
    pub lambdas: Vec<f64>,
    pub pairs: Vec<PairMetrics>,
    /// Original set against all edited images pooled.
    pub fid_pooled: f64,
    pub fid_variant: FidVariant,
    pub items: usize,
    pub tags: Vec<String>,
    pub config_hash: Option<String>,
    pub versions: BTreeMap<String, String>,
    pub reference: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// Identity similarity, perceptual distance and Fréchet distance between
/// adjacent spectrum points, and ADAS of every edit against
/// `clamp(S_o + lambda)`.
pub fn adjacent_pair_eval(
    set: &EvalSet,
    embed: &dyn Fn(&ImageGrid) -> Result<Vec<f64>>,
    features: &PyramidFeatures,
    variant: FidVariant,
) -> Result<MetricsReport> {
    let origin = set.origin()?;
    let k = set.lambdas.len();
    let mut emb = Vec::with_capacity(set.items.len());
    let mut stacks = Vec::with_capacity(set.items.len());
    let mut globals = Vec::with_capacity(set.items.len());
    for it in &set.items {
        emb.push(it.images.iter().map(embed).collect::<Result<Vec<_>>>()?);
        stacks.push(
            it.images
                .iter()
                .map(|x| features.extract(x))
                .collect::<Result<Vec<_>>>()?,
        );
        globals.push(
            it.images
                .iter()
                .map(|x| features.global(x))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let stats_at = |j: usize| {
        GaussianStats::from_samples(&globals.iter().map(|g| g[j].clone()).collect::<Vec<_>>())
    };
    let adas_at = |j: usize| {
        let edited: Vec<f64> = set.items.iter().map(|it| it.scores[j]).collect();
        let target: Vec<f64> = set
            .items
            .iter()
            .map(|it| (it.scores[origin] + set.lambdas[j]).clamp(0.0, 1.0))
            .collect();
        adas(&edited, &target)
    };
    let mut pairs = Vec::with_capacity(k - 1);
    for j in 0..k - 1 {
        let id_pairs: Vec<(Vec<f64>, Vec<f64>)> = emb
            .iter()
            .map(|e| (e[j].clone(), e[j + 1].clone()))
            .collect();
        let a: Vec<FeatureStack> = stacks.iter().map(|s| s[j].clone()).collect();
        let b: Vec<FeatureStack> = stacks.iter().map(|s| s[j + 1].clone()).collect();
        let far = if j < origin { j } else { j + 1 };
        pairs.push(PairMetrics {
            lambda_a: set.lambdas[j],
            lambda_b: set.lambdas[j + 1],
            is: identity_similarity(&id_pairs)?,
            pd: perceptual_distance_sets(&a, &b)?,
            fid: frechet_distance(&stats_at(j)?, &stats_at(j + 1)?, variant)?,
            adas: adas_at(far)?,
        });
    }
    let edited: Vec<Vec<f64>> = globals
        .iter()
        .flat_map(|g| {
            g.iter()
                .enumerate()
                .filter(|(j, _)| *j != origin)
                .map(|(_, v)| v.clone())
        })
        .collect();
    let fid_pooled = frechet_distance(
        &stats_at(origin)?,
        &GaussianStats::from_samples(&edited)?,
        variant,
    )?;
    let mean = |f: fn(&PairMetrics) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
    Ok(MetricsReport {
        is: mean(|p| p.is),
        pd: mean(|p| p.pd),
        fid: mean(|p| p.fid),
        adas: mean(|p| p.adas),
        lambdas: set.lambdas.clone(),
        fid_pooled,
        fid_variant: variant,
        items: set.items.len(),
        tags: Vec::new(),
        config_hash: None,
        versions: BTreeMap::new(),
        reference: [("adas_trust_full_scale".to_string(), REFERENCE_ADAS_TRUST)]
            .into_iter()
            .collect(),
        warnings: Vec::new(),
        pairs,
    })
}
