//! Transformation spectra, added/removed-feature vectors, score histograms
//! and bias correlation reports.

use serde::{Deserialize, Serialize};

use crate::attribute::AttributeKind;
use crate::bundle::ModelBundle;
use crate::error::{check_len, Error, Result};
use crate::flow::{clamp_score, edit_latent, LatentVector};
use crate::metrics::cosine;
use crate::world::{
    invert_with_restoration, truth_score, FaceParams, ImageGrid, COVARIATE_NAMES, IDENTITY_DIM,
    PARAM_DIM,
};

/// Smallest number of edits per attribute accepted by [`bias_correlation_report`].
pub const MIN_BIAS_EDITS: usize = 30;

/// `lo, lo + step, ...` up to `hi` inclusive (with a small tolerance),
/// values rounded to 12 decimals.
pub fn lambda_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::invalid(format!("bad lambda range {lo}:{hi}:{step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

pub fn default_lambda_grid() -> Vec<f64> {
    lambda_grid(-0.4, 0.4, 0.1).expect("valid default range")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumEntry {
    pub lambda: f64,
    pub target_score: f64,
    /// The requested score left `[0, 1]` and was clamped.
    pub clamped: bool,
    pub latent: LatentVector,
    pub image: ImageGrid,
    pub predicted_score: f64,
    /// Oracle score of the edited latent's (clamped) parameters.
    pub truth_score: f64,
    pub identity_similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult {
    pub attribute: AttributeKind,
    pub original_score: f64,
    pub original_latent: LatentVector,
    pub entries: Vec<SpectrumEntry>,
}

fn clamped_params(p: &FaceParams) -> FaceParams {
    FaceParams(p.0.map(|v| v.clamp(-1.0, 1.0)))
}

/// Edits `x` at every `lambda` of a strictly increasing grid.
pub fn build_spectrum(
    bundle: &ModelBundle,
    attr: AttributeKind,
    x: &ImageGrid,
    grid: &[f64],
) -> Result<SpectrumResult> {
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    if grid.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(Error::invalid("lambda grid must be strictly increasing"));
    }
    let regressor = bundle.regressor(attr)?;
    let flow = bundle.flow(attr)?;
    let w = bundle.encoder.encode(x)?;
    let s = regressor.predict(x)?;
    let id0 = bundle.encoder.identity_of_image(&bundle.mixing, x)?;
    let mut entries = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let (latent, target) = edit_latent(flow, &w, s, lambda)?;
        let image = invert_with_restoration(&bundle.encoder, &bundle.mixing, &latent, x)?;
        let p = clamped_params(&bundle.mixing.invert(latent.as_slice())?);
        entries.push(SpectrumEntry {
            lambda,
            target_score: target,
            clamped: clamp_score(s + lambda) != s + lambda,
            predicted_score: regressor.predict(&image)?,
            truth_score: truth_score(&p, attr),
            identity_similarity: cosine(
                &id0,
                &bundle.encoder.identity_of_image(&bundle.mixing, &image)?,
            )?,
            latent,
            image,
        });
    }
    Ok(SpectrumResult {
        attribute: attr,
        original_score: s,
        original_latent: w,
        entries,
    })
}

/// Latent differences between adjacent spectrum entries `j < i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffVector {
    pub lambda_i: f64,
    pub lambda_j: f64,
    /// Added features `w_i - w_j`.
    pub af: Vec<f64>,
    /// Removed features `w_j - w_i`.
    pub rf: Vec<f64>,
}

pub fn diff_vectors(spectrum: &SpectrumResult) -> Result<Vec<DiffVector>> {
    let latents: Vec<(f64, &[f64])> = spectrum
        .entries
        .iter()
        .map(|e| (e.lambda, e.latent.as_slice()))
        .collect();
    diff_latents(&latents)
}

/// [`diff_vectors`] on bare `(lambda, w)` pairs in increasing `lambda` order.
pub fn diff_latents(latents: &[(f64, &[f64])]) -> Result<Vec<DiffVector>> {
    if latents.len() < 2 {
        return Err(Error::invalid(
            "a spectrum needs at least two entries for difference vectors",
        ));
    }
    let mut out = Vec::with_capacity(latents.len() - 1);
    for pair in latents.windows(2) {
        let ((lj, wj), (li, wi)) = (pair[0], pair[1]);
        check_len("spectrum latent", wj.len(), wi.len())?;
        out.push(DiffVector {
            lambda_i: li,
            lambda_j: lj,
            af: wi.iter().zip(wj).map(|(a, b)| a - b).collect(),
            rf: wj.iter().zip(wi).map(|(a, b)| a - b).collect(),
        });
    }
    Ok(out)
}

/// Inverts `base + AF` and `base + RF` against `x_orig`.
pub fn render_diff(
    bundle: &ModelBundle,
    diff: &DiffVector,
    base: &LatentVector,
    x_orig: &ImageGrid,
) -> Result<(ImageGrid, ImageGrid)> {
    check_len("difference vector", base.len(), diff.af.len())?;
    let shift =
        |d: &[f64]| LatentVector::new(base.as_slice().iter().zip(d).map(|(a, b)| a + b).collect());
    let added =
        invert_with_restoration(&bundle.encoder, &bundle.mixing, &shift(&diff.af)?, x_orig)?;
    let removed =
        invert_with_restoration(&bundle.encoder, &bundle.mixing, &shift(&diff.rf)?, x_orig)?;
    Ok((added, removed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    /// `bins + 1` equally spaced edges over `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
    /// Fraction of scores in `[0.4, 0.6]`.
    pub mid_mass: f64,
}

/// Fixed-width histogram on `[0, 1]`; a score of exactly 1 lands in the last bin.
pub fn score_histogram(scores: &[f64], bins: usize) -> Result<ScoreHistogram> {
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let mut counts = vec![0; bins];
    let mut mid = 0;
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("score {s} outside [0, 1]")));
        }
        counts[((s * bins as f64) as usize).min(bins - 1)] += 1;
        if (0.4..=0.6).contains(&s) {
            mid += 1;
        }
    }
    Ok(ScoreHistogram {
        edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
        counts,
        total: scores.len(),
        mid_mass: mid as f64 / scores.len() as f64,
    })
}

/// One edit as seen by the bias report; `edited` is `M^{-1} w'`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasEdit {
    pub attribute: AttributeKind,
    pub lambda: f64,
    pub original: FaceParams,
    pub edited: FaceParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignVerdict {
    Positive,
    Negative,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateCorrelation {
    pub covariate: String,
    pub correlation: f64,
    /// The covariate delta never varied; the correlation is reported as 0.
    pub degenerate: bool,
    pub sign: SignVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeBias {
    pub attribute: AttributeKind,
    pub edits: usize,
    pub covariates: Vec<CovariateCorrelation>,
}

impl AttributeBias {
    pub fn correlation(&self, covariate: &str) -> Option<f64> {
        self.covariates
            .iter()
            .find(|c| c.covariate == covariate)
            .map(|c| c.correlation)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub attributes: Vec<AttributeBias>,
}

impl BiasReport {
    pub fn get(&self, attr: AttributeKind) -> Option<&AttributeBias> {
        self.attributes.iter().find(|a| a.attribute == attr)
    }
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_len("correlation samples", x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Per attribute: correlation between `lambda` and each covariate delta.
pub fn bias_correlation_report(edits: &[BiasEdit]) -> Result<BiasReport> {
    let mut report = BiasReport::default();
    for attr in AttributeKind::ALL {
        let group: Vec<&BiasEdit> = edits.iter().filter(|e| e.attribute == attr).collect();
        if group.is_empty() {
            continue;
        }
        if group.len() < MIN_BIAS_EDITS {
            return Err(Error::invalid(format!(
                "{} edits for {attr}; at least {MIN_BIAS_EDITS} required",
                group.len()
            )));
        }
        let lambdas: Vec<f64> = group.iter().map(|e| e.lambda).collect();
        let mut covariates = Vec::with_capacity(PARAM_DIM - IDENTITY_DIM);
        for (k, name) in COVARIATE_NAMES.iter().enumerate() {
            let i = IDENTITY_DIM + k;
            let deltas: Vec<f64> = group
                .iter()
                .map(|e| e.edited.0[i] - e.original.0[i])
                .collect();
            let (correlation, degenerate) = match pearson(&lambdas, &deltas)? {
                Some(r) => (r, false),
                None if lambdas.iter().all(|l| *l == lambdas[0]) => {
                    return Err(Error::Undefined("correlation with a constant lambda"));
                }
                None => (0.0, true),
            };
            let sign = if degenerate || correlation == 0.0 {
                SignVerdict::Zero
            } else if correlation > 0.0 {
                SignVerdict::Positive
            } else {
                SignVerdict::Negative
            };
            covariates.push(CovariateCorrelation {
                covariate: name.to_string(),
                correlation,
                degenerate,
                sign,
            });
        }
        report.attributes.push(AttributeBias {
            attribute: attr,
            edits: group.len(),
            covariates,
        });
    }
    if report.attributes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(report)
}

/// Images side by side in one row, separated by a `gap`-pixel black strip.
pub fn montage(images: &[ImageGrid], gap: usize) -> Result<ImageGrid> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.height(), first.width());
    for img in images {
        img.check_shape(h, w)?;
    }
    let width = images.len() * w + (images.len() - 1) * gap;
    let mut pixels = vec![0.0; h * width];
    for (k, img) in images.iter().enumerate() {
        let x0 = k * (w + gap);
        for r in 0..h {
            pixels[r * width + x0..r * width + x0 + w]
                .copy_from_slice(&img.pixels()[r * w..(r + 1) * w]);
        }
    }
    ImageGrid::new(h, width, pixels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub lambda: f64,
    pub target_score: f64,
    pub clamped: bool,
    pub predicted_score: f64,
    pub truth_score: f64,
    pub identity_similarity: f64,
}

/// JSON companion of a spectrum montage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSidecar {
    pub attribute: AttributeKind,
    pub original_score: f64,
    pub entries: Vec<SidecarEntry>,
}

impl From<&SpectrumResult> for SpectrumSidecar {
    fn from(s: &SpectrumResult) -> Self {
        Self {
            attribute: s.attribute,
            original_score: s.original_score,
            entries: s
                .entries
                .iter()
                .map(|e| SidecarEntry {
                    lambda: e.lambda,
                    target_score: e.target_score,
                    clamped: e.clamped,
                    predicted_score: e.predicted_score,
                    truth_score: e.truth_score,
                    identity_similarity: e.identity_similarity,
                })
                .collect(),
        }
    }
}
