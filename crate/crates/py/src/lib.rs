//! Python module `impress`. Images cross the boundary as flat row-major
//! lists of 32 x 32 floats in `[0, 1]`; face parameters as lists of 12.

use std::path::PathBuf;

use impress_core::flow::{forward_map, log_density, reverse_map, LatentVector};
use impress_core::metrics::{self, FidVariant, GaussianStats};
use impress_core::spectrum::{build_spectrum, diff_vectors, lambda_grid};
use impress_core::world::{self, FaceParams, ImageGrid, IMAGE_SIDE};
use impress_core::{AttributeKind, Error, ModelBundle};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn attr(name: &str) -> PyResult<AttributeKind> {
    name.parse().map_err(err)
}

fn image(pixels: Vec<f64>) -> PyResult<ImageGrid> {
    ImageGrid::new(IMAGE_SIDE, IMAGE_SIDE, pixels).map_err(err)
}

fn params(p: Vec<f64>) -> PyResult<FaceParams> {
    FaceParams::from_slice(&p).map_err(err)
}

fn latent(w: Vec<f64>) -> PyResult<LatentVector> {
    LatentVector::new(w).map_err(err)
}

/// Trained encoder, mixing matrix and per-attribute regressors and flows.
#[pyclass(name = "Bundle")]
struct PyBundle {
    inner: ModelBundle,
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ModelBundle::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.config_hash.clone()
    }

    /// Attributes with a regressor, and whether each has a flow.
    fn attributes(&self) -> Vec<(String, bool)> {
        self.inner
            .attributes
            .iter()
            .map(|(k, m)| (k.tag().to_string(), m.flow.is_some()))
            .collect()
    }

    fn encode(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .encoder
            .encode(&image(x)?)
            .map_err(err)?
            .into_inner())
    }

    fn predict(&self, attribute: &str, x: Vec<f64>) -> PyResult<f64> {
        self.inner
            .regressor(attr(attribute)?)
            .map_err(err)?
            .predict(&image(x)?)
            .map_err(err)
    }

    fn forward(&self, attribute: &str, z: Vec<f64>, score: f64) -> PyResult<Vec<f64>> {
        let flow = self.inner.flow(attr(attribute)?).map_err(err)?;
        Ok(forward_map(flow, &latent(z)?, score)
            .map_err(err)?
            .into_inner())
    }

    fn reverse(&self, attribute: &str, w: Vec<f64>, score: f64) -> PyResult<Vec<f64>> {
        let flow = self.inner.flow(attr(attribute)?).map_err(err)?;
        Ok(reverse_map(flow, &latent(w)?, score)
            .map_err(err)?
            .into_inner())
    }

    fn log_density(&self, attribute: &str, w: Vec<f64>, score: f64) -> PyResult<f64> {
        let flow = self.inner.flow(attr(attribute)?).map_err(err)?;
        log_density(flow, &latent(w)?, score).map_err(err)
    }

    /// Edits `x` by `delta` in score; returns the image and score bookkeeping.
    fn edit<'py>(
        &self,
        py: Python<'py>,
        attribute: &str,
        x: Vec<f64>,
        delta: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let out = self
            .inner
            .edit(attr(attribute)?, &image(x)?, delta)
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("image", out.image.pixels().to_vec())?;
        d.set_item("latent", out.latent.into_inner())?;
        d.set_item("original_score", out.original_score)?;
        d.set_item("target_score", out.target_score)?;
        d.set_item("clamped", out.clamped)?;
        Ok(d)
    }

    /// Edits at every point of `lo:hi:step`, plus the added-feature vectors
    /// between neighbours.
    fn spectrum<'py>(
        &self,
        py: Python<'py>,
        attribute: &str,
        x: Vec<f64>,
        lo: f64,
        hi: f64,
        step: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let grid = lambda_grid(lo, hi, step).map_err(err)?;
        let spec = build_spectrum(&self.inner, attr(attribute)?, &image(x)?, &grid).map_err(err)?;
        let diffs = diff_vectors(&spec).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("original_score", spec.original_score)?;
        d.set_item(
            "lambdas",
            spec.entries.iter().map(|e| e.lambda).collect::<Vec<_>>(),
        )?;
        d.set_item(
            "images",
            spec.entries
                .iter()
                .map(|e| e.image.pixels().to_vec())
                .collect::<Vec<_>>(),
        )?;
        d.set_item(
            "predicted",
            spec.entries
                .iter()
                .map(|e| e.predicted_score)
                .collect::<Vec<_>>(),
        )?;
        d.set_item(
            "truth",
            spec.entries
                .iter()
                .map(|e| e.truth_score)
                .collect::<Vec<_>>(),
        )?;
        d.set_item("added", diffs.into_iter().map(|v| v.af).collect::<Vec<_>>())?;
        Ok(d)
    }
}

/// Renders face parameters (clamped to `[-1, 1]`) to a 32 x 32 image.
#[pyfunction]
fn render_face(p: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(world::render_face(&params(p)?).0.pixels().to_vec())
}

#[pyfunction]
fn truth_score(p: Vec<f64>, attribute: &str) -> PyResult<f64> {
    Ok(world::truth_score(&params(p)?, attr(attribute)?))
}

/// `n` faces as dicts with `params`, `image` and `scores`.
#[pyfunction]
#[pyo3(signature = (n, seed, adult_only = false, covariate_scale = 0.25))]
fn sample_faces<'py>(
    py: Python<'py>,
    n: usize,
    seed: u64,
    adult_only: bool,
    covariate_scale: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    world::sample_dataset(n, seed, adult_only, covariate_scale)
        .map_err(err)?
        .into_iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("params", s.params.0.to_vec())?;
            d.set_item("image", s.image.pixels().to_vec())?;
            d.set_item("scores", s.scores.to_vec())?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn identity_similarity(pairs: Vec<(Vec<f64>, Vec<f64>)>) -> PyResult<f64> {
    metrics::identity_similarity(&pairs).map_err(err)
}

#[pyfunction]
fn adas(edited: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    metrics::adas(&edited, &target).map_err(err)
}

/// Fréchet distance between two Gaussians given by means and row-major covariances.
#[pyfunction]
#[pyo3(signature = (mean1, cov1, mean2, cov2, rooted = false))]
fn frechet_distance(
    mean1: Vec<f64>,
    cov1: Vec<f64>,
    mean2: Vec<f64>,
    cov2: Vec<f64>,
    rooted: bool,
) -> PyResult<f64> {
    let a = GaussianStats::new(mean1, cov1, 0).map_err(err)?;
    let b = GaussianStats::new(mean2, cov2, 0).map_err(err)?;
    let variant = if rooted {
        FidVariant::Rooted
    } else {
        FidVariant::Standard
    };
    metrics::frechet_distance(&a, &b, variant).map_err(err)
}

/// Runs the command line with `argv` (without the program name) and returns its exit code.
#[pyfunction]
fn run_command(argv: Vec<String>) -> i32 {
    impress_cli::run_command(std::iter::once("impress".to_string()).chain(argv))
}

#[pymodule]
fn impress(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(render_face, m)?)?;
    m.add_function(wrap_pyfunction!(truth_score, m)?)?;
    m.add_function(wrap_pyfunction!(sample_faces, m)?)?;
    m.add_function(wrap_pyfunction!(identity_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(adas, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    m.add("IMAGE_SIDE", IMAGE_SIDE)?;
    m.add("ATTRIBUTES", AttributeKind::ALL.map(|a| a.tag()).to_vec())?;
    Ok(())
}
