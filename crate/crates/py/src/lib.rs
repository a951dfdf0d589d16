//! Python module `grounded_rank`.

use std::path::PathBuf;

use grounded_rank::data::{build_c2c_pairs, load_corpus, CaptionedCorpus};
use grounded_rank::encoders::{load_checkpoint, save_checkpoint, tokenize as tokenize_text, Model as CoreModel};
use grounded_rank::eval::{self, RetrievalReport};
use grounded_rank::experiment::{self, ExperimentConfig};
use grounded_rank::grad::Tensor;
use grounded_rank::loss::{literal_loss, max_violation_loss, sum_violation_loss, LossConfig, LossVariant};
use grounded_rank::pseudopairs::percentile_threshold as percentile;
use grounded_rank::Error;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } => PyOSError::new_err(msg),
        e if e.is_numeric_error() => PyArithmeticError::new_err(msg),
        e if e.is_config_error() => PyValueError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn matrix(rows: Vec<Vec<f32>>) -> PyResult<Tensor<f32>> {
    Tensor::from_rows(&rows).map_err(err)
}

fn rows(t: &Tensor<f32>) -> Vec<Vec<f32>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

/// Lowercased, punctuation-trimmed whitespace tokens.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    tokenize_text(text)
}

/// Dot products of every row of `a` with every row of `b`.
#[pyfunction]
fn similarity(a: Vec<Vec<f32>>, b: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
    let (a, b) = (matrix(a)?, matrix(b)?);
    if a.cols() != b.cols() {
        return Err(PyValueError::new_err("row widths differ"));
    }
    let n = b.rows();
    let data = grounded_rank::grad::matmul_bt(a.data(), b.data(), a.rows(), a.cols(), n);
    Ok(data.chunks(n.max(1)).map(<[f32]>::to_vec).collect())
}

fn loss_config(margin: f64, variant: LossVariant) -> LossConfig {
    LossConfig {
        margin,
        variant,
        ..LossConfig::default()
    }
}

/// Hardest-negative hinge loss of a square similarity matrix with gold
/// pairs on the diagonal.
#[pyfunction]
#[pyo3(signature = (scores, margin = 0.2))]
fn max_violation(scores: Vec<Vec<f64>>, margin: f64) -> PyResult<f64> {
    let s = Tensor::from_rows(&scores).map_err(err)?;
    max_violation_loss(&s, &loss_config(margin, LossVariant::MaxViolation)).map_err(err)
}

/// Hinge loss summed over all negatives.
#[pyfunction]
#[pyo3(signature = (scores, margin = 0.2))]
fn sum_violation(scores: Vec<Vec<f64>>, margin: f64) -> PyResult<f64> {
    let s = Tensor::from_rows(&scores).map_err(err)?;
    sum_violation_loss(&s, &loss_config(margin, LossVariant::SumViolation)).map_err(err)
}

/// Double-loop reference of either loss.
#[pyfunction]
#[pyo3(signature = (scores, margin = 0.2, variant = "max-violation"))]
fn reference_loss(scores: Vec<Vec<f64>>, margin: f64, variant: &str) -> PyResult<f64> {
    let variant: LossVariant =
        serde_json::from_value(variant.into()).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let s = Tensor::from_rows(&scores).map_err(err)?;
    Ok(literal_loss(&s, &loss_config(margin, variant)))
}

#[pyfunction]
fn recall_at_k(ranks: Vec<usize>, k: usize) -> PyResult<f64> {
    eval::recall_at_k(&ranks, k).map_err(err)
}

#[pyfunction]
fn median_rank(ranks: Vec<usize>) -> PyResult<f64> {
    eval::median_rank(&ranks).map_err(err)
}

/// Best gold rank per image; `scores` is images × captions.
#[pyfunction]
fn rank_image_to_text(scores: Vec<Vec<f32>>, gold: Vec<Vec<usize>>) -> PyResult<Vec<usize>> {
    eval::rank_image_to_text(&matrix(scores)?, &gold).map_err(err)
}

/// Gold image rank per caption; `scores` is captions × images.
#[pyfunction]
fn rank_text_to_image(scores: Vec<Vec<f32>>, gold: Vec<usize>) -> PyResult<Vec<usize>> {
    eval::rank_text_to_image(&matrix(scores)?, &gold).map_err(err)
}

/// Similarity threshold used by the pseudopair filters.
#[pyfunction]
fn percentile_threshold(values: Vec<f32>, p: f64) -> Option<f32> {
    percentile(&values, p)
}

/// A captioned image corpus loaded from a feature file and a captions file.
#[pyclass(name = "Corpus", frozen)]
struct PyCorpus {
    inner: CaptionedCorpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn load(features: PathBuf, captions: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_corpus(&features, &captions).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_owned()
    }

    #[getter]
    fn num_images(&self) -> usize {
        self.inner.num_images()
    }

    #[getter]
    fn num_captions(&self) -> usize {
        self.inner.captions().len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn languages(&self) -> Vec<String> {
        self.inner.languages()
    }

    /// Texts of the captions, optionally restricted to one language.
    #[pyo3(signature = (language = None))]
    fn texts(&self, language: Option<&str>) -> Vec<String> {
        self.inner
            .captions()
            .iter()
            .filter(|c| language.is_none_or(|l| c.language == l))
            .map(|c| c.text.clone())
            .collect()
    }

    /// Number of same-image caption pairs across two languages.
    fn c2c_pair_count(&self, left: &str, right: &str) -> usize {
        build_c2c_pairs(&self.inner, left, right).len()
    }

    fn __len__(&self) -> usize {
        self.inner.num_images()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(name={:?}, images={}, captions={})",
            self.inner.name(),
            self.inner.num_images(),
            self.inner.captions().len()
        )
    }
}

/// Trained sentence and image encoders with their vocabulary.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: CoreModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.config().hidden_dim
    }

    #[getter]
    fn image_dim(&self) -> usize {
        self.inner.config().image_dim
    }

    /// Unit-norm sentence embeddings, one list per text.
    fn encode_texts(&self, texts: Vec<String>) -> PyResult<Vec<Vec<f32>>> {
        Ok(rows(&self.inner.encode_texts(&texts).map_err(err)?.vectors))
    }

    /// Unit-norm image embeddings from feature rows.
    fn encode_images(&self, features: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
        Ok(rows(
            &self.inner.encode_images(&matrix(features)?).map_err(err)?.vectors,
        ))
    }

    /// Retrieval report for a corpus as a dict.
    #[pyo3(signature = (corpus, languages = Vec::new()))]
    fn evaluate(&self, py: Python<'_>, corpus: &PyCorpus, languages: Vec<String>) -> PyResult<Py<PyAny>> {
        let r: RetrievalReport = eval::evaluate(&self.inner, &corpus.inner, &languages).map_err(err)?;
        to_py(py, &r)
    }

    /// R@1 of the gold translation in both directions.
    fn translation_retrieval(&self, left: Vec<String>, right: Vec<String>) -> PyResult<(f64, f64)> {
        let t = eval::translation_retrieval(&self.inner, &left, &right).map_err(err)?;
        Ok((t.left_to_right_r1, t.right_to_left_r1))
    }
}

/// Writes synthetic corpora and a starter experiment config to `out`.
#[pyfunction]
#[pyo3(signature = (out, seed = 1, concepts = 50, images = 500))]
fn synth(py: Python<'_>, out: PathBuf, seed: u64, concepts: usize, images: usize) -> PyResult<Py<PyAny>> {
    let spec = grounded_rank::data::SynthSpec {
        seed,
        concepts,
        images,
        ..Default::default()
    };
    let m = experiment::cmd_synth(&spec, &out).map_err(err)?;
    to_py(py, &m)
}

/// Runs the `train` stage for a config file; returns the summary as a dict.
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn train(py: Python<'_>, config: PathBuf, out: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let cfg = ExperimentConfig::load(&config).map_err(err)?;
    let out = out.unwrap_or_else(|| cfg.output_dir.clone());
    let summary = py.detach(|| experiment::cmd_train(&cfg, &out)).map_err(err)?;
    to_py(py, &summary)
}

#[pymodule]
#[pyo3(name = "grounded_rank")]
pub fn grounded_rank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(max_violation, m)?)?;
    m.add_function(wrap_pyfunction!(sum_violation, m)?)?;
    m.add_function(wrap_pyfunction!(reference_loss, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(median_rank, m)?)?;
    m.add_function(wrap_pyfunction!(rank_image_to_text, m)?)?;
    m.add_function(wrap_pyfunction!(rank_text_to_image, m)?)?;
    m.add_function(wrap_pyfunction!(percentile_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
