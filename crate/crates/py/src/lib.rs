use std::collections::HashMap;
use std::path::PathBuf;

use lexiport_core::align;
use lexiport_core::corpus_io::{CorpusStream, NormalizationConfig};
use lexiport_core::embed_io::{self, EmbeddingMatrix};
use lexiport_core::error::Error;
use lexiport_core::fixture::{generate, FixtureConfig};
use lexiport_core::pipeline::{self, Override};
use lexiport_core::synth::VocabEmbeddingTable;
use lexiport_core::transplant;
use lexiport_core::vocab;
use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Dimension { .. } | Error::Capacity { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: &[Vec<f32>]) -> PyResult<EmbeddingMatrix> {
    let dim = rows.first().map_or(0, Vec::len);
    EmbeddingMatrix::from_rows(dim, rows).map_err(err)
}

fn dmatrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn indexed_table(rows: &[Vec<f32>], prefix: &str) -> PyResult<VocabEmbeddingTable> {
    let tokens = (0..rows.len()).map(|i| format!("{prefix}{i}")).collect();
    VocabEmbeddingTable::from_rows(tokens, matrix(rows)?).map_err(err)
}

/// WordPiece vocabulary with `##` continuation pieces.
#[pyclass(frozen, module = "lexiport")]
struct Vocabulary {
    inner: vocab::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    /// Builds a vocabulary from `tokens`, prepending the special tokens
    /// unless `with_specials` is false.
    #[new]
    #[pyo3(signature = (tokens, with_specials = true))]
    fn new(tokens: Vec<String>, with_specials: bool) -> PyResult<Self> {
        let inner = if with_specials {
            vocab::Vocabulary::with_specials(tokens)
        } else {
            vocab::Vocabulary::from_tokens(tokens, vocab::DEFAULT_CONTINUATION_PREFIX)
        };
        Ok(Vocabulary { inner: inner.map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Vocabulary {
            inner: vocab::Vocabulary::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn tokenize(&self, word: &str) -> Vec<String> {
        self.inner.tokenize(word)
    }

    fn id_of(&self, token: &str) -> Option<usize> {
        self.inner.id_of(token)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, token: &str) -> bool {
        self.inner.contains(token)
    }

    fn __repr__(&self) -> String {
        format!("Vocabulary({} tokens)", self.inner.len())
    }
}

/// Induces a WordPiece vocabulary from a corpus file or directory.
#[pyfunction]
#[pyo3(signature = (corpus, vocab_size, min_frequency = pipeline::DEFAULT_MIN_FREQUENCY, lowercase = false))]
fn induce_vocab(corpus: PathBuf, vocab_size: usize, min_frequency: u64, lowercase: bool) -> PyResult<Vocabulary> {
    let config = NormalizationConfig {
        lowercase,
        ..NormalizationConfig::default()
    };
    let mut stream = CorpusStream::open(corpus, config).map_err(err)?;
    let inner = vocab::induce_wordpiece_vocab(&mut stream, vocab_size, min_frequency).map_err(err)?;
    Ok(Vocabulary { inner })
}

#[pyfunction]
#[pyo3(signature = (counts, vocab_size, min_frequency = pipeline::DEFAULT_MIN_FREQUENCY))]
fn induce_from_counts(counts: HashMap<String, u64>, vocab_size: usize, min_frequency: u64) -> PyResult<Vocabulary> {
    let inner = vocab::induce_from_counts(&counts, vocab_size, min_frequency).map_err(err)?;
    Ok(Vocabulary { inner })
}

/// Returns `(merged, overlap, appended)`.
#[pyfunction]
fn merge_vocab(base: &Vocabulary, new: &Vocabulary) -> (Vocabulary, Vec<String>, Vec<String>) {
    let m = vocab::merge_vocab(&base.inner, &new.inner);
    (Vocabulary { inner: m.merged }, m.overlap, m.appended)
}

/// Orthogonal `W` minimizing `||xW - y||_F`.
#[pyfunction]
fn procrustes(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let w = align::procrustes(&dmatrix(&x)?, &dmatrix(&y)?).map_err(err)?;
    Ok(w.row_iter().map(|r| r.iter().copied().collect()).collect())
}

#[pyfunction]
fn softmax_weights(similarities: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    transplant::softmax_weights(&similarities, tau).map_err(err)
}

#[pyfunction]
fn weighted_init(similarities: Vec<f64>, rows: Vec<Vec<f32>>, tau: f64) -> PyResult<Vec<f32>> {
    if similarities.len() != rows.len() {
        return Err(PyValueError::new_err("one similarity per row is required"));
    }
    let pairs: Vec<(f64, &[f32])> = similarities.into_iter().zip(rows.iter().map(Vec::as_slice)).collect();
    transplant::weighted_init(&pairs, tau).map_err(err)
}

type NeighborLists = Vec<Option<Vec<(usize, f64)>>>;

/// For each target row, `[(source_index, cosine), ...]` best first, or
/// `None` when the row is all zeros.
#[pyfunction]
fn top_k(source: Vec<Vec<f32>>, target: Vec<Vec<f32>>, k: usize) -> PyResult<NeighborLists> {
    let view = transplant::top_k_similar(&indexed_table(&source, "s")?, &indexed_table(&target, "t")?, k)
        .map_err(err)?;
    Ok(view
        .lists
        .into_iter()
        .map(|l| l.map(|ns| ns.into_iter().map(|n| (n.source, n.similarity)).collect()))
        .collect())
}

#[pyfunction]
fn load_matrix(path: PathBuf) -> PyResult<Vec<Vec<f32>>> {
    let m = embed_io::load_matrix(path).map_err(err)?;
    Ok(m.iter_rows().map(<[f32]>::to_vec).collect())
}

#[pyfunction]
fn save_matrix(rows: Vec<Vec<f32>>, path: PathBuf) -> PyResult<()> {
    embed_io::save_matrix(&matrix(&rows)?, path).map_err(err)
}

/// Provenance records as a list of dicts.
#[pyfunction]
fn load_provenance(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let records = transplant::load_provenance(path).map_err(err)?;
    json(py, &records)
}

fn to_override(key: String, value: &Bound<'_, PyAny>) -> PyResult<Override> {
    if value.is_instance_of::<PyBool>() {
        Ok(Override::new(key, value.extract::<bool>()?))
    } else if value.is_instance_of::<PyInt>() {
        Ok(Override::new(key, value.extract::<i64>()?))
    } else if value.is_instance_of::<PyFloat>() {
        Ok(Override::new(key, value.extract::<f64>()?))
    } else if value.is_instance_of::<PyString>() {
        Ok(Override::new(key, value.extract::<String>()?))
    } else {
        Err(PyValueError::new_err(format!("unsupported value for {key}")))
    }
}

/// Pipeline configuration: a TOML file plus dotted-key overrides.
#[pyclass(frozen, module = "lexiport")]
struct PipelineConfig {
    inner: pipeline::PipelineConfig,
}

#[pymethods]
impl PipelineConfig {
    #[new]
    #[pyo3(signature = (path = None, overrides = None))]
    fn new(path: Option<PathBuf>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut list = Vec::new();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                list.push(to_override(k.extract()?, &v)?);
            }
        }
        let inner = pipeline::parse_config(path.as_deref(), &list).map_err(err)?;
        Ok(PipelineConfig { inner })
    }

    /// The resolved configuration as a dict.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json(py, &self.inner)
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir().to_path_buf()
    }

    /// Runs the pipeline; returns `(executed, cached)` stage names.
    #[pyo3(signature = (force = false))]
    fn run(&self, py: Python<'_>, force: bool) -> PyResult<(Vec<String>, Vec<String>)> {
        let report = py.detach(|| pipeline::run_pipeline(&self.inner, force)).map_err(err)?;
        Ok((report.executed, report.skipped))
    }
}

/// Writes a synthetic cipher fixture with a ready `pipeline.toml` and
/// returns a dict of its paths.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 7, words = 200, tokens = 200_000, lexicon_pairs = 50, base_dim = 64))]
fn make_fixture(
    out_dir: PathBuf,
    seed: u64,
    words: usize,
    tokens: usize,
    lexicon_pairs: usize,
    base_dim: usize,
) -> PyResult<HashMap<&'static str, PathBuf>> {
    let config = FixtureConfig {
        seed,
        words,
        source_tokens: tokens,
        target_tokens: tokens,
        lexicon_pairs,
        heldout_pairs: lexicon_pairs.min(words.saturating_sub(lexicon_pairs)),
        base_dim,
        ..FixtureConfig::default()
    };
    let p = generate(&config).and_then(|f| f.write(&out_dir)).map_err(err)?;
    Ok(HashMap::from([
        ("source_corpus", p.source_corpus),
        ("target_corpus", p.target_corpus),
        ("base_vocab", p.base_vocab),
        ("base_matrix", p.base_matrix),
        ("mono_vocab", p.mono_vocab),
        ("lexicon", p.lexicon),
        ("heldout", p.heldout),
        ("config", p.config),
    ]))
}

#[pymodule]
fn lexiport(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Vocabulary>()?;
    m.add_class::<PipelineConfig>()?;
    m.add_function(wrap_pyfunction!(induce_vocab, m)?)?;
    m.add_function(wrap_pyfunction!(induce_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(merge_vocab, m)?)?;
    m.add_function(wrap_pyfunction!(procrustes, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_weights, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_init, m)?)?;
    m.add_function(wrap_pyfunction!(top_k, m)?)?;
    m.add_function(wrap_pyfunction!(load_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(save_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(load_provenance, m)?)?;
    m.add_function(wrap_pyfunction!(make_fixture, m)?)?;
    Ok(())
}
