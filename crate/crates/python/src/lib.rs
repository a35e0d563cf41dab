//! Python bindings: models, checkpoints, metrics, splits, synthetic data and
//! training, with errors raised as `ValueError` / `OSError`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use zsl::config::RunConfig;
use zsl::data::{
    self, import_embeddings, load_manifest, make_split, synth_generate, Partition, SpeciesCatalog,
    SplitManifest, SplitParams, SynthConfig,
};
use zsl::loss::{self, LossConfig, PairLabel};
use zsl::metrics::{self, ConfusionMatrix, MetricsReport};
use zsl::network::{self, BackboneMode, ModelConfig, ModelParameters, EMBEDDING_DIM};
use zsl::tensor::Tensor;
use zsl::trainer;

fn py_err(e: zsl::Error) -> PyErr {
    match e {
        zsl::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(format!("{}: {other}", other.kind())),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for zsl::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn label(similar: bool) -> PairLabel {
    if similar {
        PairLabel::Similar
    } else {
        PairLabel::Dissimilar
    }
}

/// Siamese embedding network (shared weights for both twins).
#[pyclass(name = "Model", module = "siamese_zsl", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ModelParameters<f32>,
}

#[pymethods]
impl PyModel {
    /// Fresh model. `backbone` is "builtin" (needs `input_size`) or
    /// "precomputed" (needs `feature_dim`).
    #[new]
    #[pyo3(signature = (backbone = "builtin", input_size = 64, feature_dim = None, normalize = true, dropout = 0.5, seed = 0))]
    fn new(
        backbone: &str,
        input_size: usize,
        feature_dim: Option<usize>,
        normalize: bool,
        dropout: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let backbone = match (backbone, feature_dim) {
            ("builtin", None) => BackboneMode::builtin(input_size),
            ("precomputed", Some(d)) => BackboneMode::Precomputed { feature_dim: d },
            ("builtin", Some(_)) => {
                return Err(PyValueError::new_err(
                    "feature_dim only applies to the precomputed backbone",
                ))
            }
            ("precomputed", None) => {
                return Err(PyValueError::new_err(
                    "the precomputed backbone needs feature_dim",
                ))
            }
            (other, _) => return Err(PyValueError::new_err(format!("unknown backbone `{other}`"))),
        };
        let cfg = ModelConfig {
            backbone,
            normalize,
            dropout,
        };
        Ok(Self {
            inner: ModelParameters::init(cfg, seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: network::load_checkpoint(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        network::save_checkpoint(&self.inner, path).py()
    }

    /// Checkpoint bytes.
    fn to_bytes(&self) -> Vec<u8> {
        network::encode_checkpoint(&self.inner)
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: network::decode_checkpoint(&data).py()?,
        })
    }

    /// Per-sample input shape, e.g. `[64, 64, 3]` or `[2048]`.
    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.config.backbone.sample_shape()
    }

    #[getter]
    fn normalize(&self) -> bool {
        self.inner.config.normalize
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Inference-mode embeddings for a batch given as a flat row-major list
    /// of `n * prod(input_shape)` floats.
    fn embed(&self, values: Vec<f32>, n: usize) -> PyResult<Vec<Vec<f32>>> {
        let mut shape = vec![n];
        shape.extend(self.input_shape());
        let input = Tensor::new(shape, values).py()?;
        Ok(self
            .inner
            .embed(&input)
            .py()?
            .into_iter()
            .map(|e| e.values().to_vec())
            .collect())
    }

    /// Similarity score of two inputs (each flat, one sample).
    fn score(&self, a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
        let mut both = a;
        both.extend(b);
        let e = self.embed(both, 2)?;
        let d = network::energy_slices(&e[0], &e[1]).py()?;
        network::similarity_score(d, self.inner.config.normalize).py()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(backbone={}, input_shape={:?}, normalize={}, parameters={})",
            self.inner.config.backbone.name(),
            self.input_shape(),
            self.inner.config.normalize,
            self.inner.num_parameters()
        )
    }
}

/// Verification outcomes: similar is the positive class.
#[pyclass(
    name = "ConfusionMatrix",
    module = "siamese_zsl",
    eq,
    skip_from_py_object
)]
#[derive(Clone, PartialEq)]
struct PyConfusion {
    inner: ConfusionMatrix,
}

#[pymethods]
impl PyConfusion {
    #[new]
    fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self {
            inner: ConfusionMatrix::new(tp, fn_, fp, tn),
        }
    }

    /// Counts from labels (`True` = similar) and scores at `threshold`.
    #[staticmethod]
    fn from_scores(similar: Vec<bool>, scores: Vec<f64>, threshold: f64) -> PyResult<Self> {
        let labels: Vec<PairLabel> = similar.into_iter().map(label).collect();
        Ok(Self {
            inner: metrics::confusion(&labels, &scores, threshold).py()?,
        })
    }

    #[getter]
    fn tp(&self) -> u64 {
        self.inner.true_pos
    }

    #[getter]
    fn fn_(&self) -> u64 {
        self.inner.false_neg
    }

    #[getter]
    fn fp(&self) -> u64 {
        self.inner.false_pos
    }

    #[getter]
    fn tn(&self) -> u64 {
        self.inner.true_neg
    }

    fn metrics(&self) -> PyResult<PyReport> {
        Ok(PyReport {
            inner: metrics::metrics_from_confusion(&self.inner).py()?,
        })
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "ConfusionMatrix(tp={}, fn={}, fp={}, tn={})",
            c.true_pos, c.false_neg, c.false_pos, c.true_neg
        )
    }
}

/// Macro-averaged precision, recall, F1 and accuracy at one threshold.
#[pyclass(
    name = "MetricsReport",
    module = "siamese_zsl",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyReport {
    inner: MetricsReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    #[getter]
    fn precision(&self) -> f64 {
        self.inner.precision
    }

    #[getter]
    fn recall(&self) -> f64 {
        self.inner.recall
    }

    #[getter]
    fn f1(&self) -> f64 {
        self.inner.f1
    }

    #[getter]
    fn accuracy(&self) -> f64 {
        self.inner.accuracy
    }

    #[getter]
    fn confusion(&self) -> PyConfusion {
        PyConfusion {
            inner: self.inner.confusion,
        }
    }

    fn __repr__(&self) -> String {
        metrics::report_row(&self.inner)
    }
}

/// Contrastive loss of one pair distance.
#[pyfunction]
#[pyo3(signature = (d, similar, margin = 1.0))]
fn contrastive_loss(d: f64, similar: bool, margin: f64) -> PyResult<f64> {
    let cfg = LossConfig {
        margin,
        ..LossConfig::default()
    };
    loss::contrastive_loss(d, label(similar), &cfg).py()
}

/// Euclidean distance between two embeddings.
#[pyfunction]
fn energy(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    network::energy_slices(&a, &b).py()
}

#[pyfunction]
#[pyo3(signature = (d, normalized = true))]
fn similarity_score(d: f64, normalized: bool) -> PyResult<f64> {
    network::similarity_score(d, normalized).py()
}

/// One report per threshold, ascending.
#[pyfunction]
fn threshold_sweep(
    similar: Vec<bool>,
    scores: Vec<f64>,
    grid: Vec<f64>,
) -> PyResult<Vec<PyReport>> {
    let labels: Vec<PairLabel> = similar.into_iter().map(label).collect();
    Ok(metrics::threshold_sweep(&labels, &scores, &grid)
        .py()?
        .into_iter()
        .map(|inner| PyReport { inner })
        .collect())
}

#[pyfunction]
fn parse_grid(spec: &str) -> PyResult<Vec<f64>> {
    metrics::parse_grid(spec).py()
}

/// Split a catalog given as `{species: count}`. Returns the census as a
/// dict and the rows as `(id, species, partition)` tuples.
#[pyfunction]
#[pyo3(signature = (counts, min_count = 1000, test_frac = 0.2, val_frac = 0.2, seed = 0, unseen = None))]
fn split_counts(
    counts: BTreeMap<String, usize>,
    min_count: usize,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
    unseen: Option<Vec<String>>,
) -> PyResult<(BTreeMap<String, usize>, Vec<(String, String, String)>)> {
    let pairs: Vec<(String, usize)> = counts.into_iter().collect();
    let catalog = SpeciesCatalog::from_counts(&pairs).py()?;
    let params = SplitParams {
        min_count,
        test_frac,
        val_frac,
        seed,
        unseen_species: unseen
            .unwrap_or_default()
            .into_iter()
            .collect::<BTreeSet<_>>(),
    };
    let split = make_split(&catalog, &params).py()?;
    Ok((census(&split), rows(&split)))
}

/// Split an image manifest and write the split file; returns the census.
#[pyfunction]
#[pyo3(signature = (manifest, out, min_count = 1000, test_frac = 0.2, val_frac = 0.2, seed = 0, unseen = None))]
fn split_manifest(
    manifest: PathBuf,
    out: PathBuf,
    min_count: usize,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
    unseen: Option<Vec<String>>,
) -> PyResult<BTreeMap<String, usize>> {
    let catalog = data::catalog_of(&data::read_manifest(manifest).py()?).py()?;
    let params = SplitParams {
        min_count,
        test_frac,
        val_frac,
        seed,
        unseen_species: unseen.unwrap_or_default().into_iter().collect(),
    };
    let split = make_split(&catalog, &params).py()?;
    split.save(out).py()?;
    Ok(census(&split))
}

fn census(split: &SplitManifest) -> BTreeMap<String, usize> {
    let c = split.census();
    BTreeMap::from([
        ("seen_species".to_string(), c.seen_species),
        ("unseen_species".to_string(), c.unseen_species),
        ("train".to_string(), c.train),
        ("validation".to_string(), c.validation),
        ("test".to_string(), c.test),
        ("unseen_samples".to_string(), c.unseen_samples),
    ])
}

fn rows(split: &SplitManifest) -> Vec<(String, String, String)> {
    split
        .rows
        .iter()
        .map(|(id, s, p)| (id.clone(), s.clone(), p.to_string()))
        .collect()
}

/// Write a synthetic image corpus; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, seen = 12, unseen = 6, samples = 200, resolution = 64, seed = 0))]
fn synth(
    out_dir: PathBuf,
    seen: usize,
    unseen: usize,
    samples: usize,
    resolution: usize,
    seed: u64,
) -> PyResult<PathBuf> {
    let cfg = SynthConfig {
        n_seen_species: seen,
        n_unseen_species: unseen,
        samples_per_species: samples,
        resolution,
        seed,
        ..SynthConfig::default()
    };
    Ok(synth_generate(&cfg, &out_dir).py()?.manifest)
}

/// Train on a split, reading either an image manifest or an embedding file.
/// `config` holds `key = value` settings as strings, as in a config file.
/// Returns the best model and the per-epoch log rows.
#[pyfunction]
#[pyo3(signature = (split, manifest = None, features = None, config = None))]
fn train(
    py: Python<'_>,
    split: PathBuf,
    manifest: Option<PathBuf>,
    features: Option<PathBuf>,
    config: Option<BTreeMap<String, String>>,
) -> PyResult<(PyModel, Vec<(usize, f64, f64, f64, usize)>)> {
    let mut run = RunConfig::default();
    for (k, v) in config.unwrap_or_default() {
        run.set(&k, &v).py()?;
    }
    let split = SplitManifest::load(split).py()?;
    let outcome = py.detach(|| -> zsl::Result<trainer::TrainOutcome> {
        match (manifest, features) {
            (Some(m), None) => {
                let ds = load_manifest(m)?;
                trainer::train(&ds, &split, &run.resolve(None)?)
            }
            (None, Some(f)) => {
                let store = import_embeddings(f)?;
                trainer::train(&store, &split, &run.resolve(Some(store.dim()))?)
            }
            _ => Err(zsl::Error::InvalidArgument(
                "pass exactly one of manifest= or features=".into(),
            )),
        }
    });
    let outcome = outcome.py()?;
    let log = outcome
        .log
        .epochs
        .iter()
        .map(|r| (r.epoch, r.train_loss, r.val_loss, r.val_f1, r.stale_epochs))
        .collect();
    Ok((
        PyModel {
            inner: outcome.params,
        },
        log,
    ))
}

/// Balanced test pairs of one scope ("seen", "unseen" or "all") as
/// `(id_a, id_b, similar)` tuples.
#[pyfunction]
#[pyo3(signature = (split, scope = "all", n = 2000, pos_ratio = 0.5, seed = 0))]
fn test_pairs(
    split: PathBuf,
    scope: &str,
    n: usize,
    pos_ratio: f64,
    seed: u64,
) -> PyResult<Vec<(String, String, bool)>> {
    let split = SplitManifest::load(split).py()?;
    let scope = scope.parse::<data::Scope>().py()?;
    let pairs = data::sample_pairs(&split, Partition::Test, scope, n, pos_ratio, seed).py()?;
    Ok(pairs
        .into_iter()
        .map(|p| (p.id_a, p.id_b, p.label == PairLabel::Similar))
        .collect())
}

#[pymodule]
fn siamese_zsl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EMBEDDING_DIM", EMBEDDING_DIM)?;
    m.add("DEFAULT_THRESHOLD", trainer::DEFAULT_THRESHOLD)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyConfusion>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_score, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(parse_grid, m)?)?;
    m.add_function(wrap_pyfunction!(split_counts, m)?)?;
    m.add_function(wrap_pyfunction!(split_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(test_pairs, m)?)?;
    Ok(())
}
