//! Python bindings. Mirrors the core crate's workflow: build a dataset,
//! pretrain a backbone, train adapters, attack, calibrate, mix, predict.
//! Configuration errors surface as `ValueError`, everything else as
//! `RuntimeError`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use adpmixup::attack;
use adpmixup::baselines;
use adpmixup::checkpoint;
use adpmixup::data;
use adpmixup::harness;
use adpmixup::mixing;
use adpmixup::model;
use adpmixup::synth;
use adpmixup::train;

fn to_py(err: adpmixup::Error) -> PyErr {
    if err.is_config() {
        PyValueError::new_err(err.to_string())
    } else {
        PyRuntimeError::new_err(err.to_string())
    }
}

#[pyclass(name = "ModelDims", module = "adpmixup_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModelDims {
    inner: model::ModelDims,
}

#[pymethods]
impl PyModelDims {
    #[new]
    #[pyo3(signature = (vocab=4096, hidden=32, bottleneck=8, classes=2))]
    fn new(vocab: usize, hidden: usize, bottleneck: usize, classes: usize) -> PyResult<Self> {
        let inner = model::ModelDims {
            vocab,
            hidden,
            bottleneck,
            classes,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyModelDims { inner })
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.inner.vocab
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.hidden
    }

    #[getter]
    fn bottleneck(&self) -> usize {
        self.inner.bottleneck
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelDims(vocab={}, hidden={}, bottleneck={}, classes={})",
            self.inner.vocab, self.inner.hidden, self.inner.bottleneck, self.inner.classes
        )
    }
}

#[pyclass(name = "TrainConfig", module = "adpmixup_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: train::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (learning_rate=0.1, epochs=150, batch_size=16, seed=0, alpha=0.5))]
    fn new(
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
        alpha: f64,
    ) -> PyResult<Self> {
        let inner = train::TrainConfig {
            learning_rate,
            epochs,
            batch_size,
            seed,
            alpha,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyTrainConfig { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig(learning_rate={}, epochs={}, batch_size={}, seed={}, alpha={})",
            self.inner.learning_rate,
            self.inner.epochs,
            self.inner.batch_size,
            self.inner.seed,
            self.inner.alpha
        )
    }
}

#[pyclass(name = "Dataset", module = "adpmixup_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: data::LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(name: String, items: Vec<(String, usize)>) -> Self {
        let items = items
            .into_iter()
            .map(|(text, label)| data::LabeledExample { text, label })
            .collect();
        PyDataset {
            inner: data::LabeledDataset::new(name, items),
        }
    }

    /// Deterministic synthetic sentiment corpus.
    #[staticmethod]
    #[pyo3(signature = (n, seed, name="toy", with_anchors=false))]
    fn toy(n: usize, seed: u64, name: &str, with_anchors: bool) -> Self {
        PyDataset {
            inner: synth::toy_corpus(n, seed, name, with_anchors),
        }
    }

    #[staticmethod]
    fn load_jsonl(path: PathBuf, classes: usize) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::read_jsonl(&path, classes).map_err(to_py)?,
        })
    }

    fn save_jsonl(&self, path: PathBuf) -> PyResult<()> {
        data::write_jsonl(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn items(&self) -> Vec<(String, usize)> {
        self.inner
            .items
            .iter()
            .map(|it| (it.text.clone(), it.label))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset('{}', {} items)", self.inner.name, self.inner.len())
    }
}

#[pyclass(name = "Backbone", module = "adpmixup_py")]
struct PyBackbone {
    inner: model::BackboneParams,
}

#[pymethods]
impl PyBackbone {
    #[staticmethod]
    fn pretrain(
        dims: PyRef<'_, PyModelDims>,
        dataset: PyRef<'_, PyDataset>,
        cfg: PyRef<'_, PyTrainConfig>,
    ) -> PyResult<Self> {
        Ok(PyBackbone {
            inner: train::pretrain_backbone(&dims.inner, &dataset.inner, &cfg.inner)
                .map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyBackbone {
            inner: checkpoint::load_backbone(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_backbone(&path, &self.inner).map_err(to_py)
    }

    /// Class probabilities for a text, optionally through an adapter.
    #[pyo3(signature = (text, adapter=None))]
    fn predict(&self, text: &str, adapter: Option<PyRef<'_, PyAdapter>>) -> PyResult<Vec<f64>> {
        let tokens = model::tokenize(text, self.inner.vocab(), model::DEFAULT_MAX_LEN);
        let dist = model::forward(&self.inner, adapter.as_ref().map(|a| &a.inner), &tokens)
            .map_err(to_py)?;
        Ok(dist.probs().to_vec())
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.inner.vocab()
    }
}

#[pyclass(name = "Adapter", module = "adpmixup_py", skip_from_py_object)]
#[derive(Clone)]
struct PyAdapter {
    inner: model::AdapterDelta,
}

#[pymethods]
impl PyAdapter {
    /// Train against a frozen backbone on one dataset.
    #[staticmethod]
    fn train(
        backbone: PyRef<'_, PyBackbone>,
        dims: PyRef<'_, PyModelDims>,
        dataset: PyRef<'_, PyDataset>,
        cfg: PyRef<'_, PyTrainConfig>,
        tag: &str,
    ) -> PyResult<Self> {
        Ok(PyAdapter {
            inner: train::train_adapter(&backbone.inner, &dims.inner, &dataset.inner, &cfg.inner, tag)
                .map_err(to_py)?,
        })
    }

    /// Continue training from an existing adapter (adversarial fine-tuning
    /// starts from the clean solution).
    #[staticmethod]
    fn train_warm(
        backbone: PyRef<'_, PyBackbone>,
        dims: PyRef<'_, PyModelDims>,
        init: PyRef<'_, PyAdapter>,
        dataset: PyRef<'_, PyDataset>,
        cfg: PyRef<'_, PyTrainConfig>,
        tag: &str,
    ) -> PyResult<Self> {
        Ok(PyAdapter {
            inner: train::train_adapter_warm(
                &backbone.inner,
                &dims.inner,
                &init.inner,
                &dataset.inner,
                &cfg.inner,
                tag,
            )
            .map_err(to_py)?,
        })
    }

    /// Train on the α-weighted joint clean/adversarial objective.
    #[staticmethod]
    fn train_augmented(
        backbone: PyRef<'_, PyBackbone>,
        dims: PyRef<'_, PyModelDims>,
        clean: PyRef<'_, PyDataset>,
        adv: PyRef<'_, PyDataset>,
        cfg: PyRef<'_, PyTrainConfig>,
        tag: &str,
    ) -> PyResult<Self> {
        Ok(PyAdapter {
            inner: train::train_augmented(
                &backbone.inner,
                &dims.inner,
                &clean.inner,
                &adv.inner,
                &cfg.inner,
                tag,
            )
            .map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyAdapter {
            inner: checkpoint::load_adapter(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_adapter(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn tag(&self) -> &str {
        &self.inner.tag
    }

    fn __repr__(&self) -> String {
        format!("Adapter('{}')", self.inner.tag)
    }
}

#[pyclass(name = "Calibration", module = "adpmixup_py", skip_from_py_object)]
#[derive(Clone)]
struct PyCalibration {
    inner: mixing::EntropyCalibration,
}

#[pymethods]
impl PyCalibration {
    /// Record entropy extrema of one adapter over (a head of) its own
    /// training data. `mode` is "clean" or "adv".
    #[staticmethod]
    fn calibrate(
        backbone: PyRef<'_, PyBackbone>,
        adapter: PyRef<'_, PyAdapter>,
        dataset: PyRef<'_, PyDataset>,
        mode: &str,
    ) -> PyResult<Self> {
        let mode = match mode {
            "clean" => mixing::CalibMode::Clean,
            "adv" => mixing::CalibMode::Adv,
            other => {
                return Err(PyValueError::new_err(format!(
                    "mode must be 'clean' or 'adv', got '{other}'"
                )))
            }
        };
        Ok(PyCalibration {
            inner: mixing::calibrate(&backbone.inner, &adapter.inner, &dataset.inner, mode)
                .map_err(to_py)?,
        })
    }

    fn alpha_clean(&self, h: f64) -> PyResult<f64> {
        if self.inner.mode != mixing::CalibMode::Clean {
            return Err(PyValueError::new_err(
                "alpha_clean needs a clean-mode calibration",
            ));
        }
        Ok(mixing::alpha_clean(&self.inner, h))
    }

    fn alpha_adv(&self, h: f64) -> PyResult<f64> {
        if self.inner.mode != mixing::CalibMode::Adv {
            return Err(PyValueError::new_err(
                "alpha_adv needs an adv-mode calibration",
            ));
        }
        Ok(mixing::alpha_adv(&self.inner, h))
    }

    #[getter]
    fn min_h(&self) -> f64 {
        self.inner.min_h
    }

    #[getter]
    fn max_h(&self) -> f64 {
        self.inner.max_h
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            mixing::CalibMode::Clean => "clean",
            mixing::CalibMode::Adv => "adv",
        }
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples
    }

    fn __repr__(&self) -> String {
        format!(
            "Calibration(mode='{}', min_h={:.6}, max_h={:.6}, n_samples={})",
            self.mode(),
            self.inner.min_h,
            self.inner.max_h,
            self.inner.n_samples
        )
    }
}

/// Per-sample mixing diagnostics from `Mixer.predict`.
#[pyclass(name = "MixInfo", module = "adpmixup_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMixInfo {
    #[pyo3(get)]
    alpha_clean: f64,
    #[pyo3(get)]
    alpha_adv: Vec<f64>,
    #[pyo3(get)]
    beta: Vec<f64>,
    #[pyo3(get)]
    early_exit: bool,
    #[pyo3(get)]
    flagged_adversarial: bool,
}

/// Owned bundle of everything per-sample mixing needs.
#[pyclass(name = "Mixer", module = "adpmixup_py")]
struct PyMixer {
    backbone: model::BackboneParams,
    clean: model::AdapterDelta,
    advs: Vec<model::AdapterDelta>,
    calib_clean: mixing::EntropyCalibration,
    calibs_adv: Vec<mixing::EntropyCalibration>,
    threshold: Option<f64>,
}

#[pymethods]
impl PyMixer {
    #[new]
    #[pyo3(signature = (backbone, clean, advs, calib_clean, calibs_adv, threshold=None))]
    fn new(
        py: Python<'_>,
        backbone: PyRef<'_, PyBackbone>,
        clean: PyRef<'_, PyAdapter>,
        advs: Vec<Py<PyAdapter>>,
        calib_clean: PyRef<'_, PyCalibration>,
        calibs_adv: Vec<Py<PyCalibration>>,
        threshold: Option<f64>,
    ) -> PyResult<Self> {
        if advs.is_empty() {
            return Err(PyValueError::new_err("need at least one adversarial adapter"));
        }
        if advs.len() != calibs_adv.len() {
            return Err(PyValueError::new_err(format!(
                "{} adversarial adapters but {} calibrations",
                advs.len(),
                calibs_adv.len()
            )));
        }
        Ok(PyMixer {
            backbone: backbone.inner.clone(),
            clean: clean.inner.clone(),
            advs: advs.iter().map(|a| a.borrow(py).inner.clone()).collect(),
            calib_clean: calib_clean.inner,
            calibs_adv: calibs_adv.iter().map(|c| c.borrow(py).inner).collect(),
            threshold,
        })
    }

    /// `(probs, MixInfo)` for one text.
    fn predict(&self, text: &str) -> PyResult<(Vec<f64>, PyMixInfo)> {
        let predictor = baselines::AdpMixupPredictor::new(
            &self.backbone,
            &self.clean,
            &self.advs,
            &self.calib_clean,
            &self.calibs_adv,
            self.threshold,
        );
        let (probs, diag) = predictor.predict_with_diagnostics(text).map_err(to_py)?;
        Ok((
            probs.probs().to_vec(),
            PyMixInfo {
                alpha_clean: diag.alpha_clean,
                alpha_adv: diag.alpha_adv,
                beta: diag.beta,
                early_exit: diag.early_exit,
                flagged_adversarial: diag.flagged_adversarial,
            },
        ))
    }
}

/// Outcome of one black-box attack.
#[pyclass(name = "AttackOutcome", module = "adpmixup_py")]
struct PyAttackOutcome {
    #[pyo3(get)]
    original_text: String,
    #[pyo3(get)]
    original_label: usize,
    #[pyo3(get)]
    perturbed: String,
    #[pyo3(get)]
    success: bool,
    #[pyo3(get)]
    queries_used: usize,
}

fn build_spec(
    kind: &str,
    budget: f64,
    max_queries: usize,
    seed: u64,
    synonyms_path: Option<PathBuf>,
) -> PyResult<attack::AttackSpec> {
    let kind = attack::AttackKind::parse(kind).map_err(to_py)?;
    let mut spec = attack::AttackSpec::new(kind, seed);
    spec.budget = budget;
    spec.max_queries = max_queries;
    if kind.is_word_level() {
        spec.synonyms = Some(match synonyms_path {
            Some(path) => attack::SynonymTable::from_file(&path).map_err(to_py)?,
            None => synth::toy_synonym_table(),
        });
    }
    spec.validate().map_err(to_py)?;
    Ok(spec)
}

#[pyfunction]
#[pyo3(signature = (text, vocab=4096, max_len=64))]
fn tokenize(text: &str, vocab: usize, max_len: usize) -> Vec<u32> {
    model::tokenize(text, vocab, max_len).ids
}

#[pyfunction]
fn entropy(probs: Vec<f64>) -> f64 {
    mixing::entropy(&model::ProbDist::new(probs))
}

#[pyfunction]
fn mix_pair(
    clean: PyRef<'_, PyAdapter>,
    adv: PyRef<'_, PyAdapter>,
    beta: f64,
) -> PyResult<PyAdapter> {
    Ok(PyAdapter {
        inner: mixing::mix_pair(&clean.inner, &adv.inner, beta).map_err(to_py)?,
    })
}

#[pyfunction]
fn mix_multi(
    py: Python<'_>,
    clean: PyRef<'_, PyAdapter>,
    advs: Vec<Py<PyAdapter>>,
    betas: Vec<f64>,
) -> PyResult<PyAdapter> {
    let advs: Vec<model::AdapterDelta> =
        advs.iter().map(|a| a.borrow(py).inner.clone()).collect();
    Ok(PyAdapter {
        inner: mixing::mix_multi(&clean.inner, &advs, &betas).map_err(to_py)?,
    })
}

#[pyfunction]
fn adapter_soup(py: Python<'_>, adapters: Vec<Py<PyAdapter>>) -> PyResult<PyAdapter> {
    let owned: Vec<model::AdapterDelta> =
        adapters.iter().map(|a| a.borrow(py).inner.clone()).collect();
    Ok(PyAdapter {
        inner: baselines::adapter_soup(&owned).map_err(to_py)?,
    })
}

/// Attack one text against a backbone(+adapter) victim.
#[pyfunction]
#[pyo3(signature = (backbone, adapter, text, label, kind, budget=0.3, max_queries=500, seed=0, synonyms_path=None))]
#[allow(clippy::too_many_arguments)]
fn attack_text(
    backbone: PyRef<'_, PyBackbone>,
    adapter: Option<PyRef<'_, PyAdapter>>,
    text: &str,
    label: usize,
    kind: &str,
    budget: f64,
    max_queries: usize,
    seed: u64,
    synonyms_path: Option<PathBuf>,
) -> PyResult<PyAttackOutcome> {
    let spec = build_spec(kind, budget, max_queries, seed, synonyms_path)?;
    let victim = model::AdapterPredictor {
        backbone: &backbone.inner,
        adapter: adapter.as_ref().map(|a| &a.inner),
        max_len: model::DEFAULT_MAX_LEN,
    };
    let r = attack::attack(&victim, text, label, &spec).map_err(to_py)?;
    Ok(PyAttackOutcome {
        original_text: r.original_text,
        original_label: r.original_label,
        perturbed: r.perturbed,
        success: r.success,
        queries_used: r.queries_used,
    })
}

/// Attack every item of a dataset; keep the successful perturbations.
#[pyfunction]
#[pyo3(signature = (backbone, adapter, dataset, kind, budget=0.3, max_queries=500, seed=0, synonyms_path=None))]
#[allow(clippy::too_many_arguments)]
fn generate_adversarial(
    backbone: PyRef<'_, PyBackbone>,
    adapter: Option<PyRef<'_, PyAdapter>>,
    dataset: PyRef<'_, PyDataset>,
    kind: &str,
    budget: f64,
    max_queries: usize,
    seed: u64,
    synonyms_path: Option<PathBuf>,
) -> PyResult<PyDataset> {
    let spec = build_spec(kind, budget, max_queries, seed, synonyms_path)?;
    let victim = model::AdapterPredictor {
        backbone: &backbone.inner,
        adapter: adapter.as_ref().map(|a| &a.inner),
        max_len: model::DEFAULT_MAX_LEN,
    };
    Ok(PyDataset {
        inner: attack::generate_adversarial_dataset(&victim, &dataset.inner, &spec)
            .map_err(to_py)?,
    })
}

/// Attacked copy of a whole dataset (best-effort text for every item) for
/// adversarial training.
#[pyfunction]
#[pyo3(signature = (backbone, adapter, dataset, kind, budget=0.3, max_queries=500, seed=0, synonyms_path=None))]
#[allow(clippy::too_many_arguments)]
fn generate_adversarial_training_set(
    backbone: PyRef<'_, PyBackbone>,
    adapter: Option<PyRef<'_, PyAdapter>>,
    dataset: PyRef<'_, PyDataset>,
    kind: &str,
    budget: f64,
    max_queries: usize,
    seed: u64,
    synonyms_path: Option<PathBuf>,
) -> PyResult<PyDataset> {
    let spec = build_spec(kind, budget, max_queries, seed, synonyms_path)?;
    let victim = model::AdapterPredictor {
        backbone: &backbone.inner,
        adapter: adapter.as_ref().map(|a| &a.inner),
        max_len: model::DEFAULT_MAX_LEN,
    };
    Ok(PyDataset {
        inner: attack::generate_adversarial_training_set(&victim, &dataset.inner, &spec)
            .map_err(to_py)?,
    })
}

/// Full six-method pipeline from a TOML config string; returns the cross-seed
/// median table as `(method, clean_acc, adv_acc, avg_acc)` tuples. Artifacts
/// land under `out_dir`.
#[pyfunction]
fn run_pipeline(config_toml: &str, out_dir: PathBuf) -> PyResult<Vec<(String, f64, f64, f64)>> {
    let cfg = harness::ExperimentConfig::from_toml_str(config_toml).map_err(to_py)?;
    let summary = harness::run_pipeline(&cfg, &out_dir).map_err(to_py)?;
    Ok(summary
        .median
        .iter()
        .map(|r| (r.method.to_string(), r.clean_acc, r.adv_acc, r.avg_acc()))
        .collect())
}

#[pymodule]
fn adpmixup_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelDims>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyBackbone>()?;
    m.add_class::<PyAdapter>()?;
    m.add_class::<PyCalibration>()?;
    m.add_class::<PyMixer>()?;
    m.add_class::<PyMixInfo>()?;
    m.add_class::<PyAttackOutcome>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(mix_pair, m)?)?;
    m.add_function(wrap_pyfunction!(mix_multi, m)?)?;
    m.add_function(wrap_pyfunction!(adapter_soup, m)?)?;
    m.add_function(wrap_pyfunction!(attack_text, m)?)?;
    m.add_function(wrap_pyfunction!(generate_adversarial, m)?)?;
    m.add_function(wrap_pyfunction!(generate_adversarial_training_set, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
