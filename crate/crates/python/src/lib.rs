//! Python module `pyrccl`: datasets, vocabulary, training configuration,
//! the two-stage pipeline, evaluation and the bias probe.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use rccl::corpus::{self, Split, StanceLabel};
use rccl::encoder::{self, EncoderParams};
use rccl::textproc::{self, AliasMap};
use rccl::{eval, maskfill, synthlab, train, Error, TokenizedDataset, TrainConfig};

create_exception!(pyrccl, RcclError, PyException);

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Value { .. } | Error::Invalid(_) => PyValueError::new_err(e.to_string()),
        other => RcclError::new_err(other.to_string()),
    }
}

fn parse_split(s: &str) -> PyResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        _ => Err(PyValueError::new_err(format!("split must be train, dev or test, got {s:?}"))),
    }
}

fn parse_label(s: &str) -> PyResult<StanceLabel> {
    StanceLabel::ALL
        .into_iter()
        .find(|l| l.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| PyValueError::new_err(format!("unknown label {s:?}")))
}

#[pyclass(name = "Dataset", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: corpus::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Loads `path` in one of the formats jsonl, semeval, vast.
    #[staticmethod]
    #[pyo3(signature = (path, format = "jsonl", split = "train"))]
    fn load(path: &str, format: &str, split: &str) -> PyResult<Self> {
        let split = parse_split(split)?;
        let inner = match format {
            "jsonl" => corpus::load_jsonl(path, split),
            "semeval" => corpus::load_semeval(path, split),
            "vast" => corpus::load_vast(path, split),
            _ => return Err(PyValueError::new_err(format!("unknown format {format:?}"))),
        }
        .map_err(err)?;
        Ok(PyDataset { inner })
    }

    /// Builds a dataset from `(id, comment, target, label)` tuples; label may be None.
    #[staticmethod]
    #[pyo3(signature = (rows, name = "data", split = "train"))]
    fn from_rows(rows: Vec<(String, String, String, Option<String>)>, name: &str, split: &str) -> PyResult<Self> {
        let samples = rows
            .into_iter()
            .map(|(id, comment, target, label)| {
                let label = label.as_deref().map(parse_label).transpose()?;
                Ok(corpus::Sample::new(id, comment, target, label))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = corpus::Dataset::new(name, parse_split(split)?, samples).map_err(err)?;
        Ok(PyDataset { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        corpus::save_jsonl(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn targets(&self) -> Vec<String> {
        self.inner.targets()
    }

    /// Favor, against, neutral counts.
    fn label_counts(&self) -> (usize, usize, usize) {
        let [f, a, n] = self.inner.label_counts();
        (f, a, n)
    }

    /// Target → (favor, against, neutral, total).
    fn stats(&self) -> BTreeMap<String, (usize, usize, usize, usize)> {
        corpus::stats(&self.inner)
            .rows
            .into_iter()
            .map(|r| (r.target, (r.favor, r.against, r.neutral, r.total)))
            .collect()
    }
}

#[pyclass(name = "TrainConfig", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// Defaults, overridden by the keys of an optional JSON object.
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner: TrainConfig = match json {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => TrainConfig::default(),
        };
        inner.validate().map_err(err)?;
        Ok(PyTrainConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| RcclError::new_err(e.to_string()))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn strategy(&self) -> String {
        self.inner.strategy.to_string()
    }

    #[setter]
    fn set_strategy(&mut self, v: &str) -> PyResult<()> {
        self.inner.strategy = v.parse().map_err(err)?;
        Ok(())
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[setter]
    fn set_gamma(&mut self, v: f64) {
        self.inner.gamma = v;
    }

    #[getter]
    fn mask_ratio(&self) -> f64 {
        self.inner.mask_ratio
    }

    #[setter]
    fn set_mask_ratio(&mut self, v: f64) {
        self.inner.mask_ratio = v;
    }

    #[getter]
    fn max_epochs(&self) -> usize {
        self.inner.max_epochs
    }

    #[setter]
    fn set_max_epochs(&mut self, v: usize) {
        self.inner.max_epochs = v;
    }
}

/// Trained parameters with their vocabulary.
#[pyclass(name = "Model", frozen)]
pub struct PyModel {
    params: EncoderParams,
    vocab: textproc::Vocabulary,
}

impl PyModel {
    fn tokenized(&self, d: &PyDataset) -> PyResult<TokenizedDataset> {
        TokenizedDataset::new(&d.inner, &self.vocab, &AliasMap::default()).map_err(err)
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(model: &str, vocab: &str) -> PyResult<Self> {
        let vocab = textproc::Vocabulary::load(vocab).map_err(err)?;
        let params = EncoderParams::load(model, &vocab).map_err(err)?;
        Ok(PyModel { params, vocab })
    }

    fn save(&self, model: &str, vocab: &str) -> PyResult<()> {
        self.params.save(model, &self.vocab).map_err(err)?;
        self.vocab.save(vocab).map_err(err)
    }

    /// Favor, against, neutral probabilities.
    fn predict_proba(&self, target: &str, comment: &str) -> PyResult<[f64; 3]> {
        let s = corpus::Sample::new("q", comment, target, None);
        let t = textproc::tokenize_sample(&s, &self.vocab, &AliasMap::default()).map_err(err)?;
        encoder::predict_proba(&self.params, &t).map_err(err)
    }

    /// Overall and per-target macro-F1 on a labeled dataset.
    fn evaluate(&self, data: &PyDataset) -> PyResult<(f64, BTreeMap<String, f64>)> {
        let r = eval::evaluate(&self.params, &self.tokenized(data)?).map_err(err)?;
        let per_target = r.per_target.into_iter().map(|(k, s)| (k, s.macro_f1)).collect();
        Ok((r.overall.macro_f1, per_target))
    }

    /// `(target, [favor, against, neutral], tv)` on context-ablated inputs.
    fn bias_probe(&self, targets: Vec<String>) -> PyResult<Vec<(String, [f64; 3], f64)>> {
        let r = eval::bias_probe(&self.params, &targets, &self.vocab).map_err(err)?;
        Ok(r.rows.into_iter().map(|row| (row.target, row.distribution, row.tv)).collect())
    }

    fn __len__(&self) -> usize {
        self.params.num_params()
    }
}

fn prepare(
    cfg: &TrainConfig,
    train_set: &PyDataset,
    dev: Option<&PyDataset>,
    pretrain: Option<&PyDataset>,
) -> PyResult<(textproc::Vocabulary, TokenizedDataset, TokenizedDataset, Option<TokenizedDataset>)> {
    cfg.validate().map_err(err)?;
    let vocab = textproc::build_vocab(&train_set.inner, 1).map_err(err)?;
    let al = AliasMap::default();
    let tok = |d: &corpus::Dataset| TokenizedDataset::new(d, &vocab, &al).map_err(err);
    let tr = tok(&train_set.inner)?;
    let dv = match dev {
        Some(d) => tok(&d.inner)?,
        None => tok(&corpus::Dataset::empty("dev", Split::Dev))?,
    };
    let pre = pretrain.map(|d| tok(&d.inner)).transpose()?;
    Ok((vocab, tr, dv, pre))
}

/// Cross-entropy training only, after the prior stage when `pretrain` is given.
#[pyfunction]
#[pyo3(signature = (train_set, config, dev = None, pretrain = None))]
fn train_stage1(
    py: Python<'_>,
    train_set: &PyDataset,
    config: &PyTrainConfig,
    dev: Option<&PyDataset>,
    pretrain: Option<&PyDataset>,
) -> PyResult<PyModel> {
    let cfg = &config.inner;
    let (vocab, tr, dv, pre) = prepare(cfg, train_set, dev, pretrain)?;
    let params = py.detach(|| {
        let mut init = train::initial_params(vocab.len(), cfg);
        if let Some(p) = &pre {
            init = train::pretrain_prior(p, init, cfg)?.into_params();
        }
        train::train_stage1(&tr, &dv, init, cfg).map(|o| o.into_params())
    });
    Ok(PyModel { params: params.map_err(err)?, vocab })
}

/// The full two-stage pipeline with the n-gram filler. Returns the stage-1
/// and stage-2 models and a JSON summary of the run.
#[pyfunction]
#[pyo3(signature = (train_set, config, dev = None, pretrain = None))]
fn train_rccl(
    py: Python<'_>,
    train_set: &PyDataset,
    config: &PyTrainConfig,
    dev: Option<&PyDataset>,
    pretrain: Option<&PyDataset>,
) -> PyResult<(PyModel, PyModel, String)> {
    let cfg = &config.inner;
    let (vocab, tr, dv, pre) = prepare(cfg, train_set, dev, pretrain)?;
    let fm = maskfill::ngram_fill_model(&train_set.inner, &vocab).map_err(err)?;
    let out = py
        .detach(|| train::run_rccl(&tr, &dv, pre.as_ref(), vocab.len(), &fm, cfg))
        .map_err(err)?;
    let summary = serde_json::json!({
        "generated": out.generated,
        "duplicates": out.duplicates,
        "kept": out.kept.len(),
        "active_sets": out.active_sets,
        "stage1": out.stage1,
        "stage2": out.stage2,
    });
    Ok((
        PyModel { params: out.stage1.params().clone(), vocab: vocab.clone() },
        PyModel { params: out.stage2.into_params(), vocab },
        summary.to_string(),
    ))
}

/// Synthetic corpus: `(pretrain, train, dev, test, targets)`. `json` holds
/// generator settings overriding the defaults.
#[pyfunction]
#[pyo3(signature = (json = None))]
fn synth(json: Option<&str>) -> PyResult<(PyDataset, PyDataset, PyDataset, PyDataset, Vec<String>)> {
    let cfg: synthlab::SynthConfig = match json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => synthlab::SynthConfig::default(),
    };
    let d = synthlab::generate_synth(&cfg).map_err(err)?;
    let wrap = |inner| PyDataset { inner };
    Ok((wrap(d.pretrain), wrap(d.train), wrap(d.dev), wrap(d.test), d.oracle.targets))
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    textproc::tokenize(text)
}

/// Macro-F1 of label strings.
#[pyfunction]
fn macro_f1(preds: Vec<String>, golds: Vec<String>) -> PyResult<f64> {
    let parse = |v: Vec<String>| v.iter().map(|s| parse_label(s)).collect::<PyResult<Vec<_>>>();
    Ok(eval::macro_f1(&parse(preds)?, &parse(golds)?).map_err(err)?.macro_f1)
}

#[pyfunction]
fn tv_from_uniform(p: [f64; 3]) -> f64 {
    eval::tv_from_uniform(&p)
}

#[pymodule]
fn pyrccl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RcclError", m.py().get_type::<RcclError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train_stage1, m)?)?;
    m.add_function(wrap_pyfunction!(train_rccl, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(tv_from_uniform, m)?)?;
    Ok(())
}
