//! Python bindings: the storage/recall pair, the digit set, group splits,
//! pretraining and the two biased-rehearsal experiments.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use plm_core::data::{self, Dataset75, GroupAssignment};
use plm_core::engine::{self, BiasSchedule, ExperimentConfig, MetricsLog, PlmPair, Seeds};
use plm_core::harness::RunConfig;
use plm_core::regularize::{DitherSpec, DropoutSpec, ReplicaConfig};

fn to_py(e: plm_core::PlmError) -> PyErr {
    use plm_core::PlmError as E;
    match e {
        E::Io(io) => PyOSError::new_err(io.to_string()),
        E::Divergence { .. } | E::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type Rows = Vec<(u64, f64, f64, f64)>;

fn rows(log: &MetricsLog) -> Rows {
    log.rows()
        .iter()
        .map(|r| (r.iteration, r.errors[0], r.errors[1], r.errors[2]))
        .collect()
}

/// The 75 digits; class `i` is training image `i`.
#[pyclass(name = "Dataset", module = "plm")]
struct PyDataset {
    inner: Dataset75,
}

#[pymethods]
impl PyDataset {
    /// Loads from an MNIST directory or directly from an IDX3 image file.
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        let file = if path.is_dir() {
            path.join(data::TRAIN_IMAGES_FILE)
        } else {
            path
        };
        Ok(Self {
            inner: Dataset75::from_idx(file).map_err(to_py)?,
        })
    }

    fn image(&self, class: usize) -> PyResult<Vec<f64>> {
        if class >= self.inner.len() {
            return Err(PyValueError::new_err(format!("class {class} outside 0..75")));
        }
        Ok(self.inner.image(class).as_slice().to_vec())
    }

    /// Number of image reads so far.
    #[getter]
    fn reads(&self) -> u64 {
        self.inner.reads()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Seeded split of the 75 classes into three groups of 25.
#[pyclass(name = "Groups", module = "plm", frozen)]
struct PyGroups {
    inner: GroupAssignment,
}

#[pymethods]
impl PyGroups {
    #[new]
    #[pyo3(signature = (seed = 2015))]
    fn new(seed: u64) -> Self {
        Self {
            inner: data::split_groups(seed),
        }
    }

    /// Sorted members of group 1, 2 or 3.
    fn members(&self, group: usize) -> PyResult<Vec<usize>> {
        if !(1..=3).contains(&group) {
            return Err(PyValueError::new_err("group must be 1, 2 or 3"));
        }
        Ok(self.inner.members(group).to_vec())
    }

    fn group_of(&self, class: usize) -> PyResult<usize> {
        if class >= data::NUM_CLASSES {
            return Err(PyValueError::new_err(format!("class {class} outside 0..75")));
        }
        Ok(self.inner.group_of(class))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }
}

/// Per-step training hyperparameters. Defaults match the command-line tool.
#[pyclass(name = "TrainConfig", module = "plm", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    learning_rate: f64,
    recall_learning_rate: f64,
    replicas: usize,
    dither: f64,
    dropout: f64,
    dither_class_input: bool,
    noise_seed: u64,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let d = RunConfig::default();
        let mut cfg = Self {
            learning_rate: d.learning_rate,
            recall_learning_rate: d.recall_learning_rate,
            replicas: d.replicas,
            dither: d.dither,
            dropout: d.dropout,
            dither_class_input: d.dither_class_input,
            noise_seed: d.seeds.dither,
        };
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                match key.as_str() {
                    "learning_rate" => cfg.learning_rate = v.extract()?,
                    "recall_learning_rate" => cfg.recall_learning_rate = v.extract()?,
                    "replicas" => cfg.replicas = v.extract()?,
                    "dither" => cfg.dither = v.extract()?,
                    "dropout" => cfg.dropout = v.extract()?,
                    "dither_class_input" => cfg.dither_class_input = v.extract()?,
                    "noise_seed" => cfg.noise_seed = v.extract()?,
                    _ => return Err(PyValueError::new_err(format!("unknown option {key:?}"))),
                }
            }
        }
        cfg.to_core()?;
        Ok(cfg)
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainConfig(learning_rate={}, recall_learning_rate={}, replicas={}, dither={}, dropout={}, dither_class_input={}, noise_seed={})",
            self.learning_rate,
            self.recall_learning_rate,
            self.replicas,
            self.dither,
            self.dropout,
            if self.dither_class_input { "True" } else { "False" },
            self.noise_seed
        )
    }
}

impl PyTrainConfig {
    fn to_core(&self) -> PyResult<engine::TrainConfig> {
        for lr in [self.learning_rate, self.recall_learning_rate] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(PyValueError::new_err("learning rates must be positive"));
            }
        }
        Ok(engine::TrainConfig {
            learning_rate: self.learning_rate,
            recall_learning_rate: self.recall_learning_rate,
            replicas: ReplicaConfig::new(self.replicas).map_err(to_py)?,
            dither: DitherSpec::new(self.dither).map_err(to_py)?,
            dropout: DropoutSpec::new(self.dropout).map_err(to_py)?,
            dither_class_input: self.dither_class_input,
            noise_seed: self.noise_seed,
        })
    }
}

/// Storage (784-100-75) and recall (75-100-784) networks.
#[pyclass(name = "PlmPair", module = "plm", skip_from_py_object)]
#[derive(Clone)]
struct PyPlmPair {
    inner: PlmPair,
}

#[pymethods]
impl PyPlmPair {
    #[new]
    #[pyo3(signature = (seed = 1))]
    fn new(seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: PlmPair::new(seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: engine::load_checkpoint(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        engine::save_checkpoint(&self.inner, path).map_err(to_py)
    }

    fn copy(&self) -> Self {
        self.clone()
    }

    /// Eval-mode recall of a class as 784 pixels in [0, 1].
    fn synthesize(&self, class: usize) -> PyResult<Vec<f64>> {
        Ok(engine::synthesize(&self.inner.recall, class)
            .map_err(to_py)?
            .into_inner())
    }

    /// Predicted class of a 784-pixel image in [0, 1].
    fn classify(&self, image: Vec<f64>) -> PyResult<usize> {
        if image.len() != data::IMAGE_LEN {
            return Err(PyValueError::new_err("image must have 784 pixels"));
        }
        engine::classify(&self.inner.storage, &image).map_err(to_py)
    }

    /// Class probabilities of the storage network for an image in [0, 1].
    fn probabilities(&self, image: Vec<f64>) -> PyResult<Vec<f64>> {
        if image.len() != data::IMAGE_LEN {
            return Err(PyValueError::new_err("image must have 784 pixels"));
        }
        self.inner
            .storage
            .predict(&data::zero_mean(&image))
            .map_err(to_py)
    }

    fn storage_errors(&self, dataset: &PyDataset) -> PyResult<usize> {
        engine::storage_errors(&self.inner.storage, &dataset.inner).map_err(to_py)
    }

    fn recall_errors(&self) -> PyResult<usize> {
        engine::recall_errors(&self.inner).map_err(to_py)
    }

    fn evaluate_groups(&self, dataset: &PyDataset, groups: &PyGroups) -> PyResult<(f64, f64, f64)> {
        let e = engine::evaluate_groups(&self.inner.storage, &dataset.inner, &groups.inner)
            .map_err(to_py)?;
        Ok((e[0], e[1], e[2]))
    }

    /// Unbiased full sweeps over the real digits, training both networks.
    #[pyo3(signature = (dataset, epochs = 100, config = None, shuffle_seed = 1))]
    fn pretrain(
        &mut self,
        py: Python<'_>,
        dataset: &PyDataset,
        epochs: u32,
        config: Option<PyTrainConfig>,
        shuffle_seed: u64,
    ) -> PyResult<()> {
        let cfg = config.map_or_else(|| PyTrainConfig::new(None), Ok)?.to_core()?;
        let pair = &mut self.inner;
        let data = &dataset.inner;
        py.detach(|| engine::pretrain(pair, data, epochs, &cfg, shuffle_seed))
            .map_err(to_py)
    }
}

fn bias(p: (f64, f64, f64)) -> PyResult<BiasSchedule> {
    BiasSchedule::new([p.0, p.1, p.2]).map_err(to_py)
}

#[allow(clippy::too_many_arguments)]
fn experiment(
    cfg: Option<PyTrainConfig>,
    bias_p: (f64, f64, f64),
    iterations: u64,
    eval_every: u64,
    init_seed: u64,
    sampler_seed: u64,
    groups: &PyGroups,
    stop_at_zero: bool,
) -> PyResult<ExperimentConfig> {
    let train = cfg.map_or_else(|| PyTrainConfig::new(None), Ok)?.to_core()?;
    Ok(ExperimentConfig {
        train,
        bias: bias(bias_p)?,
        iterations,
        eval_every,
        seeds: Seeds {
            init: init_seed,
            split: groups.inner.seed(),
            sampler: sampler_seed,
            dither: train.noise_seed,
        },
        stop_at_zero,
    })
}

/// Biased SGD of a fresh storage network on the real digits.
/// Returns `[(iteration, err_g1, err_g2, err_g3), ...]`.
#[pyfunction]
#[pyo3(signature = (dataset, groups, bias = (0.8, 0.15, 0.05), iterations = 30000, config = None, eval_every = 1, init_seed = 1, sampler_seed = 3, stop_at_zero = true))]
#[allow(clippy::too_many_arguments)]
fn run_selective_learning(
    py: Python<'_>,
    dataset: &PyDataset,
    groups: &PyGroups,
    bias: (f64, f64, f64),
    iterations: u64,
    config: Option<PyTrainConfig>,
    eval_every: u64,
    init_seed: u64,
    sampler_seed: u64,
    stop_at_zero: bool,
) -> PyResult<Rows> {
    let cfg = experiment(config, bias, iterations, eval_every, init_seed, sampler_seed, groups, stop_at_zero)?;
    let (data, g) = (&dataset.inner, &groups.inner);
    py.detach(|| engine::run_selective_learning(&cfg, data, g))
        .map(|log| rows(&log))
        .map_err(|a| to_py(a.error))
}

/// Biased perpetual SGD from `pair` (left unchanged). Returns the curve rows
/// and the pair after the run.
///
/// The rates in `config` are the pretraining ones; this phase uses
/// `learning_rate` and `recall_learning_rate` (defaults: the command-line
/// `forget` defaults).
#[pyfunction]
#[pyo3(signature = (pair, dataset, groups, bias = (0.99, 0.01, 0.0), iterations = 10000, config = None, eval_every = 1, sampler_seed = 3, learning_rate = None, recall_learning_rate = None))]
#[allow(clippy::too_many_arguments)]
fn run_selective_forgetting(
    py: Python<'_>,
    pair: &PyPlmPair,
    dataset: &PyDataset,
    groups: &PyGroups,
    bias: (f64, f64, f64),
    iterations: u64,
    config: Option<PyTrainConfig>,
    eval_every: u64,
    sampler_seed: u64,
    learning_rate: Option<f64>,
    recall_learning_rate: Option<f64>,
) -> PyResult<(Rows, PyPlmPair)> {
    let mut cfg = experiment(config, bias, iterations, eval_every, 0, sampler_seed, groups, false)?;
    let d = RunConfig::default();
    let lr = learning_rate.unwrap_or(d.forget_learning_rate);
    let rlr = recall_learning_rate.unwrap_or(d.forget_recall_learning_rate);
    if !(lr > 0.0 && lr.is_finite() && rlr > 0.0 && rlr.is_finite()) {
        return Err(PyValueError::new_err("learning rates must be positive"));
    }
    cfg.train.learning_rate = lr;
    cfg.train.recall_learning_rate = rlr;
    let start = pair.inner.clone();
    let (data, g) = (&dataset.inner, &groups.inner);
    py.detach(|| engine::run_selective_forgetting(start, &cfg, data, g))
        .map(|(log, p)| (rows(&log), PyPlmPair { inner: p }))
        .map_err(|a| to_py(a.error))
}

/// Writes a 28x28 binary PGM of an image in [0, 1].
#[pyfunction]
fn export_pgm(image: Vec<f64>, path: PathBuf) -> PyResult<()> {
    data::export_image_pgm(&image, path).map_err(to_py)
}

#[pymodule]
fn plm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGroups>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyPlmPair>()?;
    m.add_function(wrap_pyfunction!(run_selective_learning, m)?)?;
    m.add_function(wrap_pyfunction!(run_selective_forgetting, m)?)?;
    m.add_function(wrap_pyfunction!(export_pgm, m)?)?;
    m.add("NUM_CLASSES", data::NUM_CLASSES)?;
    m.add("IMAGE_LEN", data::IMAGE_LEN)?;
    Ok(())
}
