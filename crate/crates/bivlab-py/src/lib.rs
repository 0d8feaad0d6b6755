//! Python bindings: the weighted batch losses, the closed-form solver, the MLP,
//! noise generation and a one-call training entry point. Build with
//! `cargo build -p bivlab-py --release`; the resulting cdylib imports as
//! `bivlab_py` (see python/smoke_test.py for a loader that needs no packaging).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use bivlab::data::{synthetic_dataset as synth, Dataset};
use bivlab::error::BivError;
use bivlab::harness::{train, OptimizerKind, TrainConfig};
use bivlab::losses::{self, WeightingScheme};
use bivlab::nn;
use bivlab::noise::{build_noisy_dataset, NoiseSpec, NoisySample, VarianceDisturbance};
use bivlab::optim::AdamConfig;
use bivlab::rng::{stream, tag};

fn py_err(e: BivError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_scheme(name: &str, epsilon: f64, c: Option<f64>) -> PyResult<WeightingScheme> {
    let scheme = match name {
        "l2" => WeightingScheme::L2,
        "iv" => WeightingScheme::Iv,
        "biv" => WeightingScheme::Biv { epsilon },
        "cutoff" => {
            let c = c.ok_or_else(|| PyValueError::new_err("cutoff scheme needs the c argument"))?;
            WeightingScheme::Cutoff { c }
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown scheme {other:?}; expected l2, iv, biv or cutoff"
            )))
        }
    };
    scheme.validate().map_err(py_err)?;
    Ok(scheme)
}

fn dataset_from_rows(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> PyResult<Dataset> {
    let d = rows.first().map_or(0, |r| r.len());
    if d == 0 {
        return Err(PyValueError::new_err(
            "features must be a non-empty list of non-empty rows",
        ));
    }
    let mut flat = Vec::with_capacity(rows.len() * d);
    for (k, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(PyValueError::new_err(format!(
                "row {k} has {} values, expected {d}",
                row.len()
            )));
        }
        flat.extend_from_slice(row);
    }
    let names = (0..d).map(|j| format!("x{j}")).collect();
    Dataset::new(flat, d, labels, names).map_err(py_err)
}

/// Distribution of per-sample noise variances.
#[pyclass(name = "NoiseSpec", module = "bivlab_py")]
#[derive(Clone)]
struct PyNoiseSpec {
    inner: NoiseSpec,
}

#[pymethods]
impl PyNoiseSpec {
    #[staticmethod]
    fn constant(sigma2: f64) -> PyResult<Self> {
        let inner = NoiseSpec::Constant { sigma2 };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn uniform(mu_p: f64, v: f64) -> PyResult<Self> {
        let inner = NoiseSpec::Uniform { mu_p, v };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (mu_p, p, v_h, mu_l = 0.5))]
    fn binary_uniform(mu_p: f64, p: f64, v_h: f64, mu_l: f64) -> PyResult<Self> {
        let inner = NoiseSpec::BinaryUniform { mu_p, p, v_h, mu_l };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn gamma(alpha: f64, mu_p: f64) -> PyResult<Self> {
        let inner = NoiseSpec::Gamma { alpha, mu_p };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Mean of the distribution, i.e. the overall noise level mu_P.
    fn mean_variance(&self) -> f64 {
        self.inner.mean_variance()
    }

    /// Same distribution with every variance multiplied by `factor`.
    fn scaled(&self, factor: f64) -> Self {
        Self {
            inner: self.inner.scaled(factor),
        }
    }

    /// `n` variance draws from one deterministic stream.
    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, tag::SYNTH);
        (0..n).map(|_| self.inner.sample(&mut rng)).collect()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Loss, per-sample weights, Kish effective batch size and the gradient with
/// respect to the predictions.
#[pyclass(name = "BatchLoss", module = "bivlab_py", get_all)]
struct PyBatchLoss {
    loss: f64,
    weights: Vec<f64>,
    effective_batch_size: f64,
    grad: Vec<f64>,
}

impl From<losses::BatchLossResult> for PyBatchLoss {
    fn from(r: losses::BatchLossResult) -> Self {
        Self {
            loss: r.loss,
            weights: r.weights,
            effective_batch_size: r.effective_batch_size,
            grad: r.grad,
        }
    }
}

/// Batch inverse-variance loss with variance floor `epsilon`.
#[pyfunction]
fn biv_batch_loss(
    predictions: Vec<f64>,
    noisy_labels: Vec<f64>,
    sigma2s: Vec<f64>,
    epsilon: f64,
) -> PyResult<PyBatchLoss> {
    losses::biv_batch_loss(&predictions, &noisy_labels, &sigma2s, epsilon)
        .map(Into::into)
        .map_err(py_err)
}

/// Any of the four weightings; `epsilon` applies to biv, `c` to cutoff.
#[pyfunction]
#[pyo3(signature = (scheme, predictions, noisy_labels, sigma2s, epsilon = 0.05, c = None))]
fn batch_loss(
    scheme: &str,
    predictions: Vec<f64>,
    noisy_labels: Vec<f64>,
    sigma2s: Vec<f64>,
    epsilon: f64,
    c: Option<f64>,
) -> PyResult<PyBatchLoss> {
    let scheme = parse_scheme(scheme, epsilon, c)?;
    losses::batch_loss(scheme, &predictions, &noisy_labels, &sigma2s)
        .map(Into::into)
        .map_err(py_err)
}

/// Kish effective sample size (sum w)^2 / sum w^2.
#[pyfunction]
fn effective_batch_size(weights: Vec<f64>) -> PyResult<f64> {
    losses::effective_batch_size(&weights).map_err(py_err)
}

/// Exact weighted least squares coefficients for rows `x`, targets `y` and
/// per-row variances.
#[pyfunction]
fn wls_closed_form(x: Vec<Vec<f64>>, y: Vec<f64>, sigma2s: Vec<f64>) -> PyResult<Vec<f64>> {
    let n = x.len();
    let d = x.first().map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(n * d);
    for (k, row) in x.iter().enumerate() {
        if row.len() != d || d == 0 {
            return Err(PyValueError::new_err(format!(
                "row {k} has {} values, expected {d}",
                row.len()
            )));
        }
        flat.extend_from_slice(row);
    }
    bivlab::linear::wls_closed_form(&flat, n, d, &y, &sigma2s).map_err(py_err)
}

/// Trailing moving average with partial windows at the start.
#[pyfunction]
fn moving_average(series: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    bivlab::harness::moving_average(&series, window).map_err(py_err)
}

/// Feature rows, noise-free labels and feature names of the synthetic
/// regression dataset.
#[pyfunction]
fn synthetic_dataset(
    n: usize,
    d: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<String>)> {
    let ds = synth(n, d, seed).map_err(py_err)?;
    let rows = (0..ds.n).map(|k| ds.row(k).to_vec()).collect();
    Ok((rows, ds.labels.clone(), ds.feature_names.clone()))
}

/// Two-step corruption of a clean dataset: per-sample variance draws, then
/// Gaussian label noise, optionally disturbing the reported variances with
/// strength `d_v`. Returns (sigma2s, noisy_labels).
#[pyfunction]
#[pyo3(signature = (features, labels, spec, seed, d_v = 0.0))]
fn build_noisy(
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    spec: &PyNoiseSpec,
    seed: u64,
    d_v: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let ds = dataset_from_rows(features, labels)?;
    let disturbance = if d_v > 0.0 {
        Some(VarianceDisturbance::new(d_v).map_err(py_err)?)
    } else {
        None
    };
    let noisy = build_noisy_dataset(&ds, &spec.inner, disturbance, seed).map_err(py_err)?;
    Ok((
        noisy.iter().map(|s| s.sigma2).collect(),
        noisy.iter().map(|s| s.noisy_label).collect(),
    ))
}

/// Fully connected relu network with manual backprop.
#[pyclass(name = "Mlp", module = "bivlab_py")]
struct PyMlp {
    inner: nn::Mlp,
}

#[pymethods]
impl PyMlp {
    #[new]
    fn new(sizes: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: nn::Mlp::new(&sizes).map_err(py_err)?,
        })
    }

    /// He-initializes the weights from a deterministic stream of `seed`.
    fn init_he(&mut self, seed: u64) {
        self.inner.init_he(&mut stream(seed, tag::INIT));
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let d = self.inner.input_dim();
        let batch = rows.len();
        let mut flat = Vec::with_capacity(batch * d);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(PyValueError::new_err(format!(
                    "row {k} has {} values, the network takes {d}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        self.inner.predict(&flat, batch).map_err(py_err)
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    fn set_params(&mut self, values: Vec<f64>) -> PyResult<()> {
        self.inner.set_params(&values).map_err(py_err)
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes().to_vec()
    }

    fn save_checkpoint(&self, path: &str) -> PyResult<()> {
        self.inner.save_checkpoint(path.as_ref()).map_err(py_err)
    }

    #[staticmethod]
    fn load_checkpoint(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: nn::Mlp::load_checkpoint(path.as_ref()).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Mlp(sizes={:?}, params={})",
            self.inner.sizes(),
            self.inner.param_count()
        )
    }
}

/// Trains an MLP on pre-corrupted samples and evaluates against clean test
/// labels. Returns a dict with the evaluation series and the smoothed minimum.
#[pyfunction]
#[pyo3(signature = (
    features, noisy_labels, sigma2s, test_features, test_labels,
    scheme = "biv", epsilon = 0.05, c = None, epochs = 20, batch_size = 32,
    hidden = vec![32, 16], lr = 0.001, window = 35, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train_mlp(
    py: Python<'_>,
    features: Vec<Vec<f64>>,
    noisy_labels: Vec<f64>,
    sigma2s: Vec<f64>,
    test_features: Vec<Vec<f64>>,
    test_labels: Vec<f64>,
    scheme: &str,
    epsilon: f64,
    c: Option<f64>,
    epochs: usize,
    batch_size: usize,
    hidden: Vec<usize>,
    lr: f64,
    window: usize,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    if features.len() != noisy_labels.len() || features.len() != sigma2s.len() {
        return Err(PyValueError::new_err(format!(
            "{} feature rows, {} labels, {} variances; all three must match",
            features.len(),
            noisy_labels.len(),
            sigma2s.len()
        )));
    }
    let samples: Vec<NoisySample> = features
        .into_iter()
        .zip(noisy_labels)
        .zip(&sigma2s)
        .map(|((features, noisy_label), &sigma2)| NoisySample {
            features,
            sigma2,
            noisy_label,
            // clean labels are not part of this entry point; the field only
            // feeds diagnostics that the trainer does not read
            true_label: noisy_label,
        })
        .collect();
    let test = dataset_from_rows(test_features, test_labels)?;
    let cfg = TrainConfig {
        scheme: parse_scheme(scheme, epsilon, c)?,
        epochs,
        batch_size,
        optimizer: OptimizerKind::Adam(AdamConfig {
            lr,
            ..AdamConfig::default()
        }),
        eval_every: None,
        window,
        hidden,
    };
    let metrics = train(&cfg, &samples, &test, seed).map_err(py_err)?;

    let out = PyDict::new_bound(py);
    out.set_item("min_test_loss", metrics.min_test_loss)?;
    out.set_item("min_raw_test_loss", metrics.min_raw_test_loss)?;
    out.set_item("diverged", metrics.diverged)?;
    out.set_item("skipped_batches", metrics.skipped_batches)?;
    out.set_item(
        "samples_seen",
        metrics
            .eval_points
            .iter()
            .map(|p| p.samples_seen)
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "raw_test_mse",
        metrics
            .eval_points
            .iter()
            .map(|p| p.raw_test_mse)
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "smoothed_test_mse",
        metrics
            .eval_points
            .iter()
            .map(|p| p.smoothed_test_mse)
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "ebs_mean",
        metrics
            .eval_points
            .iter()
            .map(|p| p.ebs_mean)
            .collect::<Vec<_>>(),
    )?;
    Ok(out.into())
}

#[pymodule]
fn bivlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNoiseSpec>()?;
    m.add_class::<PyBatchLoss>()?;
    m.add_class::<PyMlp>()?;
    m.add_function(wrap_pyfunction!(biv_batch_loss, m)?)?;
    m.add_function(wrap_pyfunction!(batch_loss, m)?)?;
    m.add_function(wrap_pyfunction!(effective_batch_size, m)?)?;
    m.add_function(wrap_pyfunction!(wls_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(moving_average, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(build_noisy, m)?)?;
    m.add_function(wrap_pyfunction!(train_mlp, m)?)?;
    Ok(())
}
