//! Python bindings: synthetic datasets, the trainable LSTM Kalman filter,
//! classic baselines and error metrics.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lstmkf::kalman::{ema_filter, grid_search, run_baseline, BaselineParams, ModelFamily};
use lstmkf::metrics::mean_euclidean;
use lstmkf::synth::{
    apply_bursts, gen_linear_cv, gen_oscillator, load_dataset, measurement_error, oracle_error, save_dataset,
    BurstSpec, LinearCvParams, OscillatorParams,
};
use lstmkf::train::EpochLog;
use lstmkf::{Checkpoint, LstmKfParams, Matrix, Preset, TrainConfig, TrainedModel, TrajectoryDataset};

fn py_err(e: lstmkf::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect()).collect()
}

fn family(name: &str) -> PyResult<ModelFamily> {
    match name {
        "kalman_vel" | "cv" => Ok(ModelFamily::ConstantVelocity),
        "kalman_acc" | "ca" => Ok(ModelFamily::ConstantAcceleration),
        "ema" => Ok(ModelFamily::Ema),
        other => Err(PyValueError::new_err(format!(
            "unknown family `{other}` (expected kalman_vel, kalman_acc or ema)"
        ))),
    }
}

/// Ground-truth trajectories paired with noisy measurements.
#[pyclass(module = "pylstmkf", frozen)]
struct Dataset {
    inner: TrajectoryDataset,
}

#[pymethods]
impl Dataset {
    /// Constant-velocity random walk observed in Gaussian noise.
    #[staticmethod]
    #[pyo3(signature = (dim, steps, sequences, q, r, dt=1.0, seed=0))]
    fn linear_cv(dim: usize, steps: usize, sequences: usize, q: f64, r: f64, dt: f64, seed: u64) -> PyResult<Self> {
        let p = LinearCvParams { dim, steps, sequences, q, r, dt };
        Ok(Dataset { inner: gen_linear_cv(&p, seed).map_err(py_err)? })
    }

    /// Sinusoids with random per-dimension phase.
    #[staticmethod]
    #[pyo3(signature = (dim, steps, sequences, amplitude=1.0, frequency=0.05, r=0.01, dt=1.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn oscillator(
        dim: usize,
        steps: usize,
        sequences: usize,
        amplitude: f64,
        frequency: f64,
        r: f64,
        dt: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let p = OscillatorParams { dim, steps, sequences, amplitude, frequency, r, dt };
        Ok(Dataset { inner: gen_oscillator(&p, seed).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Dataset { inner: load_dataset(path).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_dataset(&self.inner, path).map_err(py_err)
    }

    /// Copy with measurement noise inflated over 1-indexed inclusive intervals.
    #[pyo3(signature = (starts, ends, scale, seed=0))]
    fn with_bursts(&self, starts: Vec<usize>, ends: Vec<usize>, scale: f64, seed: u64) -> PyResult<Self> {
        let spec = BurstSpec { starts, ends, scale };
        Ok(Dataset { inner: apply_bursts(&self.inner, &spec, seed).map_err(py_err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.sequences.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.sequences.first().map_or(0, |s| s.len())
    }

    fn truth(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.sequence(index)?.truth.clone())
    }

    fn measurements(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.sequence(index)?.measurements.clone())
    }

    /// Mean Euclidean error of the raw measurements.
    fn measurement_error(&self) -> PyResult<f64> {
        measurement_error(&self.inner).map_err(py_err)
    }

    /// Mean Euclidean error of the exact filter (linear_cv data only).
    fn oracle_error(&self) -> PyResult<f64> {
        oracle_error(&self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({}, sequences={}, steps={}, dim={})",
            self.inner.meta.generator.name(),
            self.inner.sequences.len(),
            self.steps(),
            self.dim()
        )
    }
}

impl Dataset {
    fn sequence(&self, index: usize) -> PyResult<&lstmkf::Sequence> {
        self.inner.sequences.get(index).ok_or_else(|| {
            PyValueError::new_err(format!(
                "sequence index {index} out of range (dataset has {})",
                self.inner.sequences.len()
            ))
        })
    }
}

fn epoch_dict<'py>(py: Python<'py>, e: &EpochLog) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", e.epoch)?;
    d.set_item("loss", e.loss)?;
    d.set_item("mean_gain", e.mean_gain)?;
    d.set_item("learning_rate", e.learning_rate)?;
    Ok(d)
}

/// Kalman filter whose transition and noise covariances come from three
/// recurrent networks.
#[pyclass(module = "pylstmkf")]
struct LstmKf {
    params: LstmKfParams,
    config: Option<TrainConfig>,
    seed: u64,
}

#[pymethods]
impl LstmKf {
    #[new]
    #[pyo3(signature = (dim, preset="small", seed=0))]
    fn new(dim: usize, preset: &str, seed: u64) -> PyResult<Self> {
        let preset: Preset = preset.parse().map_err(PyValueError::new_err)?;
        let params = LstmKfParams::new(dim, preset, seed).map_err(py_err)?;
        Ok(LstmKf { params, config: None, seed })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.params.dim()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Trains in place and returns one dict per epoch. Omitted settings take
    /// the small-network defaults.
    #[pyo3(signature = (dataset, epochs=None, learning_rate=None, batch_size=None, truncation=None, lam=None, seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        dataset: &Dataset,
        epochs: Option<usize>,
        learning_rate: Option<f64>,
        batch_size: Option<usize>,
        truncation: Option<usize>,
        lam: Option<f64>,
        seed: Option<u64>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let base = TrainConfig::small();
        let cfg = TrainConfig {
            epochs: epochs.unwrap_or(base.epochs),
            learning_rate: learning_rate.unwrap_or(base.learning_rate),
            batch_size: batch_size.unwrap_or(base.batch_size),
            truncation: truncation.unwrap_or(base.truncation),
            lambda: lam.unwrap_or(base.lambda),
            seed: seed.unwrap_or(self.seed),
            ..base
        };
        let data = &dataset.inner.sequences;
        let params = &mut self.params;
        let log = py.detach(|| params.train(data, &cfg)).map_err(py_err)?;
        self.config = Some(cfg);
        log.epochs.iter().map(|e| epoch_dict(py, e)).collect()
    }

    /// Runs the filter over a `T × d` list of measurements.
    fn filter<'py>(&self, py: Python<'py>, measurements: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let trace = self.params.filter(&measurements).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("estimates", &trace.estimates)?;
        d.set_item("predictions", &trace.predictions)?;
        d.set_item("gains", trace.gains.iter().map(rows).collect::<Vec<_>>())?;
        d.set_item("covariances", trace.covariances.iter().map(rows).collect::<Vec<_>>())?;
        d.set_item("process_noise", &trace.process_noise)?;
        d.set_item("measurement_noise", &trace.measurement_noise)?;
        Ok(d)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let ckpt = Checkpoint {
            model: TrainedModel::LstmKf(self.params.clone()),
            train_config: self.config.clone(),
            seed: self.seed,
        };
        ckpt.save(path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = Checkpoint::load(path).map_err(py_err)?;
        match ckpt.model {
            TrainedModel::LstmKf(params) => Ok(LstmKf { params, config: ckpt.train_config, seed: ckpt.seed }),
            TrainedModel::StdLstm(_) => Err(PyValueError::new_err(format!("{path} holds a standalone LSTM"))),
        }
    }

    fn __repr__(&self) -> String {
        format!("LstmKf(dim={}, params={})", self.params.dim(), self.params.param_count())
    }
}

/// Constant-velocity or constant-acceleration Kalman filter estimates.
#[pyfunction]
#[pyo3(signature = (family, measurements, q, r, dt=1.0))]
fn kalman_filter(family: &str, measurements: Vec<Vec<f64>>, q: f64, r: f64, dt: f64) -> PyResult<Vec<Vec<f64>>> {
    let fam = match self::family(family)? {
        ModelFamily::Ema => return Err(PyValueError::new_err("use ema() for exponential smoothing")),
        f => f,
    };
    run_baseline(fam, BaselineParams::Kalman { q, r }, &measurements, dt).map_err(py_err)
}

/// Exponential moving average with `alpha = 2 / (window + 1)`.
#[pyfunction]
fn ema(measurements: Vec<Vec<f64>>, window: usize) -> PyResult<Vec<Vec<f64>>> {
    ema_filter(&measurements, window).map_err(py_err)
}

/// Best baseline parameters on `dataset`; returns the parameters and error.
#[pyfunction]
#[pyo3(signature = (dataset, family, q_grid=vec![], r_grid=vec![], window_grid=vec![]))]
fn baseline_grid_search<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    family: &str,
    q_grid: Vec<f64>,
    r_grid: Vec<f64>,
    window_grid: Vec<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let fam = self::family(family)?;
    let g = grid_search(&dataset.inner.sequences, fam, &q_grid, &r_grid, &window_grid, dataset.inner.dt())
        .map_err(py_err)?;
    let d = PyDict::new(py);
    match g.best {
        BaselineParams::Kalman { q, r } => {
            d.set_item("q", q)?;
            d.set_item("r", r)?;
        }
        BaselineParams::Ema { window } => d.set_item("window", window)?,
    }
    d.set_item("error", g.best_error)?;
    Ok(d)
}

/// Mean Euclidean distance between two `T × d` trajectories.
#[pyfunction]
fn mean_error(estimates: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    mean_euclidean(&estimates, &truth).map_err(py_err)
}

#[pymodule]
fn pylstmkf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<LstmKf>()?;
    m.add_function(wrap_pyfunction!(kalman_filter, m)?)?;
    m.add_function(wrap_pyfunction!(ema, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(mean_error, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(rows(&m), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn family_names() {
        assert_eq!(family("kalman_vel").unwrap(), ModelFamily::ConstantVelocity);
        assert_eq!(family("ca").unwrap(), ModelFamily::ConstantAcceleration);
        assert_eq!(family("ema").unwrap(), ModelFamily::Ema);
    }
}
