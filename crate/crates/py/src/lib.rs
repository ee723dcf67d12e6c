//! Python bindings for the `trajpred` crate.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use trajpred::generator::model_forward;
use trajpred::pseudo_oracle::{kl_diag, DiagGaussian};
use trajpred::scene_data::{self, DataFormat, SyntheticKind, TrackRecord};
use trajpred::train_eval::{self, evaluate_sweep, Scene, TrainConfig, SWEEP_KS};
use trajpred::{AblationConfig, Error, ModelDims, SceneWindow, SocialMode, Stage};

type Point = (f64, f64);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Diverged { .. } | Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn pts(v: &[[f64; 2]]) -> Vec<Point> {
    v.iter().map(|p| (p[0], p[1])).collect()
}

fn arr(v: &[Point]) -> Vec<[f64; 2]> {
    v.iter().map(|&(x, y)| [x, y]).collect()
}

/// One observation/future window of several pedestrians.
#[pyclass(name = "SceneWindow", module = "trajpred_py", from_py_object)]
#[derive(Clone)]
struct PyWindow {
    inner: SceneWindow,
}

#[pymethods]
impl PyWindow {
    #[new]
    #[pyo3(signature = (ped_ids, obs, fut, dt = 0.4))]
    fn new(ped_ids: Vec<i64>, obs: Vec<Vec<Point>>, fut: Vec<Vec<Point>>, dt: f64) -> PyResult<Self> {
        let obs = obs.iter().map(|t| arr(t)).collect();
        let fut = fut.iter().map(|t| arr(t)).collect();
        Ok(Self { inner: SceneWindow::new(ped_ids, obs, fut, dt).map_err(to_py)? })
    }

    #[getter]
    fn ped_ids(&self) -> Vec<i64> {
        self.inner.ped_ids.clone()
    }

    #[getter]
    fn obs(&self) -> Vec<Vec<Point>> {
        self.inner.obs.iter().map(|t| pts(t)).collect()
    }

    #[getter]
    fn fut(&self) -> Vec<Vec<Point>> {
        self.inner.fut.iter().map(|t| pts(t)).collect()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    fn __len__(&self) -> usize {
        self.inner.n_peds()
    }

    fn __repr__(&self) -> String {
        format!("SceneWindow(n_peds={}, t_obs={}, t_pred={}, dt={})", self.inner.n_peds(), self.inner.t_obs(), self.inner.t_pred(), self.inner.dt)
    }
}

fn unwrap_windows(windows: &[PyWindow]) -> Vec<SceneWindow> {
    windows.iter().map(|w| w.inner.clone()).collect()
}

fn wrap_windows(windows: Vec<SceneWindow>) -> Vec<PyWindow> {
    windows.into_iter().map(|inner| PyWindow { inner }).collect()
}

/// Parses ETH/UCY or SDD annotation text into `(frame, ped, x, y)` tuples.
#[pyfunction]
#[pyo3(signature = (text, format = "ethucy"))]
fn parse_records(text: &str, format: &str) -> PyResult<Vec<(i64, i64, f64, f64)>> {
    let format: DataFormat = format.parse().map_err(to_py)?;
    let recs = scene_data::parse_records(text, format).map_err(to_py)?;
    Ok(recs.into_iter().map(|r| (r.frame_id, r.ped_id, r.x, r.y)).collect())
}

/// Slices `(frame, ped, x, y)` records into fixed-length windows.
#[pyfunction]
#[pyo3(signature = (records, t_obs = 8, t_pred = 12, stride = 1, dt = 0.4))]
fn build_windows(records: Vec<(i64, i64, f64, f64)>, t_obs: usize, t_pred: usize, stride: usize, dt: f64) -> PyResult<Vec<PyWindow>> {
    let recs: Vec<TrackRecord> = records.into_iter().map(|(frame_id, ped_id, x, y)| TrackRecord { frame_id, ped_id, x, y }).collect();
    Ok(wrap_windows(scene_data::build_windows(&recs, t_obs, t_pred, stride, dt).map_err(to_py)?))
}

/// Synthetic scenes: `linear`, `turn`, `crossing` or `still`.
#[pyfunction]
#[pyo3(signature = (kind, n_ped, n_windows = 1, seed = 0))]
fn generate_synthetic(kind: &str, n_ped: usize, n_windows: usize, seed: u64) -> PyResult<Vec<PyWindow>> {
    let kind: SyntheticKind = kind.parse().map_err(to_py)?;
    Ok(wrap_windows(scene_data::generate_synthetic(kind, n_ped, n_windows, seed).map_err(to_py)?))
}

/// `(ade, fde)` of one predicted trajectory.
#[pyfunction]
fn compute_metrics(pred: Vec<Point>, gt: Vec<Point>) -> PyResult<(f64, f64)> {
    train_eval::compute_metrics(&arr(&pred), &arr(&gt)).map_err(to_py)
}

/// Constant-velocity prediction for every pedestrian of a window.
#[pyfunction]
fn cvm_predict(window: &PyWindow) -> PyResult<Vec<Vec<Point>>> {
    Ok(train_eval::cvm_predict(&window.inner).map_err(to_py)?.iter().map(|t| pts(t)).collect())
}

/// `KL(p ‖ q)` between diagonal Gaussians given means and standard deviations.
#[pyfunction]
fn kl_divergence(mu_p: Vec<f64>, sigma_p: Vec<f64>, mu_q: Vec<f64>, sigma_q: Vec<f64>) -> PyResult<f64> {
    kl_diag(&DiagGaussian { mu: mu_p, sigma: sigma_p }, &DiagGaussian { mu: mu_q, sigma: sigma_q }).map_err(to_py)
}

fn parse_ablation(name: &str) -> PyResult<AblationConfig> {
    if name.eq_ignore_ascii_case("baseline") {
        return Ok(AblationConfig::baseline());
    }
    if name.eq_ignore_ascii_case("full") {
        return Ok(AblationConfig::full());
    }
    let mut cfg = AblationConfig::baseline();
    for part in name.split('+') {
        match part.trim().to_ascii_uppercase().as_str() {
            "TA" => cfg.use_ta = true,
            "GA" => cfg.use_ga = true,
            "HSA" => cfg.social_mode = SocialMode::Hard,
            "SSA" => cfg.social_mode = SocialMode::Soft,
            "POP" => cfg.use_pop = true,
            other => return Err(PyValueError::new_err(format!("unknown component {other:?} in {name:?}"))),
        }
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Trajectory predictor. `ablation` is `"full"`, `"baseline"` or a
/// `+`-joined subset of `TA`, `GA`, `HSA`, `SSA`, `POP`.
#[pyclass(name = "Model", module = "trajpred_py")]
struct PyModel {
    inner: trajpred::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (seed = 0, ablation = "full", hidden = 32))]
    fn new(seed: u64, ablation: &str, hidden: usize) -> PyResult<Self> {
        let dims = ModelDims { hidden, ..ModelDims::default() };
        Ok(Self { inner: trajpred::Model::new(dims, parse_ablation(ablation)?, seed).map_err(to_py)? })
    }

    #[getter]
    fn ablation(&self) -> String {
        self.inner.ablation.to_string()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// One sampled future per pedestrian.
    #[pyo3(signature = (window, seed = 0))]
    fn predict(&self, window: &PyWindow, seed: u64) -> PyResult<Vec<Vec<Point>>> {
        let p = model_forward(&window.inner, &self.inner, Stage::Test, seed).map_err(to_py)?;
        Ok(p.futures.iter().map(|t| pts(t)).collect())
    }

    /// `k` sampled futures per pedestrian, indexed `[ped][sample][step]`.
    #[pyo3(signature = (window, k = 20, seed = 0))]
    fn sample(&self, window: &PyWindow, k: usize, seed: u64) -> PyResult<Vec<Vec<Vec<Point>>>> {
        let s = train_eval::sample_futures(&self.inner, &window.inner, k, 0, seed).map_err(to_py)?;
        Ok(s.iter().map(|ped| ped.iter().map(|t| pts(t)).collect()).collect())
    }

    /// Trains in place and returns the per-epoch loss records.
    #[pyo3(signature = (windows, epochs = 400, batch_size = 64, v = 20, alpha = 10.0, lr_main = 1e-3, lr_pop = 1e-4, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        windows: Vec<PyWindow>,
        epochs: usize,
        batch_size: usize,
        v: usize,
        alpha: f64,
        lr_main: f64,
        lr_pop: f64,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = TrainConfig { epochs, batch_size, v, alpha, lr_main, lr_pop, seed, ..TrainConfig::default() };
        let windows = unwrap_windows(&windows);
        let model = &mut self.inner;
        let curve = py.detach(|| train_eval::train_in_place(model, &windows, &cfg)).map_err(to_py)?;
        curve
            .into_iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("variety", r.variety)?;
                d.set_item("kl", r.kl)?;
                d.set_item("total", r.total)?;
                Ok(d)
            })
            .collect()
    }

    /// Best-of-`k` ADE/FDE over the windows.
    #[pyo3(signature = (windows, k = 20, seed = 0))]
    fn evaluate<'py>(&self, py: Python<'py>, windows: Vec<PyWindow>, k: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let windows = unwrap_windows(&windows);
        let model = &self.inner;
        let r = py.detach(|| train_eval::evaluate_windows(model, &windows, k, seed)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("ade", r.ade)?;
        d.set_item("fde", r.fde)?;
        d.set_item("k", r.sampling_number)?;
        d.set_item("windows", r.windows)?;
        d.set_item("count", r.count)?;
        Ok(d)
    }

    /// `[(k, ade, fde)]` for k in 1, 5, 10, 20 from one nested sample set.
    #[pyo3(signature = (windows, seed = 0))]
    fn sweep(&self, py: Python<'_>, windows: Vec<PyWindow>, seed: u64) -> PyResult<Vec<(usize, f64, f64)>> {
        let scenes = [Scene { name: "all".into(), windows: unwrap_windows(&windows) }];
        let model = &self.inner;
        let reports = py.detach(|| evaluate_sweep(model, &scenes, &SWEEP_KS, seed)).map_err(to_py)?;
        Ok(reports.iter().map(|r| (r.sampling_number, r.ade, r.fde)).collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: trajpred::Model::load(&path).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("Model(ablation={:?}, parameters={})", self.inner.ablation.to_string(), self.inner.params.num_scalars())
    }
}

#[pymodule]
fn trajpred_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWindow>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(parse_records, m)?)?;
    m.add_function(wrap_pyfunction!(build_windows, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(cvm_predict, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add("T_OBS", scene_data::T_OBS)?;
    m.add("T_PRED", scene_data::T_PRED)?;
    Ok(())
}
