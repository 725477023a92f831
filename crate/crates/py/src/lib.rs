//! Python bindings: run configuration and pipeline commands, simulation,
//! MSM construction, checkpoint loading and sampling, scalar metrics.

use std::path::PathBuf;

use msm_emu::config::RunConfig;
use msm_emu::dynamics::{self, LangevinParams, Potential};
use msm_emu::metrics;
use msm_emu::msm::{self, MarkovStateModel, MsmParams};
use msm_emu::pipeline;
use msm_emu::sampling::{self, NetField, OdeOptions, SampleContext, Solver};
use msm_emu::system::{Conformation, SystemSpec, Trajectory};
use msm_emu::train::{read_checkpoint, TrainState};
use msm_emu::Error;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(msm_emu_py, MsmEmuError, PyException);
create_exception!(msm_emu_py, ConfigError, MsmEmuError);
create_exception!(msm_emu_py, DataError, MsmEmuError);
create_exception!(msm_emu_py, NumericError, MsmEmuError);

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => ConfigError::new_err(msg),
        3 => DataError::new_err(msg),
        _ => NumericError::new_err(msg),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    ConfigError::new_err(e.to_string())
}

fn frames_of(rows: Vec<Vec<f64>>) -> Vec<Conformation> {
    rows.into_iter().map(Conformation::new).collect()
}

fn rows_of(frames: &[Conformation]) -> Vec<Vec<f64>> {
    frames.iter().map(|f| f.positions.clone()).collect()
}

/// Strict run configuration; `json` may hold any subset of the fields.
#[pyclass(name = "RunConfig", module = "msm_emu_py")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(t) => RunConfig::from_json(t, std::path::Path::new("<python>")).map_err(py_err)?,
            None => RunConfig::default(),
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(json_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir.clone()
    }

    #[setter]
    fn set_out_dir(&mut self, dir: PathBuf) {
        self.inner.out_dir = dir;
    }

    fn simulate(&self, py: Python<'_>) -> PyResult<Vec<String>> {
        let cfg = self.inner.clone();
        let m = py.detach(|| pipeline::cmd_simulate(&cfg)).map_err(py_err)?;
        Ok(m.files)
    }

    fn build_msm(&self, py: Python<'_>) -> PyResult<Msm> {
        let cfg = self.inner.clone();
        let inner = py.detach(|| pipeline::cmd_build_msm(&cfg)).map_err(py_err)?;
        Ok(Msm { inner })
    }

    /// Trains the configured modes; returns `{mode: [epoch losses]}`.
    fn train(&self, py: Python<'_>) -> PyResult<Vec<(String, Vec<f64>)>> {
        let cfg = self.inner.clone();
        let logs = py.detach(|| pipeline::cmd_train(&cfg)).map_err(py_err)?;
        Ok(logs
            .into_iter()
            .map(|(m, log)| (m.name().to_string(), log.epochs.iter().map(|e| e.loss).collect()))
            .collect())
    }

    #[pyo3(signature = (runs = 1))]
    fn sample(&self, py: Python<'_>, runs: usize) -> PyResult<Vec<PathBuf>> {
        let cfg = self.inner.clone();
        py.detach(|| pipeline::cmd_sample(&cfg, runs)).map_err(py_err)
    }

    /// Returns one JSON document per evaluated label.
    #[pyo3(signature = (runs = 1, oracle = false))]
    fn evaluate(&self, py: Python<'_>, runs: usize, oracle: bool) -> PyResult<Vec<String>> {
        let cfg = self.inner.clone();
        let reports = py.detach(|| pipeline::cmd_evaluate(&cfg, runs, oracle)).map_err(py_err)?;
        reports.iter().map(|r| serde_json::to_string(r).map_err(json_err)).collect()
    }

    #[pyo3(signature = (files = Vec::new()))]
    fn report(&self, files: Vec<PathBuf>) -> PyResult<PathBuf> {
        pipeline::cmd_report(&self.inner, &files).map_err(py_err)
    }
}

/// Langevin trajectory of `n_steps` steps, one row per saved frame.
/// `potential` is the JSON form of a potential, e.g.
/// `{"kind": "double_well1d", "a": 4.0}`.
#[pyfunction]
#[pyo3(signature = (potential, n_particles, dim, x0, n_steps, save_stride = 10, dt = 0.01, friction = 1.0, temperature = 1.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    potential: &str,
    n_particles: usize,
    dim: usize,
    x0: Vec<f64>,
    n_steps: u64,
    save_stride: u64,
    dt: f64,
    friction: f64,
    temperature: f64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let pot: Potential = serde_json::from_str(potential).map_err(json_err)?;
    let system = SystemSpec::uniform(n_particles, dim);
    let params = LangevinParams {
        friction,
        temperature,
        dt,
        n_steps,
        save_stride,
        seed,
    };
    let traj = py
        .detach(|| dynamics::simulate(&pot, &system, &params, &Conformation::new(x0)))
        .map_err(py_err)?;
    Ok(rows_of(&traj.frames))
}

/// Macrostate model over one or more trajectories.
#[pyclass(name = "Msm", module = "msm_emu_py")]
struct Msm {
    inner: MarkovStateModel,
}

#[pymethods]
impl Msm {
    #[staticmethod]
    #[pyo3(signature = (trajectories, n_particles, dim, n_micro = 20, n_macro = 3, lag = 10, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn build(
        py: Python<'_>,
        trajectories: Vec<Vec<Vec<f64>>>,
        n_particles: usize,
        dim: usize,
        n_micro: usize,
        n_macro: usize,
        lag: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let system = SystemSpec::uniform(n_particles, dim);
        let trajs: Vec<Trajectory> = trajectories
            .into_iter()
            .map(|rows| Trajectory {
                system: system.clone(),
                frames: frames_of(rows),
                save_interval: 1.0,
                temperature: 1.0,
                seed: 0,
            })
            .collect();
        let params = MsmParams {
            n_micro,
            n_macro,
            lag,
            ..MsmParams::default()
        };
        let inner = py.detach(|| msm::build_msm(&trajs, &params, seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: msm_emu::io::read_json(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn n_macro(&self) -> usize {
        self.inner.n_macro
    }

    #[getter]
    fn transition(&self) -> Vec<Vec<f64>> {
        self.inner.transition.clone()
    }

    #[getter]
    fn stationary(&self) -> Vec<f64> {
        self.inner.stationary.clone()
    }

    fn assign(&self, frame: Vec<f64>) -> PyResult<usize> {
        self.inner.assigner.assign_state(&Conformation::new(frame)).map_err(py_err)
    }

    fn occupancy(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        metrics::occupancy(&self.inner.assigner, &frames_of(frames), self.inner.n_macro).map_err(py_err)
    }

    fn recovery_jsd(&self, frames: Vec<Vec<f64>>, reference_pi: Vec<f64>) -> PyResult<f64> {
        metrics::msm_recovery_jsd(&self.inner.assigner, &frames_of(frames), &reference_pi).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }
}

/// A trained velocity field; sampling uses the EMA weights.
#[pyclass(name = "Model", module = "msm_emu_py")]
struct Model {
    state: TrainState,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            state: read_checkpoint(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.state.mode.name()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.state.live.len()
    }

    #[getter]
    fn epochs_done(&self) -> u64 {
        self.state.epochs_done
    }

    /// Draws `budget` frames from `x0` with "tree", "parallel" or
    /// "autoregressive". Returns `(frames, parents, depths)`.
    #[pyo3(signature = (scheme, x0, n_particles, dim, budget, seed = 0, first_layer = 200, n_steps = 50, heun = false))]
    #[allow(clippy::too_many_arguments)]
    fn sample(
        &self,
        py: Python<'_>,
        scheme: &str,
        x0: Vec<f64>,
        n_particles: usize,
        dim: usize,
        budget: usize,
        seed: u64,
        first_layer: usize,
        n_steps: usize,
        heun: bool,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<i64>, Vec<usize>)> {
        let system = SystemSpec::uniform(n_particles, dim);
        let field = NetField::from_state(&self.state, system.labels.clone()).map_err(py_err)?;
        let ctx = SampleContext {
            system: &system,
            ode: OdeOptions {
                n_steps,
                solver: if heun { Solver::Heun } else { Solver::Euler },
            },
            seed,
        };
        let x0 = Conformation::new(x0);
        let ens = py
            .detach(|| match scheme {
                "tree" => sampling::tree_sample(&field, &ctx, &x0, budget, first_layer),
                "parallel" => sampling::parallel_sample(&field, &ctx, &x0, budget),
                "autoregressive" => sampling::autoregressive_sample(&field, &ctx, &x0, budget),
                other => Err(Error::InvalidArgument(format!("unknown scheme {other:?}"))),
            })
            .map_err(py_err)?;
        Ok((
            rows_of(&ens.frames),
            ens.provenance.iter().map(|p| p.parent).collect(),
            ens.provenance.iter().map(|p| p.depth).collect(),
        ))
    }
}

#[pyfunction]
fn jsd(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    if p.len() != q.len() {
        return Err(DataError::new_err("distributions differ in length"));
    }
    Ok(metrics::jsd_discrete(&p, &q))
}

#[pyfunction]
#[pyo3(signature = (a, b, n_bins = 50))]
fn histogram_jsd(a: Vec<f64>, b: Vec<f64>, n_bins: usize) -> PyResult<f64> {
    let spec = metrics::HistogramSpec {
        n_bins,
        ..Default::default()
    };
    spec.validate().map_err(py_err)?;
    metrics::histogram_jsd(&a, &b, &spec).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (pi_model, pi_ref, kt = 1.0, floor = 1e-4))]
fn macrostate_mae(pi_model: Vec<f64>, pi_ref: Vec<f64>, kt: f64, floor: f64) -> PyResult<f64> {
    metrics::macrostate_mae(&pi_model, &pi_ref, kt, floor).map_err(py_err)
}

#[pymodule]
fn msm_emu_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("MsmEmuError", py.get_type::<MsmEmuError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<Msm>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(jsd, m)?)?;
    m.add_function(wrap_pyfunction!(histogram_jsd, m)?)?;
    m.add_function(wrap_pyfunction!(macrostate_mae, m)?)?;
    Ok(())
}
