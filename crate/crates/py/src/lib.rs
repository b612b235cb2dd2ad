//! Python bindings: session configs travel as JSON strings, frames and
//! trace samples as small read-only classes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nanotouch::curve::{fold_points, ForceCurveTrace};
use nanotouch::scene::{lj_force, LJParams, NanoScene};
use nanotouch::session::{self, flags, RunOptions, SessionConfig, SessionError};

fn err(e: SessionError) -> PyErr {
    match e {
        SessionError::Config(_) | SessionError::Json(_) | SessionError::Recording { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn config(json: Option<&str>) -> PyResult<SessionConfig> {
    match json {
        Some(text) => SessionConfig::from_json(text).map_err(err),
        None => Ok(SessionConfig::default()),
    }
}

/// Default session config as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&SessionConfig::default()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyclass(name = "Frame", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFrame(session::Frame);

#[pymethods]
impl PyFrame {
    #[getter]
    fn tick(&self) -> u64 {
        self.0.tick
    }
    #[getter]
    fn t(&self) -> f64 {
        self.0.t
    }
    #[getter]
    fn key_pos(&self) -> f64 {
        self.0.key_pos
    }
    #[getter]
    fn key_force(&self) -> f64 {
        self.0.key_force
    }
    #[getter]
    fn piezo_z(&self) -> f64 {
        self.0.piezo_z
    }
    #[getter]
    fn tip_z(&self) -> f64 {
        self.0.tip_z
    }
    #[getter]
    fn deflection(&self) -> f64 {
        self.0.deflection
    }
    #[getter]
    fn tip_force_nano(&self) -> f64 {
        self.0.tip_force_nano
    }
    #[getter]
    fn surface_displacements(&self) -> Vec<f64> {
        self.0.surface_displacements.clone()
    }
    #[getter]
    fn well_index(&self) -> Option<u32> {
        self.0.well_index
    }
    #[getter]
    fn flags(&self) -> u32 {
        self.0.flags
    }
    #[getter]
    fn faulted(&self) -> bool {
        self.0.has(flags::FAULT)
    }
    fn to_json(&self) -> String {
        self.0.to_json()
    }
    fn __repr__(&self) -> String {
        format!(
            "Frame(tick={}, key_pos={:e}, key_force={:e}, flags={})",
            self.0.tick, self.0.key_pos, self.0.key_force, self.0.flags
        )
    }
}

/// Tick-by-tick session engine.
#[pyclass(name = "Engine", unsendable)]
struct PyEngine(session::Engine);

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (config_json=None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        Ok(Self(session::Engine::new(&config(config_json)?).map_err(err)?))
    }

    /// Advances one tick. `None` re-uses the last key position.
    #[pyo3(signature = (key_pos=None))]
    fn tick(&mut self, key_pos: Option<f64>) -> PyFrame {
        PyFrame(self.0.tick(key_pos, 0))
    }

    /// Advances `n` ticks at a fixed key position and returns the last frame.
    fn run(&mut self, key_pos: f64, n: u64) -> PyFrame {
        for _ in 0..n {
            if self.0.advance(Some(key_pos), 0) & flags::FAULT != 0 {
                break;
            }
        }
        PyFrame(self.0.frame(0))
    }

    #[getter]
    fn ticks(&self) -> u64 {
        self.0.ticks()
    }

    #[getter]
    fn faulted(&self) -> bool {
        self.0.fault().is_some()
    }

    #[getter]
    fn passivity_active(&self) -> bool {
        self.0.monitor().is_active()
    }
}

/// Trace of a headless sweep.
#[pyclass(name = "SweepResult", frozen)]
struct PySweepResult {
    trace: ForceCurveTrace,
    #[pyo3(get)]
    ticks: u64,
    #[pyo3(get)]
    faulted: bool,
    #[pyo3(get)]
    events_json: String,
}

#[pymethods]
impl PySweepResult {
    fn __len__(&self) -> usize {
        self.trace.samples.len()
    }

    /// Columns `(piezo_z, tip_z, deflection, tip_force)`.
    fn columns(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let s = &self.trace.samples;
        (
            s.iter().map(|x| x.piezo_z).collect(),
            s.iter().map(|x| x.tip_z).collect(),
            s.iter().map(|x| x.deflection).collect(),
            s.iter().map(|x| x.tip_force).collect(),
        )
    }

    /// `True` for approach samples, `False` for retract.
    fn approach_mask(&self) -> Vec<bool> {
        self.trace.samples.iter().map(|x| x.phase == nanotouch::curve::Phase::Approach).collect()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut out = Vec::new();
        self.trace.write_csv(&mut out).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        String::from_utf8(out).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Runs an approach-retract sweep with the config's sweep settings.
#[pyfunction]
#[pyo3(signature = (config_json=None))]
fn sweep(py: Python<'_>, config_json: Option<&str>) -> PyResult<PySweepResult> {
    let mut cfg = config(config_json)?;
    cfg.mode = session::Mode::Sweep;
    cfg.sweep.get_or_insert_with(Default::default);
    cfg.record_path = None;
    let summary = py
        .detach(|| session::run_session(&cfg, RunOptions::default()))
        .map_err(err)?;
    let events = summary.events.expect("sweep yields events");
    Ok(PySweepResult {
        trace: summary.trace.expect("sweep yields a trace"),
        ticks: summary.ticks,
        faulted: summary.fault.is_some(),
        events_json: events.to_json().map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
    })
}

/// Runs a scripted or sweep session to completion (recording if the config
/// says so); returns `(ticks, faulted, last_frame)`.
#[pyfunction]
#[pyo3(signature = (config_json, duration=None))]
fn run(py: Python<'_>, config_json: &str, duration: Option<f64>) -> PyResult<(u64, bool, Option<PyFrame>)> {
    let cfg = config(Some(config_json))?;
    if cfg.mode == session::Mode::Interactive && duration.is_none() && cfg.duration.is_none() {
        return Err(PyValueError::new_err("interactive runs need a duration"));
    }
    let summary = py
        .detach(|| session::run_session(&cfg, RunOptions { duration, ..Default::default() }))
        .map_err(err)?;
    Ok((summary.ticks, summary.fault.is_some(), summary.last_frame.map(PyFrame)))
}

/// Piezo heights of the snap-in and snap-off folds, or `None` without
/// hysteresis.
#[pyfunction]
#[pyo3(signature = (config_json=None))]
fn folds(config_json: Option<&str>) -> PyResult<Option<(f64, f64)>> {
    let cfg = config(config_json)?;
    let scene = NanoScene::from_params(&cfg.scene_params(), cfg.timestep(), cfg.coupling.piezo_top)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(fold_points(scene.law().as_ref(), scene.kappa()).map(|(a, b)| (a.piezo_z, b.piezo_z)))
}

/// Lennard-Jones force (N) at gap `z` (m) for a well of `depth` (J).
#[pyfunction]
fn lj(z: f64, depth: f64, z_eq: f64, cutoff: f64) -> PyResult<f64> {
    lj_force(z, &LJParams::from_well(depth, z_eq, cutoff)).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Regenerates a recording under a config; returns the frames and the index
/// of the first differing frame.
#[pyfunction]
#[pyo3(signature = (path, config_json=None))]
fn replay(path: &str, config_json: Option<&str>) -> PyResult<(Vec<PyFrame>, Option<usize>)> {
    let cfg = config(config_json)?;
    let rec = session::read_recording(path).map_err(err)?;
    let frames = session::replay(&cfg, &rec.frames).map_err(err)?;
    let diff = session::first_difference(&rec.frames, &frames);
    Ok((frames.into_iter().map(PyFrame).collect(), diff))
}

#[pymodule]
fn nanotouch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrame>()?;
    m.add_class::<PyEngine>()?;
    m.add_class::<PySweepResult>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(folds, m)?)?;
    m.add_function(wrap_pyfunction!(lj, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add("FLAG_FAULT", flags::FAULT)?;
    m.add("FLAG_ACTIVE", flags::ACTIVE)?;
    m.add("FLAG_DROPOUT", flags::DROPOUT)?;
    m.add("FLAG_OVERRUN", flags::OVERRUN)?;
    Ok(())
}
