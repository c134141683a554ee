//! Python bindings. Errors surface as `PegInsertError` with the message
//! prefixed by the error kind, e.g. `InvalidTolerance: ...`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use peginsert_core::bench::{self, BenchConfig, BenchReport};
use peginsert_core::geometry::{self, Vec3};
use peginsert_core::perception::io::{load_model, save_model};
use peginsert_core::perception::{RegressorModel, TrainHyper};
use peginsert_core::pipeline::{self, CollectionConfig, ConfigureOptions, Decision, DeploymentGate, InsertMode, WorldFactory};
use peginsert_core::search;
use peginsert_core::seeds;
use peginsert_core::servoing::{self, ServoConfig};
use peginsert_core::sim::{self, ComponentStyle, Observation, TimingModel, WorldConfig, WorldState};

create_exception!(peginsert, PegInsertError, PyException);

fn err(kind: &str, e: impl std::fmt::Display) -> PyErr {
    PegInsertError::new_err(format!("{kind}: {e}"))
}

macro_rules! domain {
    ($e:expr) => {
        $e.map_err(|e| err(e.kind(), &e))
    };
}

fn v3(t: (f64, f64, f64)) -> Vec3 {
    Vec3::new(t.0, t.1, t.2)
}

fn t3(v: &Vec3) -> (f64, f64, f64) {
    (v.x, v.y, v.z)
}

fn style(name: &str) -> PyResult<ComponentStyle> {
    name.parse().map_err(|e| err("InvalidConfig", e))
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| err("Format", e))
}

/// Unit error direction `l × v / |l × v|`.
#[pyfunction]
fn error_direction(l: (f64, f64, f64), view: (f64, f64, f64)) -> PyResult<(f64, f64, f64)> {
    domain!(geometry::error_direction(&v3(l), &v3(view))).map(|u| t3(&u))
}

/// Minimum-norm least-squares error from per-camera directions and scalar
/// errors. Returns `(error, rank, ill_conditioned)`.
#[pyfunction]
fn reconstruct_error(dirs: Vec<(f64, f64, f64)>, qs: Vec<f64>) -> PyResult<((f64, f64, f64), usize, bool)> {
    let dirs: Vec<Vec3> = dirs.into_iter().map(v3).collect();
    let rec = domain!(geometry::reconstruct_error(&dirs, &qs))?;
    Ok((t3(&rec.error), rec.rank, rec.is_ill_conditioned()))
}

/// Spiral search offsets in mm, in visiting order.
#[pyfunction]
fn generate_pattern(tolerance: f64, max_radius: f64) -> PyResult<Vec<(f64, f64)>> {
    let p = domain!(search::generate_pattern(tolerance, max_radius))?;
    Ok(p.offsets.iter().map(|o| (o[0], o[1])).collect())
}

/// Dense-sampling covering radius of the pattern over a disc.
#[pyfunction]
#[pyo3(signature = (tolerance, max_radius, region_radius, grid_step=None))]
fn covering_radius(tolerance: f64, max_radius: f64, region_radius: f64, grid_step: Option<f64>) -> PyResult<f64> {
    let p = domain!(search::generate_pattern(tolerance, max_radius))?;
    Ok(search::covering_radius(&p, region_radius, grid_step.unwrap_or(tolerance / 10.0)))
}

#[pyclass(name = "Observation", module = "peginsert", skip_from_py_object)]
#[derive(Clone)]
struct PyObservation {
    inner: Observation,
}

#[pymethods]
impl PyObservation {
    #[getter]
    fn resolution(&self) -> u32 {
        self.inner.resolution
    }

    #[getter]
    fn camera_index(&self) -> usize {
        self.inner.camera_index
    }

    /// Row-major grayscale values in `[0, 1]`.
    #[getter]
    fn pixels(&self) -> Vec<f32> {
        self.inner.pixels.clone()
    }

    #[getter]
    fn true_label(&self) -> f64 {
        self.inner.true_label
    }

    fn pgm(&self) -> PyResult<Vec<u8>> {
        let mut buf = Vec::new();
        self.inner.write_pgm(&mut buf).map_err(|e| err("IoError", e))?;
        Ok(buf)
    }
}

#[pyclass(name = "World", module = "peginsert")]
struct PyWorld {
    inner: WorldState,
    timing: TimingModel,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (seed=0, style="PH", tolerance=0.1, extra_error_radius=1.0, hole_sigma=0.01, grasp_sigma=0.01))]
    fn new(seed: u64, style: &str, tolerance: f64, extra_error_radius: f64, hole_sigma: f64, grasp_sigma: f64) -> PyResult<Self> {
        let cfg = WorldConfig {
            seed,
            component_style: self::style(style)?,
            tolerance,
            extra_error_radius,
            hole_uncertainty_sigma: hole_sigma,
            grasp_uncertainty_sigma: grasp_sigma,
            ..Default::default()
        };
        Ok(PyWorld { inner: domain!(sim::new_world(cfg))?, timing: TimingModel::default() })
    }

    #[getter]
    fn tcp(&self) -> (f64, f64, f64) {
        t3(&self.inner.tcp)
    }

    #[getter]
    fn true_hole(&self) -> (f64, f64, f64) {
        t3(&self.inner.true_hole)
    }

    #[getter]
    fn nominal_hole(&self) -> (f64, f64, f64) {
        t3(&self.inner.nominal_hole)
    }

    #[getter]
    fn clock(&self) -> f64 {
        self.inner.clock
    }

    #[getter]
    fn n_cameras(&self) -> usize {
        self.inner.cameras.len()
    }

    /// Ground-truth in-plane error of the current TCP, mm.
    fn in_plane_error(&self) -> (f64, f64, f64) {
        t3(&self.inner.in_plane_error(&self.inner.tcp))
    }

    fn render(&self, camera: usize) -> PyResult<PyObservation> {
        let tcp = self.inner.tcp;
        Ok(PyObservation { inner: domain!(sim::render(&self.inner, camera, &tcp))? })
    }

    /// Runs visual servoing with `models` (one per camera). Returns the
    /// true residual after each iteration.
    #[pyo3(signature = (models, n_iters=3, seed=0))]
    fn servo(&mut self, models: Vec<PyRef<'_, PyModel>>, n_iters: usize, seed: u64) -> PyResult<Vec<f64>> {
        let models = models.iter().map(|m| m.inner.clone()).collect();
        let cfg = ServoConfig::for_world(&self.inner, models, n_iters, self.timing);
        let run = domain!(servoing::visual_servo(&mut self.inner, &cfg, &mut seeds::rng(seed, &[])))?;
        Ok(run.residuals)
    }

    /// Spiral search from the current TCP. Returns the outcome as a dict.
    #[pyo3(signature = (max_radius=1.1))]
    fn spiral_insert(&mut self, py: Python<'_>, max_radius: f64) -> PyResult<Py<PyAny>> {
        let p = domain!(search::generate_pattern(self.inner.tolerance(), max_radius))?;
        let here = self.inner.tcp;
        let out = sim::spiral_insert(&mut self.inner, here, &p, &self.timing);
        json_to_py(py, &to_json(&out)?)
    }
}

#[pyclass(name = "Model", module = "peginsert", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: RegressorModel,
}

#[pymethods]
impl PyModel {
    /// Noisy ground-truth regressor for simulation studies.
    #[staticmethod]
    #[pyo3(signature = (resolution=64, noise_sigma=0.0))]
    fn oracle(resolution: u32, noise_sigma: f64) -> Self {
        PyModel { inner: RegressorModel::oracle(resolution, noise_sigma) }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: domain!(load_model(&path))? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        domain!(save_model(&self.inner, &path))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn resolution(&self) -> u32 {
        self.inner.resolution()
    }

    #[pyo3(signature = (observation, seed=0))]
    fn predict(&self, observation: &PyObservation, seed: u64) -> PyResult<f64> {
        domain!(self.inner.predict(&observation.inner, &mut seeds::rng(seed, &[])))
    }
}

#[pyclass(name = "Configuration", module = "peginsert")]
struct PyConfiguration {
    models: BTreeMap<ComponentStyle, Vec<RegressorModel>>,
    decisions: BTreeMap<ComponentStyle, Decision>,
    summary: String,
}

#[pymethods]
impl PyConfiguration {
    /// `"deploy"` if every style passed the gate.
    #[getter]
    fn decision(&self) -> &'static str {
        if !self.decisions.is_empty() && self.decisions.values().all(|d| *d == Decision::Deploy) {
            "deploy"
        } else {
            "collect_more"
        }
    }

    fn style_decision(&self, style: &str) -> PyResult<&'static str> {
        let s = self::style(style)?;
        match self.decisions.get(&s) {
            Some(Decision::Deploy) => Ok("deploy"),
            Some(Decision::CollectMore) => Ok("collect_more"),
            None => Err(err("InvalidConfig", format!("style {s} was not configured"))),
        }
    }

    fn models(&self, style: &str) -> PyResult<Vec<PyModel>> {
        let s = self::style(style)?;
        let m = self.models.get(&s).ok_or_else(|| err("ModelsNotDeployed", format!("no models for {s}")))?;
        Ok(m.iter().map(|m| PyModel { inner: m.clone() }).collect())
    }

    /// Per-model validation metrics and split information.
    fn reports(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &self.summary)
    }
}

/// Collects data, trains one model per camera and gates deployment for
/// each style.
#[pyfunction]
#[pyo3(signature = (styles=None, seed=0, n_insertions=10, samples_per_insertion=100, train_insertions=8, tolerance=0.1))]
fn configure(
    py: Python<'_>,
    styles: Option<Vec<String>>,
    seed: u64,
    n_insertions: usize,
    samples_per_insertion: usize,
    train_insertions: usize,
    tolerance: f64,
) -> PyResult<PyConfiguration> {
    let styles: Vec<ComponentStyle> = match styles {
        Some(v) => v.iter().map(|s| style(s)).collect::<PyResult<_>>()?,
        None => ComponentStyle::ALL.to_vec(),
    };
    let wc = WorldConfig { seed, tolerance, ..Default::default() };
    let cc = CollectionConfig { n_insertions, samples_per_insertion, train_insertions, ..Default::default() };
    let hyper = TrainHyper { seed, ..Default::default() };
    let opts = ConfigureOptions { split_seed: seed, ..Default::default() };
    let pattern = domain!(search::generate_pattern(tolerance, 1.0))?;
    let conf = py.detach(|| {
        pipeline::configure(
            &WorldFactory::new(wc),
            &styles,
            &cc,
            &pattern,
            &hyper,
            &DeploymentGate::for_tolerance(tolerance),
            &opts,
        )
    });
    let conf = domain!(conf)?;
    let summary: Vec<_> = conf
        .styles
        .iter()
        .map(|s| {
            serde_json::json!({
                "style": s.style,
                "decision": s.decision,
                "train_insertions": s.train_insertions,
                "val_insertions": s.val_insertions,
                "models": s.reports,
            })
        })
        .collect();
    Ok(PyConfiguration {
        decisions: conf.styles.iter().map(|s| (s.style, s.decision)).collect(),
        models: conf.styles.iter().filter(|s| s.decision == Decision::Deploy).map(|s| (s.style, s.models.clone())).collect(),
        summary: to_json(&summary)?,
    })
}

#[pyclass(name = "BenchReport", module = "peginsert")]
struct PyBenchReport {
    inner: BenchReport,
}

#[pymethods]
impl PyBenchReport {
    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &bench::summary_json(&self.inner))
    }

    fn rows(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &to_json(&self.inner.rows)?)
    }

    fn table_csv(&self) -> String {
        bench::table_csv(&self.inner)
    }

    fn scatter_csv(&self) -> String {
        bench::scatter_csv(&self.inner)
    }

    /// Writes table.csv, scatter.csv, summary.json and scatter.svg.
    fn emit(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        domain!(bench::emit_report(&self.inner, &dir))
    }
}

/// Runs the insertion benchmark. Servo mode needs `configuration` (or
/// oracle models when `oracle_sigma` is given).
#[pyfunction]
#[pyo3(signature = (configuration=None, styles=None, insertions=10, modes=None, seed=0, oracle_sigma=None))]
fn run_benchmark(
    py: Python<'_>,
    configuration: Option<PyRef<'_, PyConfiguration>>,
    styles: Option<Vec<String>>,
    insertions: usize,
    modes: Option<Vec<String>>,
    seed: u64,
    oracle_sigma: Option<f64>,
) -> PyResult<PyBenchReport> {
    let styles: Vec<ComponentStyle> = match styles {
        Some(v) => v.iter().map(|s| style(s)).collect::<PyResult<_>>()?,
        None => ComponentStyle::ALL.to_vec(),
    };
    let modes: Vec<InsertMode> = match modes {
        Some(v) => v.iter().map(|m| m.parse().map_err(|e| err("InvalidConfig", e))).collect::<PyResult<_>>()?,
        None => InsertMode::ALL.to_vec(),
    };
    let wc = WorldConfig::default();
    let models: BTreeMap<ComponentStyle, Vec<RegressorModel>> = match (&configuration, oracle_sigma) {
        (Some(c), _) => c.models.clone(),
        (None, Some(sigma)) => {
            let cams = domain!(wc.build_cameras())?;
            styles.iter().map(|&s| (s, cams.iter().map(|c| RegressorModel::oracle(c.resolution, sigma)).collect())).collect()
        }
        (None, None) => BTreeMap::new(),
    };
    let cfg = BenchConfig { component_styles: styles, insertions_per_style_per_mode: insertions, modes, seed, ..Default::default() };
    let report = py.detach(|| bench::run_benchmark(&cfg, &wc, &models));
    Ok(PyBenchReport { inner: domain!(report)? })
}

/// Runs the command-line interface with `argv` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn cli_main(py: Python<'_>, argv: Vec<String>) -> i32 {
    let full: Vec<String> = std::iter::once("peginsert".to_string()).chain(argv).collect();
    py.detach(|| peginsert_core::cli::run(full))
}

#[pymodule]
fn peginsert(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PegInsertError", m.py().get_type::<PegInsertError>())?;
    m.add_function(wrap_pyfunction!(error_direction, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_error, m)?)?;
    m.add_function(wrap_pyfunction!(generate_pattern, m)?)?;
    m.add_function(wrap_pyfunction!(covering_radius, m)?)?;
    m.add_function(wrap_pyfunction!(configure, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(cli_main, m)?)?;
    m.add_class::<PyObservation>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyConfiguration>()?;
    m.add_class::<PyBenchReport>()?;
    m.add("STYLES", ComponentStyle::ALL.iter().map(|s| s.name()).collect::<Vec<_>>())?;
    Ok(())
}
