//! Python bindings: `odmd_cpd.Config`, `odmd_cpd.Detector` and the data,
//! scoring and rank helpers.
//!
//! Matrices cross the boundary as sequences of samples, one row per time
//! step (the layout of a `(n, d)` NumPy array).

use nalgebra::DMatrix;
use odmd_cpd::cli::config::{parse_batch_mode, parse_score_basis, parse_score_mode};
use odmd_cpd::{
    CpdConfig, CpdEngine, CpdError, CpdScore, FaultSchedule, HankelConfig, NabProfile, RawBatch, StepsSpec,
    TwoTankSpec, WindowLayout,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

pub fn to_py_err(e: CpdError) -> PyErr {
    match e.root() {
        CpdError::Config(_) | CpdError::Data(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Samples-by-features rows to a `features × samples` matrix.
pub fn samples_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CpdError> {
    let d = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != d) {
        return Err(CpdError::Data(format!("sample {i} has {} values, expected {d}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(d, rows.len(), |i, k| rows[k][i]))
}

pub fn matrix_to_samples(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Detector settings.
#[pyclass(module = "odmd_cpd", name = "Config", skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: CpdConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (
        base, test, learning, *, gap = 0, delays = 0, delay_stride = 1,
        control_delays = None, control_stride = None, state_rank = 2, control_rank = 0,
        threshold = 0.0, score_mode = "both", score_basis = "pod", batch_mode = "per_snapshot",
        rho = 1e4, svd_tol = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        base: usize,
        test: usize,
        learning: usize,
        gap: usize,
        delays: usize,
        delay_stride: usize,
        control_delays: Option<usize>,
        control_stride: Option<usize>,
        state_rank: usize,
        control_rank: usize,
        threshold: f64,
        score_mode: &str,
        score_basis: &str,
        batch_mode: &str,
        rho: f64,
        svd_tol: Option<f64>,
    ) -> PyResult<Self> {
        let build = || -> Result<CpdConfig, CpdError> {
            let layout = WindowLayout::new(base, gap, test, learning)?;
            let mut cfg = CpdConfig::new(layout, HankelConfig::new(delays, delay_stride)?, state_rank, control_rank);
            if control_delays.is_some() || control_stride.is_some() {
                cfg.control_hankel = Some(HankelConfig::new(
                    control_delays.unwrap_or(delays),
                    control_stride.unwrap_or(delay_stride),
                )?);
            }
            cfg.threshold = threshold;
            cfg.score_mode = parse_score_mode(score_mode)?;
            cfg.score_basis = parse_score_basis(score_basis)?;
            cfg.batch_mode = parse_batch_mode(batch_mode)?;
            cfg.rho = rho;
            cfg.svd_tol = svd_tol;
            Ok(cfg)
        };
        build().map(|inner| Self { inner }).map_err(to_py_err)
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn windows(&self) -> (usize, usize, usize, usize) {
        let l = self.inner.layout;
        (l.base, l.gap, l.test, l.learning)
    }

    fn __repr__(&self) -> String {
        let l = self.inner.layout;
        format!(
            "Config(base={}, gap={}, test={}, learning={}, delays={}, state_rank={}, control_rank={}, threshold={})",
            l.base,
            l.gap,
            l.test,
            l.learning,
            self.inner.hankel.depth,
            self.inner.state_rank,
            self.inner.control_rank,
            self.inner.threshold
        )
    }
}

/// Scores of one detection pass.
#[pyclass(module = "odmd_cpd", name = "Score", frozen, get_all, skip_from_py_object)]
#[derive(Clone, Copy)]
pub struct PyScore {
    step: usize,
    timestamp: f64,
    base_error: f64,
    test_error: f64,
    ratio: f64,
    difference: f64,
    alarm: bool,
}

impl From<CpdScore> for PyScore {
    fn from(s: CpdScore) -> Self {
        Self {
            step: s.step,
            timestamp: s.timestamp,
            base_error: s.base_error,
            test_error: s.test_error,
            ratio: s.ratio,
            difference: s.difference,
            alarm: s.alarm,
        }
    }
}

#[pymethods]
impl PyScore {
    fn __repr__(&self) -> String {
        format!(
            "Score(step={}, E_B={:e}, E_T={:e}, ratio={:.4}, alarm={})",
            self.step, self.base_error, self.test_error, self.ratio, self.alarm
        )
    }
}

/// Streaming detector fed with snapshot pairs.
#[pyclass(module = "odmd_cpd", name = "Detector")]
pub struct PyDetector {
    engine: CpdEngine,
}

#[pymethods]
impl PyDetector {
    #[new]
    #[pyo3(signature = (config, state_dim, control_dim = 0))]
    fn new(config: &PyConfig, state_dim: usize, control_dim: usize) -> PyResult<Self> {
        let engine = CpdEngine::new(config.inner.clone(), state_dim, control_dim).map_err(to_py_err)?;
        Ok(Self { engine })
    }

    /// Processes a batch of pairs `(x_t, x_{t+1})` with controls `u_t`.
    #[pyo3(signature = (states, next_states, controls = None, timestamps = None))]
    fn step(
        &mut self,
        states: Vec<Vec<f64>>,
        next_states: Vec<Vec<f64>>,
        controls: Option<Vec<Vec<f64>>>,
        timestamps: Option<Vec<f64>>,
    ) -> PyResult<Vec<PyScore>> {
        let seen = self.engine.pairs_seen();
        let batch = || -> Result<RawBatch, CpdError> {
            let x = samples_to_matrix(&states)?;
            let y = samples_to_matrix(&next_states)?;
            let u = match &controls {
                Some(c) => samples_to_matrix(c)?,
                None => DMatrix::zeros(0, x.ncols()),
            };
            let ts = timestamps.clone().unwrap_or_else(|| (seen..seen + x.ncols()).map(|t| t as f64).collect());
            RawBatch::new(x, y, u, ts)
        };
        let batch = batch().map_err(to_py_err)?;
        let scores = self.engine.step(&batch).map_err(to_py_err)?;
        Ok(scores.into_iter().map(PyScore::from).collect())
    }

    /// Replays a whole series (`n` samples) in batches of `batch_size` pairs.
    #[pyo3(signature = (series, controls = None, batch_size = 1))]
    fn run(
        &mut self,
        series: Vec<Vec<f64>>,
        controls: Option<Vec<Vec<f64>>>,
        batch_size: usize,
    ) -> PyResult<Vec<PyScore>> {
        if batch_size == 0 {
            return Err(PyValueError::new_err("batch_size must be positive"));
        }
        if series.len() < 2 {
            return Ok(Vec::new());
        }
        let x = samples_to_matrix(&series).map_err(to_py_err)?;
        let u = match &controls {
            Some(c) => samples_to_matrix(c).map_err(to_py_err)?,
            None => DMatrix::zeros(0, x.ncols()),
        };
        let pairs = RawBatch::from_series(&x, &u, self.engine.pairs_seen()).map_err(to_py_err)?;
        let mut out = Vec::new();
        let mut start = 0;
        while start < pairs.len() {
            let len = batch_size.min(pairs.len() - start);
            let scores = self.engine.step(&pairs.slice(start, len)).map_err(to_py_err)?;
            out.extend(scores.into_iter().map(PyScore::from));
            start += len;
        }
        Ok(out)
    }

    #[getter]
    fn initialized(&self) -> bool {
        self.engine.is_initialized()
    }

    #[getter]
    fn pairs_seen(&self) -> usize {
        self.engine.pairs_seen()
    }

    #[getter]
    fn embedded_rows(&self) -> usize {
        self.engine.embedded_rows()
    }

    /// Current scoring basis, one row per embedded coordinate.
    fn basis(&self) -> Option<Vec<Vec<f64>>> {
        self.engine.basis().map(|u| (0..u.nrows()).map(|i| u.row(i).iter().copied().collect()).collect())
    }

    /// Eigenvalues of the reduced state operator as `(re, im)` pairs.
    fn eigenvalues(&self) -> PyResult<Vec<(f64, f64)>> {
        let modes = self.engine.modes().map_err(to_py_err)?;
        Ok(modes.eigenvalues.iter().map(|z| (z.re, z.im)).collect())
    }
}

/// Piecewise-constant steps benchmark: `(series, labels)`.
#[pyfunction]
#[pyo3(signature = (n = 10_000, spacing = 1000, seed = 0, sigma = 0.1))]
fn gen_steps(n: usize, spacing: usize, seed: u64, sigma: f64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let spec = StepsSpec {
        n,
        spacing,
        seed,
        sigma,
        ..Default::default()
    };
    let d = odmd_cpd::gen_steps(&spec).map_err(to_py_err)?;
    Ok((matrix_to_samples(&d.states), d.labels))
}

/// Two-tank benchmark: `(levels, inflow, labels)`.
#[pyfunction]
#[pyo3(signature = (n = 12_000, seed = 0, noise_var = None, faults = true))]
fn simulate_two_tanks(
    n: usize,
    seed: u64,
    noise_var: Option<f64>,
    faults: bool,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>)> {
    let mut spec = TwoTankSpec {
        n,
        seed,
        ..Default::default()
    };
    if let Some(v) = noise_var {
        spec.noise_var = v;
    }
    if !faults {
        spec.faults = FaultSchedule::none();
    }
    let d = odmd_cpd::simulate_two_tanks(&spec).map_err(to_py_err)?;
    Ok((matrix_to_samples(&d.states), matrix_to_samples(&d.controls), d.labels))
}

/// Normalized NAB score of alarm indices against labeled change points.
#[pyfunction]
#[pyo3(signature = (alarms, labels, span, window = None, profile = "standard"))]
fn nab_score(alarms: Vec<usize>, labels: Vec<usize>, span: usize, window: Option<usize>, profile: &str) -> PyResult<f64> {
    let p = NabProfile::by_name(profile).ok_or_else(|| PyValueError::new_err(format!("unknown profile {profile:?}")))?;
    odmd_cpd::nab_score(&alarms, &labels, span, window, &p).map_err(to_py_err)
}

/// Rank of a snapshot matrix by hard thresholding: `(rank, cutoff, singular values)`.
///
/// `snapshots` holds one snapshot per row.
#[pyfunction]
fn suggest_rank(snapshots: Vec<Vec<f64>>) -> PyResult<(usize, f64, Vec<f64>)> {
    let x = samples_to_matrix(&snapshots).map_err(to_py_err)?;
    let s = odmd_cpd::suggest_rank(&x).map_err(to_py_err)?;
    Ok((s.rank, s.threshold, s.singular_values))
}

#[pymodule]
#[pyo3(name = "odmd_cpd")]
fn odmd_cpd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyScore>()?;
    m.add_class::<PyDetector>()?;
    m.add_function(wrap_pyfunction!(gen_steps, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_two_tanks, m)?)?;
    m.add_function(wrap_pyfunction!(nab_score, m)?)?;
    m.add_function(wrap_pyfunction!(suggest_rank, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
