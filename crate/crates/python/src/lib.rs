//! Python bindings for `feedback_ou`.

use num_complex::Complex64;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use feedback_ou::analytic;
use feedback_ou::ensemble;
use feedback_ou::integrator;
use feedback_ou::moments::{self, Segment, Sign};
use feedback_ou::noise;

fn py_err(e: feedback_ou::Error) -> PyErr {
    match e {
        feedback_ou::Error::QuadratureFailure { .. } => PyArithmeticError::new_err(e.to_string()),
        feedback_ou::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "SystemParams", frozen, from_py_object)]
#[derive(Clone)]
struct PySystemParams(feedback_ou::SystemParams);

#[pymethods]
impl PySystemParams {
    #[new]
    #[pyo3(signature = (decay_rate, delay, phase, noise_strength))]
    fn new(decay_rate: f64, delay: f64, phase: f64, noise_strength: f64) -> PyResult<Self> {
        feedback_ou::SystemParams::new(decay_rate, delay, phase, noise_strength)
            .map(Self)
            .map_err(py_err)
    }

    /// Parameters with `τ = 1` from `Γτ`, `φ` and `γτ`.
    #[staticmethod]
    fn dimensionless(decay_tau: f64, phase: f64, noise_tau: f64) -> PyResult<Self> {
        feedback_ou::SystemParams::dimensionless(decay_tau, phase, noise_tau)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn decay_rate(&self) -> f64 {
        self.0.decay_rate()
    }

    #[getter]
    fn delay(&self) -> f64 {
        self.0.delay()
    }

    #[getter]
    fn phase(&self) -> f64 {
        self.0.phase()
    }

    #[getter]
    fn noise_strength(&self) -> f64 {
        self.0.noise_strength()
    }

    fn with_phase(&self, phase: f64) -> PyResult<Self> {
        self.0.with_phase(phase).map(Self).map_err(py_err)
    }

    fn noiseless(&self) -> Self {
        Self(self.0.noiseless())
    }

    fn __repr__(&self) -> String {
        format!(
            "SystemParams(decay_rate={}, delay={}, phase={}, noise_strength={})",
            self.0.decay_rate(),
            self.0.delay(),
            self.0.phase(),
            self.0.noise_strength()
        )
    }
}

#[pyclass(name = "NoisePath", frozen)]
struct PyNoisePath(noise::NoisePath);

#[pymethods]
impl PyNoisePath {
    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed()
    }

    fn __len__(&self) -> usize {
        self.0.n_steps()
    }

    fn increments(&self) -> Vec<f64> {
        self.0.increments().to_vec()
    }

    fn cumulative(&self) -> Vec<f64> {
        self.0.cumulative().to_vec()
    }

    /// `∫_a^b F dt'` for grid-aligned `a ≤ b`.
    fn phase_integral(&self, a: f64, b: f64) -> PyResult<f64> {
        self.0.phase_integral(a, b).map_err(py_err)
    }
}

#[pyclass(name = "EnsembleStats", frozen)]
struct PyEnsembleStats(ensemble::EnsembleStats);

#[pymethods]
impl PyEnsembleStats {
    #[getter]
    fn count(&self) -> u64 {
        self.0.count()
    }

    fn times(&self) -> Vec<f64> {
        self.0.times().to_vec()
    }

    fn mean(&self) -> Vec<f64> {
        self.0.mean().to_vec()
    }

    fn stderr(&self) -> Vec<f64> {
        self.0.stderr()
    }

    fn merge(&self, other: &PyEnsembleStats) -> PyResult<Self> {
        self.0.merge(&other.0).map(Self).map_err(py_err)
    }
}

#[pyfunction]
#[pyo3(signature = (seed, n_steps, dt, gamma))]
fn generate_path(seed: u64, n_steps: usize, dt: f64, gamma: f64) -> PyResult<PyNoisePath> {
    noise::generate_path(seed, n_steps, dt, gamma)
        .map(PyNoisePath)
        .map_err(py_err)
}

/// Amplitude samples `P(k·dt)` for `k = 0..=t_max/dt`.
#[pyfunction]
#[pyo3(signature = (params, dt, t_max, path = None, p0 = Complex64::new(1.0, 0.0)))]
fn integrate(
    params: &PySystemParams,
    dt: f64,
    t_max: f64,
    path: Option<&PyNoisePath>,
    p0: Complex64,
) -> PyResult<Vec<Complex64>> {
    integrator::integrate(&params.0, path.map(|p| &p.0), dt, t_max, p0)
        .map(|t| t.values().to_vec())
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (params, n_paths, master_seed, dt, t_max))]
fn run_ensemble(
    py: Python<'_>,
    params: &PySystemParams,
    n_paths: u64,
    master_seed: u64,
    dt: f64,
    t_max: f64,
) -> PyResult<PyEnsembleStats> {
    let p = params.0;
    py.detach(|| ensemble::run_ensemble(&p, n_paths, master_seed, dt, t_max))
        .map(PyEnsembleStats)
        .map_err(py_err)
}

#[pyfunction]
fn wigner_weisskopf_population(t: f64, params: &PySystemParams) -> f64 {
    analytic::wigner_weisskopf_population(t, &params.0)
}

#[pyfunction]
fn series_amplitude_no_noise(t: f64, params: &PySystemParams) -> Complex64 {
    analytic::series_amplitude_no_noise(t, &params.0)
}

#[pyfunction]
fn population_2tau_paper(t: f64, params: &PySystemParams) -> PyResult<f64> {
    analytic::population_2tau_paper(t, &params.0).map_err(py_err)
}

#[pyfunction]
fn population_2tau_with_cross(t: f64, params: &PySystemParams) -> PyResult<f64> {
    analytic::population_2tau_with_cross(t, &params.0).map_err(py_err)
}

#[pyfunction]
fn population_3tau(t: f64, params: &PySystemParams) -> PyResult<f64> {
    analytic::population_3tau(t, &params.0).map_err(py_err)
}

#[pyfunction]
fn ou_kernel(delta: f64, params: &PySystemParams) -> f64 {
    analytic::ou_kernel(delta, &params.0)
}

/// `⟨exp(i Σ σ_k φ(b_k, a_k))⟩` for segments given as `(start, end, sign)` with sign ±1.
#[pyfunction]
fn phase_moment(segments: Vec<(f64, f64, i32)>, gamma: f64) -> PyResult<f64> {
    let segs = segments
        .into_iter()
        .map(|(a, b, s)| {
            let sign = match s {
                1 => Sign::Plus,
                -1 => Sign::Minus,
                _ => return Err(PyValueError::new_err("sign must be +1 or -1")),
            };
            Segment::new(a, b, sign).map_err(py_err)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(moments::phase_moment(&segs, gamma))
}

/// `(⟨N⟩, ⟨NN*⟩, ⟨M⟩, ⟨N*M⟩, ⟨MM*⟩)` at time `t`.
#[pyfunction]
fn moments_at(t: f64, params: &PySystemParams) -> PyResult<(f64, f64, f64, f64, f64)> {
    let m = moments::moments(t, &params.0).map_err(py_err)?;
    Ok((m.n.re, m.nn_star, m.m.re, m.nstar_m.re, m.mm_star))
}

#[pymodule]
fn feedback_ou_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemParams>()?;
    m.add_class::<PyNoisePath>()?;
    m.add_class::<PyEnsembleStats>()?;
    m.add_function(wrap_pyfunction!(generate_path, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(run_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(wigner_weisskopf_population, m)?)?;
    m.add_function(wrap_pyfunction!(series_amplitude_no_noise, m)?)?;
    m.add_function(wrap_pyfunction!(population_2tau_paper, m)?)?;
    m.add_function(wrap_pyfunction!(population_2tau_with_cross, m)?)?;
    m.add_function(wrap_pyfunction!(population_3tau, m)?)?;
    m.add_function(wrap_pyfunction!(ou_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(phase_moment, m)?)?;
    m.add_function(wrap_pyfunction!(moments_at, m)?)?;
    Ok(())
}
