//! Python bindings: tensors with reverse-mode gradients, the NOVAS and CEM
//! searches, unrolled gradient descent, and the experiment runner.
//!
//! Objectives are Python callables. A NOVAS objective maps a candidate
//! tensor `[batch, M, dim]` to values `[batch, M]`; a gradient-descent
//! objective maps `y: [batch, dim]` to `(values, gradient)`.

use std::cell::RefCell;
use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use novas_core::harness::{RunConfig, Runner};
use novas_core::novas::{self as search, CemConfig, DifferentiableObjective, GaussianSearchState, NovasConfig};
use novas_core::problems::CartPole;
use novas_core::rng::StreamKey;
use novas_core::tensor::{self, Tensor};

fn to_py(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Tensor", unsendable)]
#[derive(Clone)]
pub struct PyTensor(pub Tensor);

#[derive(FromPyObject)]
enum Operand<'py> {
    Tensor(PyRef<'py, PyTensor>),
    Scalar(f64),
}

impl Operand<'_> {
    fn tensor(&self) -> Tensor {
        match self {
            Operand::Tensor(t) => t.0.clone(),
            Operand::Scalar(s) => Tensor::scalar(*s),
        }
    }
}

#[pymethods]
impl PyTensor {
    /// Flat row-major `data` with `shape` (1-D if omitted).
    #[new]
    #[pyo3(signature = (data, shape=None, requires_grad=false))]
    fn new(data: Vec<f64>, shape: Option<Vec<usize>>, requires_grad: bool) -> PyResult<Self> {
        let shape = shape.unwrap_or_else(|| vec![data.len()]);
        let t = if requires_grad { Tensor::param(data, &shape) } else { Tensor::new(data, &shape) };
        t.map(PyTensor).map_err(to_py)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor(Tensor::zeros(&shape))
    }

    #[staticmethod]
    fn full(shape: Vec<usize>, value: f64) -> Self {
        PyTensor(Tensor::full(&shape, value))
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    #[getter]
    fn requires_grad(&self) -> bool {
        self.0.requires_grad()
    }

    /// Flat row-major values.
    fn tolist(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    fn item(&self) -> PyResult<f64> {
        if self.0.numel() != 1 {
            return Err(PyValueError::new_err(format!("item() needs one element, shape is {:?}", self.0.shape())));
        }
        Ok(self.0.item())
    }

    /// Accumulated gradient of a grad-enabled leaf, if any.
    #[getter]
    fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad()
    }

    fn zero_grad(&self) {
        self.0.zero_grad()
    }

    fn detach(&self) -> Self {
        PyTensor(self.0.detach())
    }

    /// Backpropagate from this scalar into every grad-enabled leaf, then
    /// clear the tape.
    fn backward(&self) -> PyResult<()> {
        let r = tensor::backward(&self.0).map_err(to_py);
        tensor::clear_tape();
        r
    }

    fn add(&self, other: Operand) -> PyResult<Self> {
        self.0.add(&other.tensor()).map(PyTensor).map_err(to_py)
    }

    fn sub(&self, other: Operand) -> PyResult<Self> {
        self.0.sub(&other.tensor()).map(PyTensor).map_err(to_py)
    }

    fn mul(&self, other: Operand) -> PyResult<Self> {
        self.0.mul(&other.tensor()).map(PyTensor).map_err(to_py)
    }

    fn div(&self, other: Operand) -> PyResult<Self> {
        self.0.div(&other.tensor()).map(PyTensor).map_err(to_py)
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<Self> {
        self.0.matmul(&other.0).map(PyTensor).map_err(to_py)
    }

    fn __add__(&self, other: Operand) -> PyResult<Self> {
        self.add(other)
    }

    fn __radd__(&self, other: Operand) -> PyResult<Self> {
        self.add(other)
    }

    fn __sub__(&self, other: Operand) -> PyResult<Self> {
        self.sub(other)
    }

    fn __rsub__(&self, other: Operand) -> PyResult<Self> {
        other.tensor().sub(&self.0).map(PyTensor).map_err(to_py)
    }

    fn __mul__(&self, other: Operand) -> PyResult<Self> {
        self.mul(other)
    }

    fn __rmul__(&self, other: Operand) -> PyResult<Self> {
        self.mul(other)
    }

    fn __truediv__(&self, other: Operand) -> PyResult<Self> {
        self.div(other)
    }

    fn __rtruediv__(&self, other: Operand) -> PyResult<Self> {
        other.tensor().div(&self.0).map(PyTensor).map_err(to_py)
    }

    fn __matmul__(&self, other: &PyTensor) -> PyResult<Self> {
        self.matmul(other)
    }

    fn __neg__(&self) -> Self {
        PyTensor(self.0.neg())
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?}, data={:?})", self.0.shape(), self.0.to_vec())
    }

    fn exp(&self) -> Self {
        PyTensor(self.0.exp())
    }

    fn log(&self) -> Self {
        PyTensor(self.0.log())
    }

    fn square(&self) -> Self {
        PyTensor(self.0.square())
    }

    fn sqrt(&self) -> Self {
        PyTensor(self.0.sqrt())
    }

    fn abs(&self) -> Self {
        PyTensor(self.0.abs())
    }

    fn sin(&self) -> Self {
        PyTensor(self.0.sin())
    }

    fn cos(&self) -> Self {
        PyTensor(self.0.cos())
    }

    fn tanh(&self) -> Self {
        PyTensor(self.0.tanh())
    }

    fn sigmoid(&self) -> Self {
        PyTensor(self.0.sigmoid())
    }

    fn softplus(&self) -> Self {
        PyTensor(self.0.softplus())
    }

    fn huber(&self, delta: f64) -> PyResult<Self> {
        self.0.huber(delta).map(PyTensor).map_err(to_py)
    }

    /// Sum over everything, or over `axis`.
    #[pyo3(signature = (axis=None, keepdim=false))]
    fn sum(&self, axis: Option<usize>, keepdim: bool) -> PyResult<Self> {
        match axis {
            None => Ok(PyTensor(self.0.sum_all())),
            Some(a) => self.0.sum_axis(a, keepdim).map(PyTensor).map_err(to_py),
        }
    }

    #[pyo3(signature = (axis=None, keepdim=false))]
    fn mean(&self, axis: Option<usize>, keepdim: bool) -> PyResult<Self> {
        match axis {
            None => Ok(PyTensor(self.0.mean_all())),
            Some(a) => self.0.mean_axis(a, keepdim).map(PyTensor).map_err(to_py),
        }
    }

    #[pyo3(signature = (axis, keepdim=false))]
    fn max(&self, axis: usize, keepdim: bool) -> PyResult<Self> {
        self.0.max_axis(axis, keepdim).map(PyTensor).map_err(to_py)
    }

    #[pyo3(signature = (axis, keepdim=false))]
    fn min(&self, axis: usize, keepdim: bool) -> PyResult<Self> {
        self.0.min_axis(axis, keepdim).map(PyTensor).map_err(to_py)
    }

    fn softmax(&self, axis: usize) -> PyResult<Self> {
        self.0.softmax(axis).map(PyTensor).map_err(to_py)
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        self.0.reshape(&shape).map(PyTensor).map_err(to_py)
    }

    fn unsqueeze(&self, axis: usize) -> PyResult<Self> {
        self.0.unsqueeze(axis).map(PyTensor).map_err(to_py)
    }

    fn transpose(&self) -> PyResult<Self> {
        self.0.transpose().map(PyTensor).map_err(to_py)
    }

    fn slice(&self, axis: usize, start: usize, len: usize) -> PyResult<Self> {
        self.0.slice(axis, start, len).map(PyTensor).map_err(to_py)
    }
}

/// Build a config from its serde defaults overlaid with Python keyword
/// arguments; enum fields take their snake_case names.
fn from_kwargs<T>(base: &T, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(base).map_err(to_py)?;
    if let Some(kw) = kwargs {
        let map = value.as_object_mut().expect("configs serialize as objects");
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let v = if let Ok(b) = v.extract::<bool>() {
                serde_json::Value::from(b)
            } else if let Ok(i) = v.extract::<u64>() {
                serde_json::Value::from(i)
            } else if let Ok(f) = v.extract::<f64>() {
                serde_json::Value::from(f)
            } else {
                serde_json::Value::from(v.extract::<String>()?)
            };
            map.insert(key, v);
        }
    }
    serde_json::from_value(value).map_err(to_py)
}

#[pyclass(name = "NovasConfig", unsendable)]
#[derive(Clone)]
pub struct PyNovasConfig(pub NovasConfig);

#[pymethods]
impl PyNovasConfig {
    /// Keyword arguments override the defaults, e.g.
    /// `NovasConfig(samples=200, iters=50, sigma0=10.0, mode="unrolled")`.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg: NovasConfig = from_kwargs(&NovasConfig::default(), kwargs)?;
        cfg.validate().map_err(to_py)?;
        Ok(PyNovasConfig(cfg))
    }

    #[getter]
    fn samples(&self) -> usize {
        self.0.samples
    }

    #[getter]
    fn iters(&self) -> usize {
        self.0.iters
    }

    #[getter]
    fn sigma0(&self) -> f64 {
        self.0.sigma0
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.0.kappa
    }

    fn __repr__(&self) -> String {
        format!("NovasConfig({})", serde_json::to_string(&self.0).unwrap_or_default())
    }
}

#[pyclass(name = "CemConfig", unsendable)]
#[derive(Clone)]
pub struct PyCemConfig(pub CemConfig);

#[pymethods]
impl PyCemConfig {
    #[new]
    #[pyo3(signature = (samples=100, elites=10, iters=10, **kwargs))]
    fn new(samples: usize, elites: usize, iters: usize, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let base = CemConfig {
            samples,
            elites,
            iters,
            epsilon: 1e-3,
            maximize: false,
        };
        let cfg: CemConfig = from_kwargs(&base, kwargs)?;
        cfg.validate().map_err(to_py)?;
        Ok(PyCemConfig(cfg))
    }

    fn __repr__(&self) -> String {
        format!("CemConfig({})", serde_json::to_string(&self.0).unwrap_or_default())
    }
}

/// A Python callable seen from the searches. The first Python exception is
/// kept and re-raised once the search returns.
struct Callback<'py> {
    py: Python<'py>,
    f: Bound<'py, PyAny>,
    raised: RefCell<Option<PyErr>>,
}

impl<'py> Callback<'py> {
    fn new(f: Bound<'py, PyAny>) -> Self {
        Callback {
            py: f.py(),
            f,
            raised: RefCell::new(None),
        }
    }

    fn fail(&self, e: PyErr) -> novas_core::Error {
        let msg = e.to_string();
        self.raised.borrow_mut().get_or_insert(e);
        novas_core::Error::Config(format!("python objective: {msg}"))
    }

    fn call(&self, x: &Tensor) -> novas_core::Result<Bound<'py, PyAny>> {
        let arg = Py::new(self.py, PyTensor(x.clone())).map_err(|e| self.fail(e))?;
        self.f.call1((arg,)).map_err(|e| self.fail(e))
    }

    fn tensor(&self, v: &Bound<'py, PyAny>) -> novas_core::Result<Tensor> {
        v.extract::<PyRef<PyTensor>>().map(|t| t.0.clone()).map_err(|e| self.fail(e))
    }

    fn finish<T>(&self, r: novas_core::Result<T>) -> PyResult<T> {
        match (r, self.raised.borrow_mut().take()) {
            (Ok(v), _) => Ok(v),
            (Err(_), Some(e)) => Err(e),
            (Err(e), None) => Err(to_py(e)),
        }
    }
}

impl DifferentiableObjective for Callback<'_> {
    fn value_and_gradient(&self, y: &Tensor) -> novas_core::Result<(Tensor, Tensor)> {
        let out = self.call(y)?;
        let (v, g): (Bound<PyAny>, Bound<PyAny>) = out.extract().map_err(|e| self.fail(e))?;
        Ok((self.tensor(&v)?, self.tensor(&g)?))
    }
}

fn start_state(mu: &Tensor, sigma: Option<&PyTensor>, sigma0: f64) -> PyResult<GaussianSearchState> {
    match sigma {
        Some(s) => GaussianSearchState::new(mu.clone(), s.0.clone()),
        None => GaussianSearchState::isotropic(mu.clone(), sigma0),
    }
    .map_err(to_py)
}

/// NOVAS from mean `mu: [batch, dim]`; returns the final mean, which carries
/// gradients into whatever the objective closes over.
#[pyfunction]
#[pyo3(signature = (objective, mu, config, seed=0, sigma=None))]
fn novas_optimize(
    objective: Bound<'_, PyAny>,
    mu: &PyTensor,
    config: &PyNovasConfig,
    seed: u64,
    sigma: Option<PyRef<PyTensor>>,
) -> PyResult<PyTensor> {
    let init = start_state(&mu.0, sigma.as_deref(), config.0.sigma0)?;
    let cb = Callback::new(objective);
    let obj = |c: &Tensor| cb.call(c).and_then(|v| cb.tensor(&v));
    let r = search::novas_optimize(&obj, &init, &config.0, StreamKey::new(seed));
    cb.finish(r).map(PyTensor)
}

/// NOVAS returning the final `(mu, sigma)`.
#[pyfunction]
#[pyo3(signature = (objective, mu, config, seed=0, sigma=None))]
fn novas_search(
    objective: Bound<'_, PyAny>,
    mu: &PyTensor,
    config: &PyNovasConfig,
    seed: u64,
    sigma: Option<PyRef<PyTensor>>,
) -> PyResult<(PyTensor, PyTensor)> {
    let init = start_state(&mu.0, sigma.as_deref(), config.0.sigma0)?;
    let cb = Callback::new(objective);
    let obj = |c: &Tensor| cb.call(c).and_then(|v| cb.tensor(&v));
    let r = search::novas_search(&obj, &init, &config.0, StreamKey::new(seed));
    cb.finish(r).map(|s| (PyTensor(s.mu), PyTensor(s.sigma)))
}

/// Cross-entropy method; runs without gradient recording.
#[pyfunction]
#[pyo3(signature = (objective, mu, config, sigma0=1.0, seed=0))]
fn cem_optimize(
    objective: Bound<'_, PyAny>,
    mu: &PyTensor,
    config: &PyCemConfig,
    sigma0: f64,
    seed: u64,
) -> PyResult<PyTensor> {
    let init = start_state(&mu.0, None, sigma0)?;
    let cb = Callback::new(objective);
    let obj = |c: &Tensor| cb.call(c).and_then(|v| cb.tensor(&v));
    let r = search::cem_optimize(&obj, &init, &config.0, StreamKey::new(seed));
    cb.finish(r).map(PyTensor)
}

/// Sample weights for objective values `[batch, M]` (higher is better).
#[pyfunction]
fn shape_weights(values: &PyTensor, config: &PyNovasConfig) -> PyResult<PyTensor> {
    search::shape_weights(&values.0, &config.0).map(PyTensor).map_err(to_py)
}

/// `steps` recorded updates `y ← y − lr·g`, where `objective(y)` returns
/// `(values, g)`.
#[pyfunction]
fn unrolled_gd(objective: Bound<'_, PyAny>, y0: &PyTensor, steps: usize, lr: f64) -> PyResult<PyTensor> {
    let cb = Callback::new(objective);
    let r = search::unrolled_gd(&cb, &y0.0, steps, lr);
    cb.finish(r).map(PyTensor)
}

/// Analytic minimizer of the cart-pole Hamiltonian for states `x: [batch, 4]`
/// and value gradients `vx: [batch, 4]`, with default cart-pole parameters.
#[pyfunction]
fn cartpole_closed_form_u(x: &PyTensor, vx: &PyTensor) -> PyResult<PyTensor> {
    CartPole::default().closed_form_u(&x.0, &vx.0).map(PyTensor).map_err(to_py)
}

/// Train and evaluate the experiment a TOML config describes. `overrides`
/// are `key.path=value` strings. Returns the output directory.
#[pyfunction]
#[pyo3(signature = (config, overrides=Vec::new(), verbose=false))]
fn run(config: &str, overrides: Vec<String>, verbose: bool) -> PyResult<String> {
    let cfg = RunConfig::load(Path::new(config), &overrides).map_err(to_py)?;
    let runner = Runner::new(cfg).map_err(to_py)?.verbose(verbose);
    runner.run_all(None).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(runner.dir().display().to_string())
}

#[pyfunction]
fn inspect_checkpoint(path: &str) -> PyResult<String> {
    novas_core::harness::inspect_checkpoint(Path::new(path)).map_err(to_py)
}

#[pyfunction]
fn clear_tape() {
    tensor::clear_tape()
}

#[pyfunction]
fn tape_len() -> usize {
    tensor::tape_len()
}

#[pymodule]
fn novas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyNovasConfig>()?;
    m.add_class::<PyCemConfig>()?;
    m.add_function(wrap_pyfunction!(novas_optimize, m)?)?;
    m.add_function(wrap_pyfunction!(novas_search, m)?)?;
    m.add_function(wrap_pyfunction!(cem_optimize, m)?)?;
    m.add_function(wrap_pyfunction!(shape_weights, m)?)?;
    m.add_function(wrap_pyfunction!(unrolled_gd, m)?)?;
    m.add_function(wrap_pyfunction!(cartpole_closed_form_u, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(inspect_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(clear_tape, m)?)?;
    m.add_function(wrap_pyfunction!(tape_len, m)?)?;
    Ok(())
}
