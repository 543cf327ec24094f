//! Python bindings. Report structures are returned as plain dicts and lists
//! built from their serialized form.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use ergodic_interval::config::MapSpec;
use ergodic_interval::cycles::{find_cycles, find_minimal_cycles, renormalize, DEFAULT_MAX_PERIOD};
use ergodic_interval::inducer::{build_induced, default_params, tail_distribution};
use ergodic_interval::markov::{build_full_markov, choose_omega, return_tail, DEFAULT_MAX_GENERATIONS};
use ergodic_interval::observable::Observable;
use ergodic_interval::orbit::{all_critical_orbits, predicted_regime, summability_verdict};
use ergodic_interval::regime::classify_decay;
use ergodic_interval::stats::{
    birkhoff_density, clt_test, correlation, ulam_density, BirkhoffParams, CltParams,
    CorrelationParams, DEFAULT_MAX_POWER_ITERS,
};
use ergodic_interval::{Error, PiecewiseMap};

fn py_err(e: Error) -> PyErr {
    if e.is_budget_failure() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn report<'py, T: Serialize>(py: Python<'py>, t: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(t).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn observable(name: &str) -> PyResult<Observable> {
    name.parse().map_err(py_err)
}

/// A piecewise-smooth interval map.
#[pyclass(name = "Map", module = "ergodic_interval", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMap {
    inner: PiecewiseMap,
}

impl PyMap {
    fn wrap(r: ergodic_interval::Result<PiecewiseMap>) -> PyResult<Self> {
        r.map(|inner| PyMap { inner }).map_err(py_err)
    }
}

#[pymethods]
impl PyMap {
    /// One of `chebyshev`, `tent`, `tent1.3`, `doubling`, `lorenz`.
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        let spec = MapSpec::builtin(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown builtin map '{name}'")))?;
        Self::wrap(PiecewiseMap::from_spec(&spec))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::wrap(MapSpec::from_json(text).and_then(|s| PiecewiseMap::from_spec(&s)))
    }

    #[staticmethod]
    fn tent(s: f64) -> PyResult<Self> {
        Self::wrap(PiecewiseMap::tent(s))
    }

    #[staticmethod]
    fn quadratic(a: f64) -> PyResult<Self> {
        Self::wrap(PiecewiseMap::quadratic(a))
    }

    #[staticmethod]
    fn doubling() -> PyResult<Self> {
        Self::wrap(PiecewiseMap::doubling())
    }

    #[staticmethod]
    fn lorenz(c: f64, b_minus: f64, b_plus: f64, rho_minus: f64, rho_plus: f64) -> PyResult<Self> {
        Self::wrap(PiecewiseMap::lorenz(c, b_minus, b_plus, rho_minus, rho_plus))
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.apply(x)
    }

    fn deriv(&self, x: f64) -> f64 {
        self.inner.deriv_at(x)
    }

    #[getter]
    fn is_continuous(&self) -> bool {
        self.inner.is_continuous()
    }

    /// `(c, l_minus, l_plus)` for each critical point.
    #[getter]
    fn critical_points(&self) -> Vec<(f64, f64, f64)> {
        self.inner.critical_points().iter().map(|c| (c.c, c.l_minus, c.l_plus)).collect()
    }

    fn to_json(&self) -> String {
        self.inner.spec().to_json_pretty()
    }

    fn __repr__(&self) -> String {
        format!("Map(family={:?})", self.inner.spec().family)
    }
}

/// Critical-orbit records with summability verdicts and the predicted regime.
#[pyfunction]
#[pyo3(signature = (map, horizon = 200))]
fn diagnose<'py>(py: Python<'py>, map: &PyMap, horizon: usize) -> PyResult<Bound<'py, PyAny>> {
    let recs = all_critical_orbits(&map.inner, horizon).map_err(py_err)?;
    let verdicts = recs.iter().map(summability_verdict).collect::<Result<Vec<_>, _>>().map_err(py_err)?;
    let out = serde_json::json!({
        "records": recs,
        "summability": verdicts,
        "predicted": predicted_regime(&recs),
    });
    to_py(py, &out)
}

#[pyfunction(name = "classify_decay")]
fn py_classify_decay<'py>(py: Python<'py>, a: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    report(py, &classify_decay(&a).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (map, max_period = DEFAULT_MAX_PERIOD, minimal_only = false))]
fn cycles<'py>(py: Python<'py>, map: &PyMap, max_period: usize, minimal_only: bool) -> PyResult<Bound<'py, PyAny>> {
    let r = if minimal_only {
        find_minimal_cycles(&map.inner, max_period)
    } else {
        find_cycles(&map.inner, max_period)
    };
    report(py, &r.map_err(py_err)?)
}

/// First-return map to the `index`-th cycle, rescaled to [0, 1].
#[pyfunction(name = "renormalize")]
#[pyo3(signature = (map, index = 0))]
fn py_renormalize(map: &PyMap, index: usize) -> PyResult<PyMap> {
    let cyc = find_cycles(&map.inner, DEFAULT_MAX_PERIOD).map_err(py_err)?;
    let c = cyc
        .get(index)
        .ok_or_else(|| PyValueError::new_err(format!("only {} cycles found", cyc.len())))?;
    Ok(PyMap { inner: renormalize(&map.inner, c).map_err(py_err)?.map })
}

/// Induced map on `j` with default parameters, plus its return-time tail.
#[pyfunction]
#[pyo3(signature = (map, j = (0.1, 0.6)))]
fn induce<'py>(py: Python<'py>, map: &PyMap, j: (f64, f64)) -> PyResult<Bound<'py, PyAny>> {
    let f = &map.inner;
    let (ind, tail) = py
        .detach(|| -> ergodic_interval::Result<_> {
            let recs = all_critical_orbits(f, 200)?;
            let params = default_params(f, &recs)?;
            let ind = build_induced(f, j, &params, &recs)?;
            let tail = tail_distribution(&ind);
            Ok((ind, tail))
        })
        .map_err(py_err)?;
    let out = serde_json::json!({
        "induced": ind,
        "leak_fraction": ind.leak_fraction(),
        "tail": tail,
    });
    to_py(py, &out)
}

/// Full Markov return map to the nice interval around the first critical point.
#[pyfunction]
fn markov<'py>(py: Python<'py>, map: &PyMap) -> PyResult<Bound<'py, PyAny>> {
    let f = &map.inner;
    let (fm, rt, err) = py
        .detach(|| -> ergodic_interval::Result<_> {
            let recs = all_critical_orbits(f, 200)?;
            let params = default_params(f, &recs)?;
            let ch = choose_omega(f, (0.0, 1.0), 0, params.delta_prime, 0.5)?;
            let fm = build_full_markov(f, &ch, &params, DEFAULT_MAX_GENERATIONS)?;
            let rt = return_tail(&fm, &recs);
            let err = fm.max_endpoint_error(f);
            Ok((fm, rt, err))
        })
        .map_err(py_err)?;
    let out = serde_json::json!({
        "omega": fm.omega,
        "coverage": fm.coverage,
        "gcd_r": fm.gcd_r,
        "elements": fm.elements.len(),
        "max_endpoint_error": err,
        "return_tail": rt,
    });
    to_py(py, &out)
}

/// Density estimate as a dict with `bins`, `rho` and diagnostics.
#[pyfunction]
#[pyo3(signature = (map, bins = 4096, method = "ulam", seed = 0))]
fn density<'py>(py: Python<'py>, map: &PyMap, bins: usize, method: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let f = &map.inner;
    let d = match method {
        "ulam" => py.detach(|| ulam_density(f, bins, DEFAULT_MAX_POWER_ITERS)),
        "birkhoff" => {
            let p = BirkhoffParams { bins, seed, ..Default::default() };
            py.detach(|| birkhoff_density(f, &p))
        }
        _ => return Err(PyValueError::new_err(format!("unknown density method '{method}'"))),
    };
    report(py, &d.map_err(py_err)?)
}

#[pyfunction(name = "correlations")]
#[pyo3(signature = (map, phi = "sqrt_dist", psi = None, n_max = 30, orbit_length = 2_000_000, seeds = 8, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn py_correlations<'py>(
    py: Python<'py>,
    map: &PyMap,
    phi: &str,
    psi: Option<&str>,
    n_max: usize,
    orbit_length: usize,
    seeds: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let phi = observable(phi)?;
    let psi = psi.map(observable).transpose()?.unwrap_or_else(|| phi.clone());
    let p = CorrelationParams { n_max, orbit_length, seeds, seed, ..Default::default() };
    let f = &map.inner;
    report(py, &py.detach(|| correlation(f, &phi, &psi, &p)).map_err(py_err)?)
}

#[pyfunction]
#[pyo3(signature = (map, phi = "x", block_n = 1000, samples = 10_000, seed = 0))]
fn clt<'py>(py: Python<'py>, map: &PyMap, phi: &str, block_n: usize, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let phi = observable(phi)?;
    let p = CltParams { block_n, samples, seed, ..Default::default() };
    let f = &map.inner;
    report(py, &py.detach(|| clt_test(f, &phi, &p)).map_err(py_err)?)
}

#[pymodule(name = "ergodic_interval")]
fn ergodic_interval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMap>()?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    m.add_function(wrap_pyfunction!(py_classify_decay, m)?)?;
    m.add_function(wrap_pyfunction!(cycles, m)?)?;
    m.add_function(wrap_pyfunction!(py_renormalize, m)?)?;
    m.add_function(wrap_pyfunction!(induce, m)?)?;
    m.add_function(wrap_pyfunction!(markov, m)?)?;
    m.add_function(wrap_pyfunction!(density, m)?)?;
    m.add_function(wrap_pyfunction!(py_correlations, m)?)?;
    m.add_function(wrap_pyfunction!(clt, m)?)?;
    Ok(())
}
