//! Python bindings: model construction, generating functions, moments,
//! t-expansion and Krylov post-processing on plain lists of floats.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use genfunc::dense::{build_dense, DenseHamiltonian};
use genfunc::gf::{gf_exact, gf_series, GfSeries, Route};
use genfunc::krylov::{build_krylov_matrices, solve_generalized, KrylovSolution};
use genfunc::models::{HubbardModel, InitialState, InitialStateSpec, Model, PairingModel};
use genfunc::moments::{moments_exact, moments_fdm, FdmOptions};
use genfunc::texpand::{t_expand, PadeCriteria, TExpansion};
use genfunc::trotter::NStepsPolicy;

fn value_err(e: genfunc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A Hamiltonian together with its initial state.
#[pyclass(name = "Model", frozen)]
pub struct PyModel {
    model: Model,
    init: InitialState,
    dense: DenseHamiltonian,
}

impl PyModel {
    fn build(model: Model, spec: Option<&str>) -> genfunc::Result<Self> {
        let init = match spec {
            Some(s) => model.initial_state(&s.parse::<InitialStateSpec>()?)?,
            None => model.default_initial_state()?,
        };
        let dense = build_dense(&model.to_qubits())?;
        Ok(Self { model, init, dense })
    }
}

#[pymethods]
impl PyModel {
    /// Equally spaced pairing levels `eps_p = p * delta_e` with uniform coupling `g`.
    #[staticmethod]
    #[pyo3(signature = (levels, pairs, g, delta_e = 1.0, initial_state = None))]
    fn pairing(levels: usize, pairs: usize, g: f64, delta_e: f64, initial_state: Option<&str>) -> PyResult<Self> {
        let m = PairingModel::uniform(levels, pairs, delta_e, g).map_err(value_err)?;
        Self::build(Model::Pairing(m), initial_state).map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (sites, hopping, onsite, n_up, n_down, initial_state = None))]
    fn hubbard(
        sites: usize,
        hopping: f64,
        onsite: f64,
        n_up: usize,
        n_down: usize,
        initial_state: Option<&str>,
    ) -> PyResult<Self> {
        let m = HubbardModel::new(sites, hopping, onsite, n_up, n_down).map_err(value_err)?;
        Self::build(Model::Hubbard(m), initial_state).map_err(value_err)
    }

    #[getter]
    fn n_qubits(&self) -> usize {
        self.model.n_qubits()
    }

    /// Lowest energy with non-zero overlap on the initial state.
    fn ground_energy(&self) -> f64 {
        self.dense.ground_energy_in_support(&self.init, 1e-10)
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.model.fingerprint())
    }
}

fn series_dict<'py>(py: Python<'py>, s: &GfSeries) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", s.t.clone())?;
    d.set_item("re", s.re.clone())?;
    d.set_item("im", s.im.clone())?;
    d.set_item("re_err", s.re_err.clone())?;
    d.set_item("im_err", s.im_err.clone())?;
    Ok(d)
}

/// F(t) on `t`. `exact=True` uses the eigendecomposition; otherwise Hadamard tests
/// with `shots` per point (0 for noiseless statevector estimates).
#[pyfunction]
#[pyo3(signature = (model, t, shots = 0, seed = 1, trotter_steps = None, exact = false))]
fn generating_function<'py>(
    py: Python<'py>,
    model: &PyModel,
    t: Vec<f64>,
    shots: u64,
    seed: u64,
    trotter_steps: Option<usize>,
    exact: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let s = if exact {
        gf_exact(&model.dense, &model.init, &t, &model.model.fingerprint())
    } else {
        let policy = match trotter_steps {
            Some(n) => NStepsPolicy::Fixed(n),
            None => NStepsPolicy::reference_for(&model.model),
        };
        py.detach(|| gf_series(&model.model, &model.init, &t, policy, shots, seed))
            .map_err(value_err)?
    };
    series_dict(py, &s)
}

/// Exact `<H^K>` for K = 0..=order.
#[pyfunction]
fn moments(model: &PyModel, order: usize) -> Vec<f64> {
    moments_exact(&model.dense, &model.init, order).raw()
}

/// `<H^K>` from central differences of a uniform series starting at t = 0.
pub fn fdm_raw(t: Vec<f64>, re: Vec<f64>, im: Vec<f64>, order: usize) -> genfunc::Result<Vec<f64>> {
    let n = t.len();
    let series = GfSeries {
        t,
        re,
        im,
        re_err: vec![0.0; n],
        im_err: vec![0.0; n],
        shots: 0,
        route: Route::Statevector,
        model: String::new(),
        seed: 0,
    };
    series.validate()?;
    Ok(moments_fdm(&series, order, &FdmOptions::default())?.0.raw())
}

#[pyfunction]
#[pyo3(name = "fdm_moments")]
fn py_fdm_moments(t: Vec<f64>, re: Vec<f64>, im: Vec<f64>, order: usize) -> PyResult<Vec<f64>> {
    fdm_raw(t, re, im, order).map_err(value_err)
}

pub fn expand(model: &PyModel, order: usize, points: usize) -> genfunc::Result<TExpansion> {
    let m = moments_exact(&model.dense, &model.init, order + 2);
    t_expand(&m, order, &PadeCriteria::default(), points)
}

/// Imaginary-time energy curve from `order` Taylor terms of dE/dtau.
#[pyfunction]
#[pyo3(name = "t_expand", signature = (model, order = 10, points = 401))]
fn py_t_expand<'py>(py: Python<'py>, model: &PyModel, order: usize, points: usize) -> PyResult<Bound<'py, PyDict>> {
    let tx = expand(model, order, points).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("tau", tx.curve.tau.clone())?;
    d.set_item("energy", tx.curve.energy.clone())?;
    d.set_item("dedtau", tx.curve.dedtau.clone())?;
    d.set_item("asymptote", tx.curve.asymptote)?;
    d.set_item("pade", tx.selection.as_ref().map(|s| s.chosen.orders()))?;
    d.set_item("report", tx.selection.as_ref().map(|s| s.report()))?;
    Ok(d)
}

pub fn krylov_solve(model: &PyModel, order: usize, cutoff: f64) -> genfunc::Result<KrylovSolution> {
    let m = moments_exact(&model.dense, &model.init, 2 * order + 1);
    solve_generalized(&build_krylov_matrices(&m, order)?, cutoff)
}

/// Krylov eigenvalues and weights of subspace order `order`.
#[pyfunction]
#[pyo3(signature = (model, order, cutoff = 1e-10))]
fn krylov(model: &PyModel, order: usize, cutoff: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = krylov_solve(model, order, cutoff).map_err(value_err)?;
    Ok((s.energies, s.weights))
}

#[pymodule]
fn pygenfunc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generating_function, m)?)?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(py_fdm_moments, m)?)?;
    m.add_function(wrap_pyfunction!(py_t_expand, m)?)?;
    m.add_function(wrap_pyfunction!(krylov, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level() -> PyModel {
        PyModel::build(Model::Pairing(PairingModel::uniform(2, 1, 1.0, 1.0).unwrap()), None).unwrap()
    }

    #[test]
    fn krylov_order_one_is_exact_for_two_levels() {
        let m = two_level();
        let s = krylov_solve(&m, 1, 1e-10).unwrap();
        assert!((s.ground_energy() - m.ground_energy()).abs() < 1e-10);
    }

    #[test]
    fn fdm_recovers_mean() {
        let m = two_level();
        let t: Vec<f64> = (0..201).map(|k| k as f64 * 1e-3).collect();
        let s = gf_exact(&m.dense, &m.init, &t, "");
        let raw = fdm_raw(s.t, s.re, s.im, 2).unwrap();
        let want = moments_exact(&m.dense, &m.init, 2).raw();
        assert!((raw[1] - want[1]).abs() < 1e-8);
    }

    #[test]
    fn bad_series_is_rejected() {
        assert!(fdm_raw(vec![0.0, 0.1], vec![1.0], vec![0.0, 0.0], 1).is_err());
    }

    #[test]
    fn bad_initial_state_is_rejected() {
        let r = PyModel::build(
            Model::Pairing(PairingModel::uniform(2, 1, 1.0, 1.0).unwrap()),
            Some("111"),
        );
        assert!(r.is_err());
    }
}
