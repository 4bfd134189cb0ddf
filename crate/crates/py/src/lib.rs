//! Python bindings: conditions, kernels and the conditioned model with its
//! three samplers. Build as a cdylib (`cargo build -p gpcond-py --release`)
//! and import the resulting shared library as `gpcond_py`.

use gpcond::{
    Atom, AugmentedState, Condition, ConditionedModel, DriftEvaluator, Kernel, Path, PolyPiece,
    SeriesBasis,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: gpcond::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A signed measure on [0, T]: point atoms plus a piecewise-polynomial
/// density, acting on paths as a linear functional.
#[pyclass(name = "Condition", from_py_object)]
#[derive(Clone)]
struct PyCondition {
    inner: Condition,
}

#[pymethods]
impl PyCondition {
    /// Condition(T, atoms=[(t, w), ...], density=[(lo, hi, [c0, c1, ...]), ...])
    #[new]
    #[pyo3(signature = (horizon, atoms=Vec::new(), density=Vec::new()))]
    fn new(
        horizon: f64,
        atoms: Vec<(f64, f64)>,
        density: Vec<(f64, f64, Vec<f64>)>,
    ) -> PyResult<Self> {
        let atoms = atoms.into_iter().map(|(t, w)| Atom { t, w }).collect();
        let density = density
            .into_iter()
            .map(|(lo, hi, coeffs)| PolyPiece { lo, hi, coeffs })
            .collect();
        Ok(PyCondition { inner: Condition::new(horizon, atoms, density).map_err(py_err)? })
    }

    /// Point evaluation at the horizon: f -> f(T).
    #[staticmethod]
    fn endpoint(horizon: f64) -> Self {
        PyCondition { inner: Condition::endpoint(horizon) }
    }

    /// The path integral: f -> int_0^T f.
    #[staticmethod]
    fn unit_density(horizon: f64) -> Self {
        PyCondition { inner: Condition::unit_density(horizon) }
    }

    /// c([x, T]).
    fn tail_mass(&self, x: f64) -> f64 {
        self.inner.tail_mass(x)
    }

    fn total_variation(&self) -> f64 {
        self.inner.total_variation()
    }

    /// Apply the functional to a piecewise-linear path given by grid/values.
    fn apply(&self, grid: Vec<f64>, values: Vec<f64>) -> PyResult<f64> {
        let path = Path::new(grid, values).map_err(py_err)?;
        self.inner.apply(&path).map_err(py_err)
    }
}

/// Covariance kernel of the base process.
#[pyclass(name = "Kernel", from_py_object)]
#[derive(Clone)]
struct PyKernel {
    inner: Kernel,
}

#[pymethods]
impl PyKernel {
    /// Standard Brownian motion on [0, T].
    #[staticmethod]
    fn brownian(horizon: f64) -> PyResult<Self> {
        Ok(PyKernel { inner: Kernel::brownian(horizon).map_err(py_err)? })
    }

    /// Stationary unit-variance Ornstein-Uhlenbeck process with the given rate.
    #[staticmethod]
    fn ornstein_uhlenbeck(horizon: f64, rate: f64) -> PyResult<Self> {
        Ok(PyKernel { inner: Kernel::ornstein_uhlenbeck(horizon, rate).map_err(py_err)? })
    }

    fn cov(&self, s: f64, t: f64) -> f64 {
        self.inner.cov(s, t)
    }

    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    /// Sample the base process on a uniform grid; returns (grid, values).
    fn sample(&self, grid_steps: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let grid = Path::uniform_grid(self.inner.horizon(), grid_steps);
        let path = self.inner.sample_path(&grid, seed).map_err(py_err)?;
        Ok((path.grid().to_vec(), path.values().to_vec()))
    }
}

/// A Gaussian process conditioned on vanishing linear functionals.
#[pyclass(name = "Model")]
struct PyModel {
    inner: ConditionedModel,
}

impl PyModel {
    fn evaluator(&self) -> PyResult<DriftEvaluator<'_>> {
        DriftEvaluator::new(&self.inner).map_err(py_err)
    }

    fn state(&self, s: f64, x: f64, ivals: Vec<f64>) -> AugmentedState {
        AugmentedState { s, x, ivals }
    }
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(kernel: PyKernel, conditions: Vec<PyCondition>) -> PyResult<Self> {
        let conds = conditions.into_iter().map(|c| c.inner).collect();
        Ok(PyModel { inner: ConditionedModel::new(kernel.inner, conds).map_err(py_err)? })
    }

    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    /// Conditioned covariance.
    fn cond_cov(&self, s: f64, t: f64) -> PyResult<f64> {
        self.inner.cond_cov(s, t).map_err(py_err)
    }

    /// Gram matrix of the conditions under the kernel inner product.
    fn gram(&self) -> PyResult<Vec<Vec<f64>>> {
        gpcond::detached::gram(self.inner.kernel(), self.inner.basis().conditions())
            .map_err(py_err)
    }

    /// B[j][i] = a_j applied to the i-th orthonormal basis function.
    fn b_matrix(&self) -> Vec<Vec<f64>> {
        self.inner.b_matrix().to_vec()
    }

    /// The i-th embedded basis function evaluated at s.
    fn basis_value(&self, i: usize, s: f64) -> PyResult<f64> {
        self.inner.basis().basis_value(i, s).map_err(py_err)
    }

    /// Sample by the anticipative transform; returns (grid, values).
    fn sample_anticipative(&self, grid_steps: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let grid = Path::uniform_grid(self.inner.horizon(), grid_steps);
        let base = self.inner.kernel().sample_path(&grid, seed).map_err(py_err)?;
        let path = self.inner.anticipative_transform(&base).map_err(py_err)?;
        Ok((path.grid().to_vec(), path.values().to_vec()))
    }

    /// Sample from the truncated series expansion; returns (grid, values).
    fn sample_series(
        &self,
        terms: usize,
        grid_steps: usize,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let basis = SeriesBasis::new(&self.inner, terms).map_err(py_err)?;
        let grid = Path::uniform_grid(self.inner.horizon(), grid_steps);
        let path = gpcond::series::sample_series(&basis, &self.inner, &grid, seed)
            .map_err(py_err)?;
        Ok((path.grid().to_vec(), path.values().to_vec()))
    }

    /// Integrate the conditioned SDE; returns (times, values, ivals).
    fn sample_sde(
        &self,
        dt: f64,
        eps_end: f64,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
        let de = self.evaluator()?;
        let ap = de.integrate_sde(dt, seed, eps_end).map_err(py_err)?;
        Ok((ap.times, ap.values, ap.ivals))
    }

    /// Drift of the conditioned SDE at the augmented state (s, x, ivals).
    fn drift(&self, s: f64, x: f64, ivals: Vec<f64>) -> PyResult<f64> {
        self.evaluator()?.drift(&self.state(s, x, ivals)).map_err(py_err)
    }

    /// E[X_t | state at s].
    fn expected_future(&self, s: f64, x: f64, ivals: Vec<f64>, t: f64) -> PyResult<f64> {
        self.evaluator()?
            .expected_future(&self.state(s, x, ivals), t)
            .map_err(py_err)
    }
}

#[pymodule]
fn gpcond_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCondition>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
