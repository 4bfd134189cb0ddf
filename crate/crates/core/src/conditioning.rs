//! The conditioned model: conditioned covariance and the anticipative path
//! transform.
//!
//! With an orthonormal basis e_1..e_r of the detached subspace, the
//! conditioned covariance is R(s,t) minus the sum of (u e_i)(s)(u e_i)(t),
//! and a path of the base process is turned into a conditioned path by
//! subtracting the detached component fitted from the whole path: solve
//! B xi = b(p) with B[j][i] = a_j(u e_i) and b_j = a_j(p), then subtract
//! sum_i xi_i (u e_i) on the grid.

use crate::conditions::Condition;
use crate::detached::{orthonormalize, DetachedBasis};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, Path};
use crate::linalg::{Lu, Mat};

pub struct ConditionedModel {
    kernel: Kernel,
    basis: DetachedBasis,
    b_matrix: Vec<Vec<f64>>,
    b_lu: Option<Lu>,
    b_condition: f64,
}

impl ConditionedModel {
    pub fn new(kernel: Kernel, conditions: Vec<Condition>) -> Result<Self> {
        for c in &conditions {
            if c.horizon() != kernel.horizon() {
                return Err(Error::Domain(format!(
                    "condition horizon {} does not match kernel horizon {}",
                    c.horizon(),
                    kernel.horizon()
                )));
            }
        }
        let basis = orthonormalize(&kernel, &conditions)?;
        let r = basis.rank();
        let mut b_matrix = vec![vec![0.0; r]; r];
        for (row, &j) in basis.kept().iter().enumerate() {
            let a_j = &basis.conditions()[j];
            for i in 0..r {
                b_matrix[row][i] = basis.embedded(i).apply_condition(a_j)?;
            }
        }
        let (b_lu, b_condition) = if r > 0 {
            let lu = Lu::factor(&Mat::from_rows(&b_matrix), "anticipative system B")?;
            let cond = lu.condition();
            if cond > 1e8 {
                eprintln!(
                    "warning: anticipative system B is ill-conditioned (condition {cond:.3e})"
                );
            }
            (Some(lu), cond)
        } else {
            (None, 1.0)
        };
        Ok(ConditionedModel { kernel, basis, b_matrix, b_lu, b_condition })
    }

    /// Model with no conditions: the base process itself.
    pub fn unconditioned(kernel: Kernel) -> Self {
        ConditionedModel::new(kernel, Vec::new()).expect("empty condition set is always valid")
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn basis(&self) -> &DetachedBasis {
        &self.basis
    }

    pub fn horizon(&self) -> f64 {
        self.kernel.horizon()
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    /// B[j][i] = a_j(u e_i) over the kept conditions.
    pub fn b_matrix(&self) -> &[Vec<f64>] {
        &self.b_matrix
    }

    pub fn b_condition_number(&self) -> f64 {
        self.b_condition
    }

    /// Covariance of the conditioned process.
    pub fn cond_cov(&self, s: f64, t: f64) -> Result<f64> {
        let mut acc = self.kernel.cov(s, t);
        for i in 0..self.basis.rank() {
            acc -= self.basis.basis_value(i, s)? * self.basis.basis_value(i, t)?;
        }
        Ok(acc)
    }

    /// Detached-component coordinates of a path: xi = B^{-1} b(p) with
    /// b_j = a_j(p).
    pub fn fit_coordinates(&self, path: &Path) -> Result<Vec<f64>> {
        let Some(lu) = &self.b_lu else {
            return Ok(Vec::new());
        };
        let mut b = Vec::with_capacity(self.basis.rank());
        for &j in self.basis.kept() {
            b.push(self.basis.conditions()[j].apply(path)?);
        }
        Ok(lu.solve(&b))
    }

    /// Basis functions evaluated on a grid; row i is (u e_i) on the grid.
    pub fn basis_on_grid(&self, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..self.basis.rank())
            .map(|i| grid.iter().map(|&s| self.basis.basis_value(i, s)).collect())
            .collect()
    }

    /// Anticipative transform: returns the path minus its detached component.
    /// The output satisfies a_j(output) = 0 for every effective condition, to
    /// the precision of the (exact) piecewise-linear quadrature. The path is
    /// never resampled: this is a pure linear map on the given grid values.
    pub fn anticipative_transform(&self, path: &Path) -> Result<Path> {
        let basis_values = self.basis_on_grid(path.grid())?;
        self.transform_with_basis(path, &basis_values)
    }

    /// Transform against precomputed basis values (batch samplers reuse the
    /// grid across many paths; rows must come from
    /// [`basis_on_grid`](Self::basis_on_grid) for the path's grid).
    pub fn transform_with_basis(
        &self,
        path: &Path,
        basis_values: &[Vec<f64>],
    ) -> Result<Path> {
        let xi = self.fit_coordinates(path)?;
        let mut values = path.values().to_vec();
        for (i, &xi_i) in xi.iter().enumerate() {
            for (v, &bv) in values.iter_mut().zip(&basis_values[i]) {
                *v -= xi_i * bv;
            }
        }
        Path::new(path.grid().to_vec(), values)
    }
}
