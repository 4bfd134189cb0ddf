//! Geometry of the detached subspace: the Gram matrix of conditions under the
//! kernel inner product, its Gram-Schmidt orthonormalization, and the basis
//! functions obtained by embedding the orthonormalized measures.

use crate::conditions::Condition;
use crate::error::{Error, Result};
use crate::kernel::{kernel_double_apply, EmbeddedFn, Kernel};

/// Relative threshold below which a residual variance counts as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Gram matrix G[i][j] = Cov(int X da_i, int X da_j).
pub fn gram(kernel: &Kernel, conditions: &[Condition]) -> Result<Vec<Vec<f64>>> {
    let n = conditions.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        let em = kernel.embed(&conditions[i]);
        for j in 0..=i {
            let v = em.apply_condition(&conditions[j])?;
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    Ok(g)
}

/// Orthonormalized conditions spanning the detached subspace.
///
/// Basis elements are stored as coefficient vectors over the original
/// conditions, so every downstream quantity reduces to integrals of the
/// original measures. Conditions whose residual variance falls below
/// `RANK_TOL * max diagonal` are dropped (linear dependence is a detected,
/// reported event, not a crash) and the effective rank decremented.
#[derive(Clone)]
pub struct DetachedBasis {
    kernel: Kernel,
    conditions: Vec<Condition>,
    coeffs: Vec<Vec<f64>>,
    kept: Vec<usize>,
    dropped: Vec<usize>,
    combined: Vec<Condition>,
    embedded: Vec<EmbeddedFn>,
}

impl DetachedBasis {
    pub fn rank(&self) -> usize {
        self.combined.len()
    }

    /// Original (un-normalized) conditions, in input order.
    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    /// Coefficients of the i-th orthonormal element over the original
    /// conditions (lower triangular in the kept ordering).
    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    /// Indices of the original conditions that produced a basis element.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// Indices dropped as linearly dependent on earlier conditions.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// The i-th orthonormalized condition as a measure.
    pub fn combined(&self, i: usize) -> &Condition {
        &self.combined[i]
    }

    /// The embedded basis function (u e_i)(.).
    pub fn embedded(&self, i: usize) -> &EmbeddedFn {
        &self.embedded[i]
    }

    /// (u e_i)(s).
    pub fn basis_value(&self, i: usize, s: f64) -> Result<f64> {
        self.embedded[i].eval(s)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Max deviation of the recomputed inner products from the identity:
    /// max |<e_i, e_j> - delta_ij| over i, j up to the rank. Zero for an
    /// empty basis.
    pub fn residual_check(&self) -> Result<f64> {
        let r = self.rank();
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in 0..=i {
                let v = kernel_double_apply(&self.kernel, &self.combined[i], &self.combined[j])?;
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        Ok(worst)
    }
}

/// Modified Gram-Schmidt on the Gram matrix, tracking coefficient vectors.
pub fn orthonormalize(kernel: &Kernel, conditions: &[Condition]) -> Result<DetachedBasis> {
    let n = conditions.len();
    let g_rows = gram(kernel, conditions)?;
    let g = |i: usize, j: usize| g_rows[i][j];
    let bilinear = |a: &[f64], b: &[f64]| {
        let mut acc = 0.0;
        for i in 0..n {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                acc += a[i] * b[j] * g(i, j);
            }
        }
        acc
    };

    let max_diag = (0..n).map(|i| g(i, i)).fold(0.0, f64::max);
    let tol = RANK_TOL * max_diag;

    let mut coeffs: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..n {
        let mut c = vec![0.0; n];
        c[i] = 1.0;
        for row in &coeffs {
            let d = bilinear(&c, row);
            for (ck, rk) in c.iter_mut().zip(row) {
                *ck -= d * rk;
            }
        }
        let res_var = bilinear(&c, &c);
        if !(res_var > tol) {
            dropped.push(i);
            continue;
        }
        let inv_norm = 1.0 / res_var.sqrt();
        for ck in &mut c {
            *ck *= inv_norm;
        }
        kept.push(i);
        coeffs.push(c);
    }

    if n > 0 && coeffs.is_empty() {
        return Err(Error::Numeric("no effective conditions (rank 0)".into()));
    }

    let mut combined = Vec::with_capacity(coeffs.len());
    let mut embedded = Vec::with_capacity(coeffs.len());
    for row in &coeffs {
        let terms: Vec<(f64, &Condition)> = row
            .iter()
            .zip(conditions)
            .filter(|(&w, _)| w != 0.0)
            .map(|(&w, c)| (w, c))
            .collect();
        let cond = Condition::combine(&terms)?;
        embedded.push(kernel.embed(&cond));
        combined.push(cond);
    }

    Ok(DetachedBasis {
        kernel: kernel.clone(),
        conditions: conditions.to_vec(),
        coeffs,
        kept,
        dropped,
        combined,
        embedded,
    })
}
