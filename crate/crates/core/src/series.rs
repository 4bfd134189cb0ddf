//! Sampling the conditioned process from a truncated series expansion.
//!
//! The base process is expanded over an orthonormal basis of its generating
//! Hilbert space (the trigonometric basis for Brownian motion; other
//! Markovian kernels reuse it through the time change X = g * W o h). Rather
//! than re-orthonormalizing thousands of basis functions around the
//! conditions, each draw is deflated by projection: the detached component
//! sum_i (sum_j P_ij w_j) (u e_i) is subtracted, with P_ij the coordinates of
//! the conditions in the basis. The law depends only on the span, so this is
//! equivalent in the limit to summing over a deflated basis of the reduced
//! space, and the truncation's exact variance deficit is computable.

use crate::conditioning::ConditionedModel;
use crate::error::{Error, Result};
use crate::exppoly::{int_pow, int_xn_trig};
use crate::kernel::{Kernel, Path};
use crate::quad::gl_panels;
use crate::seeds::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

enum Mode {
    /// Constant g and linear time change: basis functions are exact
    /// trigonometric expressions and coordinates are closed-form integrals.
    Trig { gamma: f64, kappa: f64 },
    /// General Markovian kernel through its time change; coordinates by
    /// oscillation-aware panel quadrature.
    TimeChanged { kernel: Kernel },
}

pub struct SeriesBasis {
    /// Length of the Brownian time interval after the time change.
    l: f64,
    n_terms: usize,
    rank: usize,
    mode: Mode,
    /// P[i][j] = orthonormalized condition i applied to the j-th base
    /// function.
    coords: Vec<Vec<f64>>,
}

impl SeriesBasis {
    pub fn new(model: &ConditionedModel, n_terms: usize) -> Result<SeriesBasis> {
        let kernel = model.kernel();
        let Some(mf) = kernel.markov_factors() else {
            return Err(Error::Domain("series sampling requires a Markovian kernel".into()));
        };
        let rank = model.rank();
        if n_terms < rank {
            return Err(Error::Domain(format!(
                "n_terms = {n_terms} must be at least the basis rank {rank}"
            )));
        }
        let t_max = kernel.horizon();
        let l = kernel.time_change(t_max).expect("markov kernel");
        if !(l > 0.0) {
            return Err(Error::Domain(format!("degenerate time change, h(T) = {l}")));
        }
        let g0 = mf.g.eval(0.0);
        let kappa = l / t_max;
        let mut trig = true;
        for k in 0..=64 {
            let s = t_max * k as f64 / 64.0;
            let h = kernel.time_change(s).unwrap();
            if (mf.g.eval(s) - g0).abs() > 1e-12 * (1.0 + g0.abs())
                || (h - kappa * s).abs() > 1e-12 * (1.0 + l)
            {
                trig = false;
                break;
            }
        }
        let mode = if trig {
            Mode::Trig { gamma: g0, kappa }
        } else {
            Mode::TimeChanged { kernel: kernel.clone() }
        };
        let mut basis = SeriesBasis { l, n_terms, rank, mode, coords: Vec::new() };
        let mut coords = Vec::with_capacity(rank);
        for i in 0..rank {
            coords.push(basis.functional_values(model.basis().combined(i))?);
        }
        basis.coords = coords;
        Ok(basis)
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    /// Value of the j-th embedded base function at s.
    pub fn term_value(&self, j: usize, s: f64) -> f64 {
        match &self.mode {
            Mode::Trig { gamma, kappa } => {
                if j == 0 {
                    gamma * kappa * s / self.l.sqrt()
                } else {
                    let jf = j as f64;
                    gamma * (2.0 * self.l).sqrt() * (PI * jf * kappa * s / self.l).sin()
                        / (PI * jf)
                }
            }
            Mode::TimeChanged { kernel } => {
                let h = kernel.time_change(s).expect("markov kernel");
                let g = kernel.markov_factors().unwrap().g.eval(s);
                if j == 0 {
                    g * h / self.l.sqrt()
                } else {
                    let jf = j as f64;
                    g * (2.0 * self.l).sqrt() * (PI * jf * h / self.l).sin() / (PI * jf)
                }
            }
        }
    }

    /// A condition applied to every base function (exact in the trig mode).
    pub fn functional_values(&self, cond: &crate::conditions::Condition) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_terms);
        for j in 0..self.n_terms {
            out.push(self.apply_condition_to_term(cond, j)?);
        }
        Ok(out)
    }

    fn apply_condition_to_term(
        &self,
        cond: &crate::conditions::Condition,
        j: usize,
    ) -> Result<f64> {
        let mut acc = cond.atom_apply(|t| self.term_value(j, t), f64::NEG_INFINITY, f64::INFINITY);
        match &self.mode {
            Mode::Trig { gamma, kappa } => {
                if j == 0 {
                    let slope = gamma * kappa / self.l.sqrt();
                    for p in cond.density() {
                        for (m, &c) in p.coeffs.iter().enumerate() {
                            acc += slope * c * int_pow(p.lo, p.hi, m as u32 + 1);
                        }
                    }
                } else {
                    let jf = j as f64;
                    let amp = gamma * (2.0 * self.l).sqrt() / (PI * jf);
                    let omega = PI * jf * kappa / self.l;
                    for p in cond.density() {
                        for (m, &c) in p.coeffs.iter().enumerate() {
                            let (s_int, _) = int_xn_trig(m as u32, omega, p.lo, p.hi);
                            acc += amp * c * s_int;
                        }
                    }
                }
            }
            Mode::TimeChanged { kernel } => {
                for p in cond.density() {
                    let dh = kernel.time_change(p.hi).unwrap() - kernel.time_change(p.lo).unwrap();
                    let panels = 4 + (2.0 * j as f64 * dh / self.l).ceil() as usize;
                    let coeffs = p.coeffs.clone();
                    acc += gl_panels(
                        &|x: f64| {
                            crate::exppoly::poly_eval(&coeffs, x) * self.term_value(j, x)
                        },
                        p.lo,
                        p.hi,
                        panels,
                    );
                }
            }
        }
        Ok(acc)
    }

    /// Prepared sampler for a fixed grid: base-function and basis-function
    /// values are tabulated once and each draw is a pair of small
    /// matrix-vector products.
    pub fn sampler<'a>(
        &'a self,
        model: &ConditionedModel,
        grid: &[f64],
    ) -> Result<SeriesSampler<'a>> {
        let g = grid.len();
        let mut design = vec![0.0; self.n_terms * g];
        for j in 0..self.n_terms {
            for (k, &s) in grid.iter().enumerate() {
                design[j * g + k] = self.term_value(j, s);
            }
        }
        let ue_grid = model.basis_on_grid(grid)?;
        // Per-term condition residuals of the deflated functions:
        // a_l(u d_j) = a_l(u h_j) - sum_i B[l][i] P[i][j]; exactly zero in
        // theory, carried so each sampled draw can report its own residual.
        let b = model.b_matrix();
        let mut resid_terms = Vec::with_capacity(self.rank);
        for (row, &l_idx) in model.basis().kept().iter().enumerate() {
            let av = self.functional_values(&model.basis().conditions()[l_idx])?;
            let mut r = Vec::with_capacity(self.n_terms);
            for j in 0..self.n_terms {
                let mut v = av[j];
                for i in 0..self.rank {
                    v -= b[row][i] * self.coords[i][j];
                }
                r.push(v);
            }
            resid_terms.push(r);
        }
        Ok(SeriesSampler {
            basis: self,
            grid: grid.to_vec(),
            design,
            ue_grid,
            resid_terms,
        })
    }
}

pub struct SeriesSampler<'a> {
    basis: &'a SeriesBasis,
    grid: Vec<f64>,
    /// term-major: design[j * grid_len + k]
    design: Vec<f64>,
    ue_grid: Vec<Vec<f64>>,
    resid_terms: Vec<Vec<f64>>,
}

impl SeriesSampler<'_> {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Draw one conditioned path; returns grid values and the per-condition
    /// residuals of the exact truncated expansion behind them.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid.len();
        let n = self.basis.n_terms;
        let r = self.basis.rank;
        let omegas: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut values = vec![0.0; g];
        for (j, &w) in omegas.iter().enumerate() {
            let row = &self.design[j * g..(j + 1) * g];
            for (v, &d) in values.iter_mut().zip(row) {
                *v += w * d;
            }
        }
        for i in 0..r {
            let c: f64 = self.basis.coords[i].iter().zip(&omegas).map(|(p, w)| p * w).sum();
            for (v, &u) in values.iter_mut().zip(&self.ue_grid[i]) {
                *v -= c * u;
            }
        }
        let residuals: Vec<f64> = self
            .resid_terms
            .iter()
            .map(|terms| terms.iter().zip(&omegas).map(|(t, w)| t * w).sum())
            .collect();
        (values, residuals)
    }

    pub fn sample_path(&self, seed: u64) -> Result<Path> {
        let mut rng = stream_rng(seed, 0);
        let (values, _) = self.sample_with(&mut rng);
        Path::new(self.grid.clone(), values)
    }

    /// sup over the grid of |cond_cov(s,s) - truncated variance at s|: the
    /// exact variance deficit of the truncation.
    pub fn truncation_error(&self, model: &ConditionedModel) -> Result<f64> {
        let g = self.grid.len();
        let n = self.basis.n_terms;
        let r = self.basis.rank;
        let mut worst: f64 = 0.0;
        for k in 0..g {
            let mut var = 0.0;
            for j in 0..n {
                let mut d = self.design[j * g + k];
                for i in 0..r {
                    d -= self.basis.coords[i][j] * self.ue_grid[i][k];
                }
                var += d * d;
            }
            let target = model.cond_cov(self.grid[k], self.grid[k])?;
            worst = worst.max((target - var).abs());
        }
        Ok(worst)
    }
}

/// One-shot draw from the truncated conditioned expansion.
pub fn sample_series(
    sb: &SeriesBasis,
    model: &ConditionedModel,
    grid: &[f64],
    seed: u64,
) -> Result<Path> {
    sb.sampler(model, grid)?.sample_path(seed)
}

/// sup-norm estimate of the truncation's variance deficit on the grid.
pub fn series_truncation_error(
    sb: &SeriesBasis,
    model: &ConditionedModel,
    grid: &[f64],
) -> Result<f64> {
    sb.sampler(model, grid)?.truncation_error(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::Condition;

    fn zabb_model() -> ConditionedModel {
        ConditionedModel::new(
            Kernel::brownian(1.0).unwrap(),
            vec![Condition::endpoint(1.0), Condition::unit_density(1.0)],
        )
        .unwrap()
    }

    fn bridge_model() -> ConditionedModel {
        ConditionedModel::new(Kernel::brownian(1.0).unwrap(), vec![Condition::endpoint(1.0)])
            .unwrap()
    }

    #[test]
    fn rejects_too_few_terms() {
        let m = zabb_model();
        assert!(SeriesBasis::new(&m, 1).is_err());
        assert!(SeriesBasis::new(&m, 2).is_ok());
    }

    #[test]
    fn brownian_basis_is_the_trigonometric_one() {
        let m = bridge_model();
        let sb = SeriesBasis::new(&m, 8).unwrap();
        for s in [0.2, 0.5, 0.8] {
            assert!((sb.term_value(0, s) - s).abs() < 1e-14);
            for j in 1..8 {
                let expect = 2.0f64.sqrt() * (PI * j as f64 * s).sin() / (PI * j as f64);
                assert!((sb.term_value(j, s) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bridge_deflation_removes_the_linear_term_exactly() {
        let m = bridge_model();
        let sb = SeriesBasis::new(&m, 64).unwrap();
        assert!((sb.coords()[0][0] - 1.0).abs() < 1e-13);
        for j in 1..64 {
            assert!(sb.coords()[0][j].abs() < 1e-13);
        }
        // with exactly rank terms everything is deflated: the zero path
        let sb1 = SeriesBasis::new(&m, 1).unwrap();
        let grid = Path::uniform_grid(1.0, 33);
        let p = sample_series(&sb1, &m, &grid, 5).unwrap();
        assert!(p.values().iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn coordinate_rows_are_nearly_orthonormal() {
        let m = zabb_model();
        let sb = SeriesBasis::new(&m, 2048).unwrap();
        let p = sb.coords();
        for i in 0..2 {
            for k in 0..2 {
                let dot: f64 = p[i].iter().zip(&p[k]).map(|(a, b)| a * b).sum();
                let target = if i == k { 1.0 } else { 0.0 };
                assert!(
                    (dot - target).abs() < 5e-3,
                    "P P^T [{i}][{k}] = {dot}"
                );
            }
        }
    }

    #[test]
    fn deflated_terms_satisfy_conditions() {
        let m = zabb_model();
        let sb = SeriesBasis::new(&m, 256).unwrap();
        let grid = Path::uniform_grid(1.0, 64);
        let sampler = sb.sampler(&m, &grid).unwrap();
        for terms in &sampler.resid_terms {
            for &v in terms {
                assert!(v.abs() < 1e-9, "deflated-term residual {v}");
            }
        }
    }

    #[test]
    fn bridge_variance_at_half() {
        let m = bridge_model();
        let sb = SeriesBasis::new(&m, 1024).unwrap();
        let grid = vec![0.0, 0.5, 1.0];
        let sampler = sb.sampler(&m, &grid).unwrap();
        let n = 20_000u64;
        let mut acc = 0.0;
        for idx in 0..n {
            let mut rng = stream_rng(3, idx);
            let (vals, _) = sampler.sample_with(&mut rng);
            acc += vals[1] * vals[1];
        }
        let var = acc / n as f64;
        assert!((var - 0.25).abs() < 0.01, "Var(B_1/2) = {var}");
    }

    #[test]
    fn zabb_covariance_small_budget() {
        let m = zabb_model();
        let sb = SeriesBasis::new(&m, 512).unwrap();
        let grid = vec![0.0, 0.3, 0.7, 1.0];
        let sampler = sb.sampler(&m, &grid).unwrap();
        let n = 40_000u64;
        let mut acc = 0.0;
        for idx in 0..n {
            let mut rng = stream_rng(8, idx);
            let (vals, _) = sampler.sample_with(&mut rng);
            acc += vals[1] * vals[2];
        }
        let est = acc / n as f64;
        let target = -0.0423;
        let se = ((0.0525 * 0.0609 + target * target) / n as f64).sqrt();
        assert!((est - target).abs() < 4.0 * se, "est {est}, se {se}");
    }

    #[test]
    fn truncation_error_decays_at_the_expected_rate() {
        let m = zabb_model();
        let grid = Path::uniform_grid(1.0, 101);
        let mut last = f64::INFINITY;
        for terms in [16, 64, 256] {
            let sb = SeriesBasis::new(&m, terms).unwrap();
            let err = series_truncation_error(&sb, &m, &grid).unwrap();
            assert!(err < last, "deficit must decrease: {err} !< {last}");
            last = err;
        }
        let e256 = series_truncation_error(&SeriesBasis::new(&m, 256).unwrap(), &m, &grid)
            .unwrap();
        let e1024 = series_truncation_error(&SeriesBasis::new(&m, 1024).unwrap(), &m, &grid)
            .unwrap();
        let ratio = e256 / e1024;
        assert!((3.0..=5.0).contains(&ratio), "deficit ratio {ratio}");
    }

    #[test]
    fn no_conditions_no_terms_deficit_is_total_variance() {
        let m = ConditionedModel::unconditioned(Kernel::brownian(1.0).unwrap());
        let sb = SeriesBasis::new(&m, 0).unwrap();
        let grid = Path::uniform_grid(1.0, 11);
        let err = series_truncation_error(&sb, &m, &grid).unwrap();
        assert!((err - 1.0).abs() < 1e-14, "sup R(s,s) = T, got {err}");
    }

    #[test]
    fn time_changed_mode_matches_conditioned_covariance() {
        // OU kernel goes through the general (quadrature) route.
        let k = Kernel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let m = ConditionedModel::new(k, vec![Condition::endpoint(1.0)]).unwrap();
        let sb = SeriesBasis::new(&m, 256).unwrap();
        let grid = vec![0.0, 0.4, 0.8, 1.0];
        let sampler = sb.sampler(&m, &grid).unwrap();
        let deficit = sampler.truncation_error(&m).unwrap();
        let n = 20_000u64;
        let (mut acc, mut acc_var) = (0.0, 0.0);
        for idx in 0..n {
            let mut rng = stream_rng(12, idx);
            let (vals, _) = sampler.sample_with(&mut rng);
            acc += vals[1] * vals[2];
            acc_var += vals[1] * vals[1];
        }
        let est = acc / n as f64;
        let est_var = acc_var / n as f64;
        let target = m.cond_cov(0.4, 0.8).unwrap();
        let target_var = m.cond_cov(0.4, 0.4).unwrap();
        let se = ((target_var + target * target) / n as f64).sqrt().max(1e-3);
        assert!(
            (est - target).abs() < 4.0 * se + deficit,
            "est {est}, target {target}, se {se}, deficit {deficit}"
        );
        assert!(
            (est_var - target_var).abs() < 4.0 * se + deficit,
            "var {est_var}, target {target_var}"
        );
    }
}
