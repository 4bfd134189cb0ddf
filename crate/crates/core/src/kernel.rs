//! Base-process covariance kernels.
//!
//! Markovian kernels carry the factorization R(s,t) = f(min) * g(max), which
//! is what the drift machinery needs: it implies X_s = g(s) * W_{h(s)} with
//! h = f/g (convention 0/0 = 0), giving exact transition sampling and exact
//! closed-form integrals of the kernel against measures whenever f and g are
//! piecewise polynomial or exponential. Kernels given only as a covariance
//! map fall back to dense Cholesky sampling and adaptive quadrature.

use crate::conditions::{Condition, PiecewisePoly, PolyPiece};
use crate::error::{Error, Result};
use crate::exppoly::{poly_integral, poly_mul, ExpPoly, Seg, Term};
use crate::quad::adaptive_gl;
use crate::seeds::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

/// Absolute tolerance for the quadrature fallback.
pub const QUAD_TOL: f64 = 1e-12;

/// One factor of a Markovian covariance factorization.
#[derive(Clone, Debug)]
pub enum Factor {
    Poly(PiecewisePoly),
    /// scale * exp(rate * x)
    Exp { scale: f64, rate: f64 },
}

impl Factor {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Factor::Poly(p) => p.eval(x),
            Factor::Exp { scale, rate } => scale * (rate * x).exp(),
        }
    }

    /// The factor as a piecewise polynomial, when it is one.
    pub fn as_poly(&self) -> Option<&PiecewisePoly> {
        match self {
            Factor::Poly(p) => Some(p),
            Factor::Exp { .. } => None,
        }
    }

    pub(crate) fn to_exppoly(&self, horizon: f64) -> ExpPoly {
        match self {
            Factor::Poly(p) => p.to_exppoly(),
            Factor::Exp { scale, rate } => ExpPoly::new(vec![Seg {
                lo: 0.0,
                hi: horizon,
                terms: vec![Term { coeff: *scale, pow: 0, rate: *rate }],
            }]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MarkovFactors {
    pub f: Factor,
    pub g: Factor,
}

type CovFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// Covariance of a centered continuous Gaussian process on [0, T].
#[derive(Clone)]
pub struct Kernel {
    horizon: f64,
    markov: Option<MarkovFactors>,
    custom_cov: Option<Arc<CovFn>>,
    alpha: Option<f64>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel")
            .field("horizon", &self.horizon)
            .field("markov", &self.markov)
            .field("alpha", &self.alpha)
            .field("custom", &self.custom_cov.is_some())
            .finish()
    }
}

impl Kernel {
    /// Standard Brownian motion on [0, T]: f(s) = s, g = 1, alpha = 1.
    pub fn brownian(horizon: f64) -> Result<Kernel> {
        let f = Factor::Poly(PiecewisePoly::new(vec![PolyPiece {
            lo: 0.0,
            hi: horizon,
            coeffs: vec![0.0, 1.0],
        }])?);
        let g = Factor::Poly(PiecewisePoly::constant(1.0, horizon));
        Kernel::with_factors(horizon, f, g, Some(1.0))
    }

    /// Stationary unit-variance Ornstein-Uhlenbeck process:
    /// R(s,t) = exp(-rate |t - s|), f(s) = e^{rate s}, g(t) = e^{-rate t}.
    pub fn ornstein_uhlenbeck(horizon: f64, rate: f64) -> Result<Kernel> {
        if !(rate > 0.0) {
            return Err(Error::Domain(format!("OU rate must be positive, got {rate}")));
        }
        let f = Factor::Exp { scale: 1.0, rate };
        let g = Factor::Exp { scale: 1.0, rate: -rate };
        Kernel::with_factors(horizon, f, g, Some((2.0 * rate).sqrt()))
    }

    /// Markovian kernel from user-supplied piecewise-polynomial factors.
    pub fn custom_fg(
        horizon: f64,
        f: PiecewisePoly,
        g: PiecewisePoly,
        alpha: Option<f64>,
    ) -> Result<Kernel> {
        Kernel::with_factors(horizon, Factor::Poly(f), Factor::Poly(g), alpha)
    }

    /// Kernel given only as a covariance map. Sampling uses dense Cholesky,
    /// integrals use adaptive quadrature; no drift machinery is available.
    pub fn from_cov<F>(horizon: f64, cov: F) -> Result<Kernel>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        if !(horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Kernel { horizon, markov: None, custom_cov: Some(Arc::new(cov)), alpha: None })
    }

    fn with_factors(horizon: f64, f: Factor, g: Factor, alpha: Option<f64>) -> Result<Kernel> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        // Variance must not vanish in the interior (conditioning across a
        // zero-variance region is not defined here), and the time change
        // h = f/g must be a non-negative non-decreasing function.
        const CHECK: usize = 1024;
        let mut prev_h = f64::NEG_INFINITY;
        for k in 0..=CHECK {
            let s = horizon * k as f64 / CHECK as f64;
            let (fv, gv) = (f.eval(s), g.eval(s));
            if !fv.is_finite() || !gv.is_finite() {
                return Err(Error::Domain(format!("kernel factor not finite at s={s}")));
            }
            if k > 0 && k < CHECK && fv * gv <= 0.0 {
                return Err(Error::Domain(format!(
                    "kernel variance f(s)g(s) = {} not positive at s={s}; \
                     degenerate-support kernels are rejected",
                    fv * gv
                )));
            }
            let h = if fv == 0.0 && gv == 0.0 { 0.0 } else { fv / gv };
            if h < -1e-12 || h < prev_h - 1e-12 * (1.0 + h.abs()) {
                return Err(Error::Domain(format!(
                    "time change h = f/g must be non-negative and non-decreasing (h({s}) = {h})"
                )));
            }
            prev_h = prev_h.max(h);
        }
        Ok(Kernel { horizon, markov: Some(MarkovFactors { f, g }), custom_cov: None, alpha })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn markov_factors(&self) -> Option<&MarkovFactors> {
        self.markov.as_ref()
    }

    /// Diffusion coefficient of the base SDE, when known.
    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    /// R(s, t).
    pub fn cov(&self, s: f64, t: f64) -> f64 {
        match (&self.markov, &self.custom_cov) {
            (Some(mf), _) => mf.f.eval(s.min(t)) * mf.g.eval(s.max(t)),
            (None, Some(c)) => c(s, t),
            (None, None) => unreachable!("kernel has no covariance"),
        }
    }

    /// Time change h = f/g with the convention 0/0 = 0.
    pub fn time_change(&self, s: f64) -> Option<f64> {
        self.markov.as_ref().map(|mf| {
            let (fv, gv) = (mf.f.eval(s), mf.g.eval(s));
            if fv == 0.0 && gv == 0.0 {
                0.0
            } else {
                fv / gv
            }
        })
    }

    /// The function s -> int R(s, x) c(dx): the kernel embedding of the
    /// measure, closed form for Markovian kernels.
    pub fn embed(&self, c: &Condition) -> EmbeddedFn {
        match &self.markov {
            Some(mf) => {
                let t_max = self.horizon;
                let f_ep = mf.f.to_exppoly(t_max);
                let g_ep = mf.g.to_exppoly(t_max);
                let dens = c.density_exppoly();
                // F(x) = int_{[0,x]} f dc, G(x) = int_{(x,T]} g dc, so that
                // (u u* c)(s) = g(s) F(s) + f(s) G(s).
                let f_run = cover(&f_ep.mul(&dens).prefix_integral(), t_max).add(&atom_steps(
                    c,
                    |t| mf.f.eval(t),
                    t_max,
                    StepSide::Prefix,
                ));
                let g_tail = cover(&g_ep.mul(&dens).suffix_integral(), t_max).add(&atom_steps(
                    c,
                    |t| mf.g.eval(t),
                    t_max,
                    StepSide::Suffix,
                ));
                EmbeddedFn::exact_new(g_ep.mul(&f_run).add(&f_ep.mul(&g_tail)))
            }
            None => EmbeddedFn::numeric_new(
                self.custom_cov.clone().expect("kernel has a covariance"),
                c.clone(),
            ),
        }
    }

    /// Sample the process on `grid` with the exact finite-dimensional law.
    /// Markov kernels use time-changed Brownian increments; otherwise a dense
    /// Cholesky factorization of the grid covariance.
    pub fn sample_path(&self, grid: &[f64], seed: u64) -> Result<Path> {
        let mut rng = stream_rng(seed, 0);
        self.sample_path_with(grid, &mut rng)
    }

    pub(crate) fn sample_path_with<R: Rng + ?Sized>(
        &self,
        grid: &[f64],
        rng: &mut R,
    ) -> Result<Path> {
        match &self.markov {
            Some(mf) => {
                let h: Vec<f64> = grid
                    .iter()
                    .map(|&s| self.time_change(s).expect("markov kernel"))
                    .collect();
                let mut values = Vec::with_capacity(grid.len());
                let mut w = if h[0] > 0.0 {
                    h[0].sqrt() * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                values.push(mf.g.eval(grid[0]) * w);
                for k in 1..grid.len() {
                    let dv = (h[k] - h[k - 1]).max(0.0);
                    w += dv.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    values.push(mf.g.eval(grid[k]) * w);
                }
                Path::new(grid.to_vec(), values)
            }
            None => self.sample_path_cholesky_with(grid, rng),
        }
    }

    /// Dense-Cholesky sampler (any kernel, grids up to 4096 points). Grid
    /// points with zero variance are pinned to zero, as the law requires.
    pub fn sample_path_cholesky(&self, grid: &[f64], seed: u64) -> Result<Path> {
        let mut rng = stream_rng(seed, 0);
        self.sample_path_cholesky_with(grid, &mut rng)
    }

    pub(crate) fn sample_path_cholesky_with<R: Rng + ?Sized>(
        &self,
        grid: &[f64],
        rng: &mut R,
    ) -> Result<Path> {
        if grid.len() > 4096 {
            return Err(Error::Domain(format!(
                "dense Cholesky sampling supports at most 4096 grid points, got {}",
                grid.len()
            )));
        }
        let live: Vec<usize> =
            (0..grid.len()).filter(|&i| self.cov(grid[i], grid[i]) > 0.0).collect();
        let n = live.len();
        let mut sigma = crate::linalg::Mat::zeros(n);
        for a in 0..n {
            for b in 0..n {
                sigma.set(a, b, self.cov(grid[live[a]], grid[live[b]]));
            }
        }
        let l = crate::linalg::cholesky(&sigma, "grid covariance")?;
        let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut values = vec![0.0; grid.len()];
        for a in 0..n {
            let mut acc = 0.0;
            for b in 0..=a {
                acc += l.get(a, b) * z[b];
            }
            values[live[a]] = acc;
        }
        Path::new(grid.to_vec(), values)
    }
}

/// The function s -> int R(s, x) c(dx), exact when the kernel factorizes.
#[derive(Clone)]
pub struct EmbeddedFn {
    inner: EmbeddedInner,
}

#[derive(Clone)]
enum EmbeddedInner {
    Exact(ExpPoly),
    Numeric { cov: Arc<CovFn>, cond: Condition },
}

impl EmbeddedFn {
    fn exact_new(ep: ExpPoly) -> Self {
        EmbeddedFn { inner: EmbeddedInner::Exact(ep) }
    }

    fn numeric_new(cov: Arc<CovFn>, cond: Condition) -> Self {
        EmbeddedFn { inner: EmbeddedInner::Numeric { cov, cond } }
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        match &self.inner {
            EmbeddedInner::Exact(ep) => Ok(ep.eval(s)),
            EmbeddedInner::Numeric { cov, cond } => {
                let mut acc = cond.atom_apply(|t| cov(s, t), f64::NEG_INFINITY, f64::INFINITY);
                for p in cond.density() {
                    let coeffs = p.coeffs.clone();
                    let f = |x: f64| crate::exppoly::poly_eval(&coeffs, x) * cov(s, x);
                    // split at the diagonal, where kernels routinely kink
                    if p.lo < s && s < p.hi {
                        acc += adaptive_gl(&f, p.lo, s, 0.5 * QUAD_TOL)?;
                        acc += adaptive_gl(&f, s, p.hi, 0.5 * QUAD_TOL)?;
                    } else {
                        acc += adaptive_gl(&f, p.lo, p.hi, QUAD_TOL)?;
                    }
                }
                Ok(acc)
            }
        }
    }

    pub(crate) fn exact(&self) -> Option<&ExpPoly> {
        match &self.inner {
            EmbeddedInner::Exact(ep) => Some(ep),
            EmbeddedInner::Numeric { .. } => None,
        }
    }

    /// Apply a condition to this function over the full horizon.
    pub(crate) fn apply_condition(&self, c: &Condition) -> Result<f64> {
        match &self.inner {
            EmbeddedInner::Exact(ep) => {
                Ok(c.apply_exppoly(ep, f64::NEG_INFINITY, f64::INFINITY))
            }
            EmbeddedInner::Numeric { .. } => {
                let mut acc = 0.0;
                for a in c.atoms() {
                    acc += a.w * self.eval(a.t)?;
                }
                for p in c.density() {
                    let coeffs = p.coeffs.clone();
                    let err = std::cell::Cell::new(None);
                    let v = adaptive_gl(
                        &|x: f64| {
                            let d = crate::exppoly::poly_eval(&coeffs, x);
                            match self.eval(x) {
                                Ok(v) => d * v,
                                Err(e) => {
                                    err.set(Some(e));
                                    0.0
                                }
                            }
                        },
                        p.lo,
                        p.hi,
                        QUAD_TOL,
                    )?;
                    if let Some(e) = err.take() {
                        return Err(e);
                    }
                    acc += v;
                }
                Ok(acc)
            }
        }
    }
}

/// int R(s, x) c(dx) evaluated at s.
pub fn kernel_apply(k: &Kernel, c: &Condition, s: f64) -> Result<f64> {
    if !(0.0..=k.horizon()).contains(&s) {
        return Err(Error::Domain(format!("s={s} outside [0, {}]", k.horizon())));
    }
    k.embed(c).eval(s)
}

/// The double integral: Cov(int X dc1, int X dc2).
pub fn kernel_double_apply(k: &Kernel, c1: &Condition, c2: &Condition) -> Result<f64> {
    k.embed(c1).apply_condition(c2)
}

enum StepSide {
    Prefix,
    Suffix,
}

/// Step function of the atom part: x -> sum over atoms in [0,x] (prefix) or
/// (x,T] (suffix) of w * weight(t). Values are exact on segment interiors;
/// the carried embeddings are continuous, so boundary ties never matter.
fn atom_steps<W: Fn(f64) -> f64>(c: &Condition, weight: W, t_max: f64, side: StepSide) -> ExpPoly {
    let atoms = c.atoms();
    if atoms.is_empty() {
        return ExpPoly::zero();
    }
    let mut cuts = vec![0.0];
    for a in atoms {
        if a.t > 0.0 && a.t < t_max {
            cuts.push(a.t);
        }
    }
    cuts.push(t_max);
    cuts.dedup();
    let mut segs = Vec::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let value: f64 = match side {
            StepSide::Prefix => {
                atoms.iter().filter(|a| a.t <= mid).map(|a| a.w * weight(a.t)).sum()
            }
            StepSide::Suffix => {
                atoms.iter().filter(|a| a.t > mid).map(|a| a.w * weight(a.t)).sum()
            }
        };
        segs.push(Seg { lo: w[0], hi: w[1], terms: vec![Term::poly(value, 0)] });
    }
    ExpPoly::new(segs)
}

/// Extend a piecewise carrier so that it covers [0, t_max], holding its
/// boundary values constant across gaps (the carrier is a running integral,
/// constant where the integrand vanishes).
fn cover(ep: &ExpPoly, t_max: f64) -> ExpPoly {
    let Some((lo, hi)) = ep.support() else {
        return ExpPoly::zero();
    };
    let mut out = ep.clone();
    if lo > 0.0 {
        out = out.add(&ExpPoly::constant(ep.eval(lo), 0.0, lo));
    }
    if hi < t_max {
        out = out.add(&ExpPoly::constant(ep.eval(hi), hi, t_max));
    }
    out
}

// ---------------------------------------------------------------------------
// paths
// ---------------------------------------------------------------------------

/// A trajectory sampled on a strictly increasing grid starting at 0,
/// interpreted everywhere else as the piecewise-linear interpolant.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl Path {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Path> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::Domain(format!(
                "path needs matching grid/values with at least 2 points (got {} / {})",
                grid.len(),
                values.len()
            )));
        }
        if grid[0] != 0.0 {
            return Err(Error::Domain(format!("path grid must start at 0, got {}", grid[0])));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("path grid must be strictly increasing".into()));
        }
        Ok(Path { grid, values })
    }

    /// Uniform grid of n+1 points on [0, t_max]; the endpoint is exact.
    pub fn uniform_grid(t_max: f64, n: usize) -> Vec<f64> {
        (0..=n)
            .map(|k| if k == n { t_max } else { t_max * k as f64 / n as f64 })
            .collect()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn span(&self) -> (f64, f64) {
        (self.grid[0], *self.grid.last().unwrap())
    }

    /// Linear interpolation; clamps to the end values outside the grid.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.grid.len();
        if t <= self.grid[0] {
            return self.values[0];
        }
        if t >= self.grid[n - 1] {
            return self.values[n - 1];
        }
        let i = self.grid.partition_point(|&g| g <= t) - 1;
        let w = (t - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    /// Exact integral of poly(x) * path(x) over the piece.
    pub(crate) fn integrate_against_poly(&self, piece: &PolyPiece) -> f64 {
        let n = self.grid.len();
        let mut acc = 0.0;
        let start = self.grid.partition_point(|&g| g <= piece.lo).saturating_sub(1);
        for i in start..n - 1 {
            let (g0, g1) = (self.grid[i], self.grid[i + 1]);
            if g0 >= piece.hi {
                break;
            }
            let a = g0.max(piece.lo);
            let b = g1.min(piece.hi);
            if b <= a {
                continue;
            }
            let m = (self.values[i + 1] - self.values[i]) / (g1 - g0);
            let lin = [self.values[i] - m * g0, m];
            acc += poly_integral(&poly_mul(&piece.coeffs, &lin), a, b);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_eigenvalues, Mat};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn brownian_cov_and_symmetry() {
        let k = Kernel::brownian(1.0).unwrap();
        assert!(close(k.cov(0.3, 0.8), 0.3, 1e-15));
        let pts = [0.05, 0.31, 0.5, 0.77, 0.93];
        for &s in &pts {
            for &t in &pts {
                assert!(close(k.cov(s, t), k.cov(t, s), 1e-14));
            }
        }
    }

    #[test]
    fn grid_gram_is_psd() {
        for k in [
            Kernel::brownian(1.0).unwrap(),
            Kernel::ornstein_uhlenbeck(1.0, 0.7).unwrap(),
        ] {
            let n = 48;
            let grid: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
            let mut m = Mat::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    m.set(i, j, k.cov(grid[i], grid[j]));
                }
            }
            let eig = sym_eigenvalues(&m);
            let max_diag = (0..n).map(|i| m.get(i, i)).fold(0.0, f64::max);
            assert!(eig[0] >= -1e-10 * max_diag, "min eigenvalue {}", eig[0]);
        }
    }

    #[test]
    fn kernel_apply_brownian_examples() {
        let k = Kernel::brownian(1.0).unwrap();
        let d1 = Condition::endpoint(1.0);
        assert!(close(kernel_apply(&k, &d1, 0.7).unwrap(), 0.7, 1e-14));

        let a0 = Condition::unit_density(1.0);
        // int_0^1 min(s,x) dx = s - s^2/2
        for s in [0.1, 0.5, 0.9] {
            assert!(close(kernel_apply(&k, &a0, s).unwrap(), s - s * s / 2.0, 1e-14));
        }
        assert!(close(kernel_apply(&k, &a0, 0.5).unwrap(), 0.375, 1e-14));

        let s3 = 3.0f64.sqrt();
        let e2 = Condition::combine(&[(2.0 * s3, &a0), (-s3, &d1)]).unwrap();
        assert!(close(kernel_apply(&k, &e2, 0.5).unwrap(), s3 / 4.0, 1e-13));
        for s in [0.2, 0.35, 0.8] {
            assert!(close(kernel_apply(&k, &e2, s).unwrap(), s3 * (s - s * s), 1e-13));
        }
    }

    #[test]
    fn double_apply_brownian_examples() {
        let k = Kernel::brownian(1.0).unwrap();
        let d1 = Condition::endpoint(1.0);
        let a0 = Condition::unit_density(1.0);
        assert!(close(kernel_double_apply(&k, &d1, &d1).unwrap(), 1.0, 1e-14));
        assert!(close(kernel_double_apply(&k, &d1, &a0).unwrap(), 0.5, 1e-14));
        assert!(close(kernel_double_apply(&k, &a0, &d1).unwrap(), 0.5, 1e-14));
        assert!(close(kernel_double_apply(&k, &a0, &a0).unwrap(), 1.0 / 3.0, 1e-14));
    }

    #[test]
    fn double_apply_matches_quadrature_route() {
        // Same covariance via the quadrature fallback: an independent route.
        let exact = Kernel::brownian(1.0).unwrap();
        let quad = Kernel::from_cov(1.0, |s, t| s.min(t)).unwrap();
        let d1 = Condition::endpoint(1.0);
        let a0 = Condition::unit_density(1.0);
        for (c1, c2) in [(&d1, &a0), (&a0, &a0), (&d1, &d1)] {
            let a = kernel_double_apply(&exact, c1, c2).unwrap();
            let b = kernel_double_apply(&quad, c1, c2).unwrap();
            assert!(close(a, b, 1e-9), "{a} vs {b}");
        }
    }

    #[test]
    fn double_apply_self_nonnegative() {
        let k = Kernel::ornstein_uhlenbeck(1.0, 1.3).unwrap();
        let c = Condition::new(
            1.0,
            vec![crate::conditions::Atom { t: 0.3, w: -2.0 }],
            vec![PolyPiece { lo: 0.2, hi: 0.9, coeffs: vec![1.0, -3.0, 1.5] }],
        )
        .unwrap();
        assert!(kernel_double_apply(&k, &c, &c).unwrap() >= -1e-10);
    }

    #[test]
    fn gapped_density_embedding_matches_quadrature() {
        // density support with an interior hole, plus atoms on both sides
        let c = Condition::new(
            1.0,
            vec![
                crate::conditions::Atom { t: 0.15, w: 1.2 },
                crate::conditions::Atom { t: 0.85, w: -0.4 },
            ],
            vec![
                PolyPiece { lo: 0.05, hi: 0.3, coeffs: vec![1.0, -1.0] },
                PolyPiece { lo: 0.6, hi: 0.9, coeffs: vec![0.5, 0.0, 2.0] },
            ],
        )
        .unwrap();
        let exact = Kernel::brownian(1.0).unwrap();
        let quad = Kernel::from_cov(1.0, |s, t| s.min(t)).unwrap();
        for s in [0.0, 0.1, 0.45, 0.7, 1.0] {
            let a = kernel_apply(&exact, &c, s).unwrap();
            let b = kernel_apply(&quad, &c, s).unwrap();
            assert!(close(a, b, 1e-10), "s={s}: {a} vs {b}");
        }
        let d1 = Condition::endpoint(1.0);
        let a = kernel_double_apply(&exact, &c, &d1).unwrap();
        let b = kernel_double_apply(&quad, &c, &d1).unwrap();
        assert!(close(a, b, 1e-10), "{a} vs {b}");
        let a = kernel_double_apply(&exact, &c, &c).unwrap();
        let b = kernel_double_apply(&quad, &c, &c).unwrap();
        assert!(close(a, b, 1e-9), "{a} vs {b}");
    }

    #[test]
    fn ou_embedding_matches_quadrature() {
        let rate = 0.8;
        let exact = Kernel::ornstein_uhlenbeck(1.0, rate).unwrap();
        let quad = Kernel::from_cov(1.0, move |s, t| (-rate * (s - t).abs()).exp()).unwrap();
        let c = Condition::new(
            1.0,
            vec![crate::conditions::Atom { t: 0.6, w: 0.7 }],
            vec![PolyPiece { lo: 0.0, hi: 1.0, coeffs: vec![0.5, 1.0] }],
        )
        .unwrap();
        for s in [0.0, 0.25, 0.6, 1.0] {
            let a = kernel_apply(&exact, &c, s).unwrap();
            let b = kernel_apply(&quad, &c, s).unwrap();
            assert!(close(a, b, 1e-10), "s={s}: {a} vs {b}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let k = Kernel::brownian(1.0).unwrap();
        let grid = Path::uniform_grid(1.0, 64);
        let a = k.sample_path(&grid, 42).unwrap();
        let b = k.sample_path(&grid, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn brownian_terminal_variance() {
        let k = Kernel::brownian(1.0).unwrap();
        let grid = vec![0.0, 0.5, 1.0];
        let n = 100_000;
        let mut acc = 0.0;
        for seed in 0..n {
            let p = k.sample_path_with(&grid, &mut stream_rng(9, seed)).unwrap();
            let v = p.values()[2];
            acc += v * v;
        }
        let var = acc / n as f64;
        assert!((var - 1.0).abs() < 0.02, "Var(X_1) = {var}");
    }

    #[test]
    fn ou_covariance_empirical() {
        let k = Kernel::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let grid = vec![0.0, 0.3, 0.7];
        let n = 200_000;
        let mut acc = 0.0;
        for seed in 0..n {
            let p = k.sample_path_with(&grid, &mut stream_rng(11, seed)).unwrap();
            acc += p.values()[1] * p.values()[2];
        }
        let est = acc / n as f64;
        let target = (-0.4f64).exp();
        // std error of the product estimate is about sqrt((1 + target^2)/n)
        let se = ((1.0 + target * target) / n as f64).sqrt();
        assert!((est - target).abs() < 3.0 * se, "est {est}, target {target}, se {se}");
    }

    #[test]
    fn markov_and_cholesky_sampling_agree_in_law() {
        let k = Kernel::ornstein_uhlenbeck(1.0, 0.9).unwrap();
        let grid: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        let n = 100_000usize;
        let (si, sj) = (2usize, 6usize);
        let mut acc_m = 0.0;
        let mut acc_c = 0.0;
        for seed in 0..n as u64 {
            let pm = k.sample_path_with(&grid, &mut stream_rng(21, seed)).unwrap();
            let pc = k
                .sample_path_cholesky_with(&grid, &mut stream_rng(22, seed))
                .unwrap();
            acc_m += pm.values()[si] * pm.values()[sj];
            acc_c += pc.values()[si] * pc.values()[sj];
        }
        let target = k.cov(grid[si], grid[sj]);
        let se = ((1.0 + target * target) / n as f64).sqrt();
        assert!((acc_m / n as f64 - target).abs() < 4.0 * se);
        assert!((acc_c / n as f64 - target).abs() < 4.0 * se);
    }

    #[test]
    fn degenerate_kernels_rejected() {
        // f*g = 0 on an interior stretch
        let f = PiecewisePoly::new(vec![PolyPiece { lo: 0.0, hi: 1.0, coeffs: vec![0.0] }])
            .unwrap();
        let g = PiecewisePoly::constant(1.0, 1.0);
        assert!(Kernel::custom_fg(1.0, f, g, None).is_err());
        // decreasing h
        let f = PiecewisePoly::new(vec![PolyPiece { lo: 0.0, hi: 1.0, coeffs: vec![1.0, -0.9] }])
            .unwrap();
        let g = PiecewisePoly::constant(1.0, 1.0);
        assert!(Kernel::custom_fg(1.0, f, g, None).is_err());
    }

    #[test]
    fn path_interpolation_and_poly_integral() {
        let p = Path::new(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert!(close(p.value_at(0.25), 0.5, 1e-15));
        // int x * tri(x) over [0,1] = 1/4 (by symmetry of x about 1/2 against the tent)
        let piece = PolyPiece { lo: 0.0, hi: 1.0, coeffs: vec![0.0, 1.0] };
        assert!(close(p.integrate_against_poly(&piece), 0.25, 1e-15));
    }
}
