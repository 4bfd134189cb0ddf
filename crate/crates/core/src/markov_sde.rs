//! Non-anticipative machinery for Markovian base kernels.
//!
//! The conditioned process alone is generally not Markov, but the augmented
//! state (X_s, I^1_s, ..., I^N_s) with I^j_s = int_{[0,s]} X da_j is. The
//! expected future E[X_t | F_s] = xi_0 g(t) + sum_i xi_i (u e_i)(t) follows
//! from a small linear system D_s xi = d_s: its first row pins the value at s,
//! the remaining rows state that extending the path by its expected future
//! keeps every condition at zero. Differentiating the expected-future curve
//! at t = s gives the drift of the conditioned SDE, which an Euler–Maruyama
//! loop integrates on [0, T - eps_end); the system degenerates at the
//! horizon, so the integrator stops short by `eps_end`.
//!
//! Supported base kernels are the centered martingale ones (scaled Brownian
//! motion: f proportional to s, g constant), i.e. base drift zero and a
//! constant diffusion coefficient; this is validated at construction.

use crate::conditioning::ConditionedModel;
use crate::error::{Error, Result};
use crate::exppoly::ExpPoly;
use crate::kernel::Path;
use crate::linalg::{Lu, Mat};
use crate::seeds::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::sync::Arc;

/// State of the augmented Markov process at time s: the conditioned value x
/// and the running integrals of the path against each effective condition
/// (atoms exactly at s included).
#[derive(Clone, Debug)]
pub struct AugmentedState {
    pub s: f64,
    pub x: f64,
    pub ivals: Vec<f64>,
}

impl AugmentedState {
    pub fn initial(rank: usize) -> Self {
        AugmentedState { s: 0.0, x: 0.0, ivals: vec![0.0; rank] }
    }
}

/// Full augmented trajectory: times, values, and one running-integral track
/// per effective condition.
#[derive(Clone, Debug)]
pub struct AugmentedPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub ivals: Vec<Vec<f64>>,
}

impl AugmentedPath {
    pub fn path(&self) -> Result<Path> {
        Path::new(self.times.clone(), self.values.clone())
    }
}

type DriftFn = Arc<dyn Fn(&AugmentedState) -> f64 + Send + Sync>;

/// Tail integral s -> int over (s, T] of carrier d(a_j): a smooth suffix
/// integral of density * carrier plus suffix sums over atoms.
struct TailIntegral {
    smooth: ExpPoly,
    atom_times: Vec<f64>,
    atom_suffix: Vec<f64>,
}

impl TailIntegral {
    fn build(cond: &crate::conditions::Condition, carrier: &ExpPoly, t_max: f64) -> Self {
        let dens = cond.density_exppoly();
        let product = dens.mul(carrier);
        let suffix = product.suffix_integral();
        let smooth = cover_constant(&suffix, t_max);
        let mut atoms: Vec<(f64, f64)> =
            cond.atoms().iter().map(|a| (a.t, a.w * carrier.eval(a.t))).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let atom_times: Vec<f64> = atoms.iter().map(|a| a.0).collect();
        let mut atom_suffix = vec![0.0; atoms.len() + 1];
        for i in (0..atoms.len()).rev() {
            atom_suffix[i] = atom_suffix[i + 1] + atoms[i].1;
        }
        TailIntegral { smooth, atom_times, atom_suffix }
    }

    /// Atoms strictly beyond s plus the smooth part from s to the horizon.
    fn eval(&self, s: f64) -> f64 {
        let idx = self.atom_times.partition_point(|&t| t <= s);
        self.smooth.eval(s) + self.atom_suffix[idx]
    }
}

/// Extend a suffix-integral carrier to [0, t_max], holding boundary values.
fn cover_constant(ep: &ExpPoly, t_max: f64) -> ExpPoly {
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

pub struct DriftEvaluator<'m> {
    model: &'m ConditionedModel,
    horizon: f64,
    alpha: f64,
    /// Base drift; zero for the supported (martingale) kernels.
    beta: f64,
    g_fn: ExpPoly,
    g_deriv: ExpPoly,
    ue: Vec<ExpPoly>,
    ue_deriv: Vec<ExpPoly>,
    tails: Vec<Vec<TailIntegral>>,
    deriv_step: f64,
    closed_form: Option<DriftFn>,
    negate: bool,
}

const DEFAULT_DERIV_STEP: f64 = 1e-5;
const CLOSED_FORM_TOL: f64 = 1e-8;

impl<'m> DriftEvaluator<'m> {
    pub fn new(model: &'m ConditionedModel) -> Result<Self> {
        let kernel = model.kernel();
        let t_max = kernel.horizon();
        let Some(mf) = kernel.markov_factors() else {
            return Err(Error::Domain(
                "drift machinery requires a Markovian (factorized) kernel".into(),
            ));
        };
        let Some(alpha) = kernel.alpha() else {
            return Err(Error::Domain("kernel has no diffusion coefficient".into()));
        };
        // Supported base processes are centered martingales started at zero:
        // g constant and f(s) g = alpha^2 s. Anything else has nonzero base
        // drift, which is out of scope.
        let g0 = mf.g.eval(0.0);
        let scale = (alpha * alpha * t_max).max(1.0);
        for k in 0..=64 {
            let s = t_max * k as f64 / 64.0;
            if (mf.g.eval(s) - g0).abs() > 1e-10 * (1.0 + g0.abs()) {
                return Err(Error::Domain(
                    "SDE integration requires a constant g factor (martingale base process)"
                        .into(),
                ));
            }
            if (mf.f.eval(s) * g0 - alpha * alpha * s).abs() > 1e-9 * scale {
                return Err(Error::Domain(
                    "SDE integration requires f(s) g = alpha^2 s (scaled Brownian base)".into(),
                ));
            }
        }

        let g_fn = mf.g.to_exppoly(t_max);
        let rank = model.rank();
        let mut ue = Vec::with_capacity(rank);
        for i in 0..rank {
            let carrier = model
                .basis()
                .embedded(i)
                .exact()
                .expect("Markov kernels embed exactly")
                .clone();
            ue.push(carrier);
        }
        let mut tails = Vec::with_capacity(rank);
        for &j in model.basis().kept() {
            let cond = &model.basis().conditions()[j];
            let mut row = Vec::with_capacity(rank + 1);
            row.push(TailIntegral::build(cond, &g_fn, t_max));
            for carrier in &ue {
                row.push(TailIntegral::build(cond, carrier, t_max));
            }
            tails.push(row);
        }
        let g_deriv = g_fn.derivative();
        let ue_deriv = ue.iter().map(|c| c.derivative()).collect();
        Ok(DriftEvaluator {
            model,
            horizon: t_max,
            alpha,
            beta: 0.0,
            g_fn,
            g_deriv,
            ue,
            ue_deriv,
            tails,
            deriv_step: DEFAULT_DERIV_STEP,
            closed_form: None,
            negate: false,
        })
    }

    /// Register an analytic drift. It is validated against the generic
    /// expected-future drift on a lattice of times and simulated states;
    /// disagreement beyond 1e-8 is a construction error.
    pub fn with_closed_form<F>(mut self, f: F) -> Result<Self>
    where
        F: Fn(&AugmentedState) -> f64 + Send + Sync + 'static,
    {
        let cf: DriftFn = Arc::new(f);
        let t_max = self.horizon;
        let mut counter = 0u64;
        for k in 1..=9 {
            let s = 0.1 * k as f64 * t_max;
            for _ in 0..12 {
                let state = self.random_state(s, 0xD21F7 + counter)?;
                counter += 1;
                let generic = self.drift_generic(&state)?;
                let analytic = cf(&state);
                if (generic - analytic).abs() > CLOSED_FORM_TOL {
                    return Err(Error::Numeric(format!(
                        "closed-form drift disagrees with expected-future drift at s={s}: \
                         {analytic} vs {generic}"
                    )));
                }
            }
        }
        self.closed_form = Some(cf);
        Ok(self)
    }

    /// Relative step for the numeric t-derivative (h = step * (T - s)).
    pub fn with_deriv_step(mut self, step: f64) -> Self {
        self.deriv_step = step;
        self
    }

    /// Flip the sign of every drift evaluation. Negative-control hook for the
    /// verification suite; never use for actual sampling.
    pub fn negated(mut self, negate: bool) -> Self {
        self.negate = negate;
        self
    }

    pub fn model(&self) -> &ConditionedModel {
        self.model
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }

    /// A state at time s consistent with the augmented dynamics, produced by
    /// reading a random piecewise-linear path on [0, s].
    fn random_state(&self, s: f64, seed: u64) -> Result<AugmentedState> {
        let mut rng = stream_rng(seed, 0);
        let n = 32;
        let grid: Vec<f64> = (0..=n).map(|k| s * k as f64 / n as f64).collect();
        let scale = s.sqrt().max(0.1);
        let values: Vec<f64> = (0..=n)
            .map(|k| if k == 0 { 0.0 } else { scale * rng.sample::<f64, _>(StandardNormal) })
            .collect();
        let path = Path::new(grid, values)?;
        self.state_from_path(&path, s)
    }

    /// Augmented state read off a path covering [0, s]: x = path(s) and
    /// I^j_s = int over [0, s] of the path against each kept condition.
    pub fn state_from_path(&self, path: &Path, s: f64) -> Result<AugmentedState> {
        let (lo, hi) = path.span();
        if lo > 0.0 || hi < s {
            return Err(Error::Domain(format!(
                "path span [{lo}, {hi}] does not cover [0, {s}]"
            )));
        }
        let ivals = self
            .model
            .basis()
            .kept()
            .iter()
            .map(|&j| self.model.basis().conditions()[j].apply_up_to(path, s))
            .collect();
        Ok(AugmentedState { s, x: path.value_at(s), ivals })
    }

    fn solve_xi(&self, state: &AugmentedState) -> Result<Vec<f64>> {
        let r = self.model.rank();
        if state.ivals.len() != r {
            return Err(Error::Domain(format!(
                "state carries {} integrals, model has rank {r}",
                state.ivals.len()
            )));
        }
        let n = r + 1;
        let s = state.s;
        let mut d = Mat::zeros(n);
        d.set(0, 0, self.g_fn.eval(s));
        for i in 0..r {
            d.set(0, i + 1, self.ue[i].eval(s));
        }
        for j in 0..r {
            for col in 0..n {
                d.set(j + 1, col, self.tails[j][col].eval(s));
            }
        }
        let lu = Lu::factor(&d, "expected-future system D_s")?;
        let cond = lu.condition();
        if cond > 1e14 {
            return Err(Error::Singular {
                context: format!("expected-future system D_s at s={s}"),
                cond,
            });
        }
        let mut rhs = vec![0.0; n];
        rhs[0] = state.x;
        for j in 0..r {
            rhs[j + 1] = -state.ivals[j];
        }
        Ok(lu.solve(&rhs))
    }

    fn curve(&self, xi: &[f64], t: f64) -> f64 {
        let mut acc = xi[0] * self.g_fn.eval(t);
        for (i, carrier) in self.ue.iter().enumerate() {
            acc += xi[i + 1] * carrier.eval(t);
        }
        acc
    }

    /// E[X_t | F_s] for the given augmented state, s <= t <= T.
    pub fn expected_future(&self, state: &AugmentedState, t: f64) -> Result<f64> {
        if t < state.s || t > self.horizon {
            return Err(Error::Domain(format!(
                "target time {t} outside [{}, {}]",
                state.s, self.horizon
            )));
        }
        let xi = self.solve_xi(state)?;
        Ok(self.curve(&xi, t))
    }

    /// Drift of the conditioned SDE at the given state (analytic form if
    /// registered, expected-future derivative otherwise).
    pub fn drift(&self, state: &AugmentedState) -> Result<f64> {
        let v = match &self.closed_form {
            Some(cf) => cf(state),
            None => self.drift_generic_inner(state)?,
        };
        Ok(if self.negate { -v } else { v })
    }

    /// The generic route: the t-derivative of the expected-future curve at
    /// t = s, taken termwise on the exact carriers (from the right, so corner
    /// points of the basis functions look forward). Available regardless of a
    /// registered closed form.
    pub fn drift_generic(&self, state: &AugmentedState) -> Result<f64> {
        let v = self.drift_generic_inner(state)?;
        Ok(if self.negate { -v } else { v })
    }

    fn drift_generic_inner(&self, state: &AugmentedState) -> Result<f64> {
        let s = state.s;
        if s >= self.horizon * (1.0 - 1e-8) {
            return Err(Error::Domain(format!(
                "s={s} too close to the horizon {} for drift evaluation",
                self.horizon
            )));
        }
        let xi = self.solve_xi(state)?;
        let mut v = xi[0] * self.g_deriv.eval_from_right(s);
        for (i, d) in self.ue_deriv.iter().enumerate() {
            v += xi[i + 1] * d.eval_from_right(s);
        }
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite drift at s={s}")));
        }
        Ok(v)
    }

    /// Richardson-extrapolated central difference of the expected-future
    /// curve at t = s, step h = deriv_step * (T - s). A diagnostic
    /// cross-check of the termwise derivative; its accuracy is limited to
    /// roughly eps * |xi| / h by cancellation, which is why it is not the
    /// primary route.
    pub fn drift_finite_difference(&self, state: &AugmentedState) -> Result<f64> {
        let s = state.s;
        if s >= self.horizon * (1.0 - 1e-8) {
            return Err(Error::Domain(format!(
                "s={s} too close to the horizon {} for drift evaluation",
                self.horizon
            )));
        }
        let xi = self.solve_xi(state)?;
        let h = self.deriv_step * (self.horizon - s);
        let diff = |h: f64| {
            if s >= h {
                (self.curve(&xi, s + h) - self.curve(&xi, s - h)) / (2.0 * h)
            } else {
                // second-order one-sided difference near the origin
                (-3.0 * self.curve(&xi, s) + 4.0 * self.curve(&xi, s + h)
                    - self.curve(&xi, s + 2.0 * h))
                    / (2.0 * h)
            }
        };
        let d1 = diff(h);
        let d2 = diff(0.5 * h);
        let v = (4.0 * d2 - d1) / 3.0;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite drift at s={s}")));
        }
        Ok(if self.negate { -v } else { v })
    }

    /// Euler–Maruyama integration of the conditioned SDE on [0, T - eps_end]:
    /// x += drift * dt + alpha * sqrt(dt) * N(0,1), with the running
    /// integrals updated per step (densities by the trapezoid rule, atoms
    /// crossed within a step added at the interpolated path value).
    pub fn integrate_sde(&self, dt: f64, seed: u64, eps_end: f64) -> Result<AugmentedPath> {
        let mut rng = stream_rng(seed, 0);
        self.integrate_sde_with(dt, eps_end, &mut rng)
    }

    pub fn integrate_sde_with<R: Rng + ?Sized>(
        &self,
        dt: f64,
        eps_end: f64,
        rng: &mut R,
    ) -> Result<AugmentedPath> {
        let r = self.model.rank();
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut ivals = vec![Vec::new(); r];
        self.run_em(dt, eps_end, rng, |state| {
            times.push(state.s);
            values.push(state.x);
            for (track, &v) in ivals.iter_mut().zip(&state.ivals) {
                track.push(v);
            }
        })?;
        Ok(AugmentedPath { times, values, ivals })
    }

    /// Integration that records only linear interpolations at `obs_times`
    /// (strictly increasing, within [0, T - eps_end]); returns the recorded
    /// values and the final state.
    pub fn integrate_observed<R: Rng + ?Sized>(
        &self,
        dt: f64,
        eps_end: f64,
        rng: &mut R,
        obs_times: &[f64],
    ) -> Result<(Vec<f64>, AugmentedState)> {
        let mut out = Vec::with_capacity(obs_times.len());
        let mut prev: Option<(f64, f64)> = None;
        let mut next = 0usize;
        let final_state = self.run_em(dt, eps_end, rng, |state| {
            if let Some((s0, x0)) = prev {
                while next < obs_times.len() && obs_times[next] <= state.s {
                    let tau = obs_times[next];
                    let w = if state.s > s0 { (tau - s0) / (state.s - s0) } else { 0.0 };
                    out.push(x0 + w * (state.x - x0));
                    next += 1;
                }
            } else if next < obs_times.len() && obs_times[next] <= state.s {
                // observation at the very first recorded time
                while next < obs_times.len() && obs_times[next] <= state.s {
                    out.push(state.x);
                    next += 1;
                }
            }
            prev = Some((state.s, state.x));
        })?;
        if next < obs_times.len() {
            return Err(Error::Domain(format!(
                "observation time {} beyond the integration end {}",
                obs_times[next],
                self.horizon - eps_end
            )));
        }
        Ok((out, final_state))
    }

    fn run_em<R: Rng + ?Sized, Obs: FnMut(&AugmentedState)>(
        &self,
        dt: f64,
        eps_end: f64,
        rng: &mut R,
        mut observe: Obs,
    ) -> Result<AugmentedState> {
        if !(dt > 0.0) {
            return Err(Error::Domain("dt must be positive".into()));
        }
        if !(eps_end > 0.0 && eps_end < self.horizon / 10.0) {
            return Err(Error::Domain(format!(
                "eps_end must lie in (0, {}), got {eps_end}",
                self.horizon / 10.0
            )));
        }
        let end = self.horizon - eps_end;
        let r = self.model.rank();
        let kept: Vec<&crate::conditions::Condition> = self
            .model
            .basis()
            .kept()
            .iter()
            .map(|&j| &self.model.basis().conditions()[j])
            .collect();
        let mut state = AugmentedState::initial(r);
        // atoms exactly at 0 contribute w * x_0 = 0: nothing to add
        observe(&state);
        while state.s < end - 1e-12 * self.horizon {
            let step = dt.min(end - state.s);
            let delta = self.drift(&state)?;
            if !delta.is_finite() {
                return Err(Error::Numeric(format!("non-finite drift at s={}", state.s)));
            }
            let z: f64 = rng.sample(StandardNormal);
            let s_new = state.s + step;
            let x_new = state.x + delta * step + self.alpha * step.sqrt() * z;
            for (j, cond) in kept.iter().enumerate() {
                let mut di = 0.5
                    * (cond.density_value(state.s) * state.x + cond.density_value(s_new) * x_new)
                    * step;
                for a in cond.atoms() {
                    if a.t > state.s && a.t <= s_new {
                        let w = (a.t - state.s) / step;
                        di += a.w * (state.x + w * (x_new - state.x));
                    }
                }
                state.ivals[j] += di;
            }
            state.s = s_new;
            state.x = x_new;
            observe(&state);
        }
        Ok(state)
    }

    /// Statistical check of the defining Markov property: over simulated
    /// conditioned paths, the residual X_t - E[X_t | state at s] must be
    /// centered and uncorrelated with every earlier value X_u. Sampling goes
    /// through the anticipative transform, which has the exact conditioned
    /// law on the grid, so this confronts the expected-future system with an
    /// independent construction.
    pub fn consistency_check(
        &self,
        n_paths: usize,
        s: f64,
        t: f64,
        us: &[f64],
        grid_n: usize,
        seed: u64,
    ) -> Result<MarkovCheck> {
        let grid = Path::uniform_grid(self.horizon, grid_n);
        let basis_grid = self.model.basis_on_grid(&grid)?;
        let rows: Vec<Result<Vec<f64>>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|idx| {
                let mut rng = stream_rng(seed, (4 << 40) + idx);
                let base = self.model.kernel().sample_path_with(&grid, &mut rng)?;
                let cond_path = self.model.transform_with_basis(&base, &basis_grid)?;
                let state = self.state_from_path(&cond_path, s)?;
                let mut row = Vec::with_capacity(2 + us.len());
                row.push(cond_path.value_at(t));
                row.push(self.expected_future(&state, t)?);
                for &u in us {
                    row.push(cond_path.value_at(u));
                }
                Ok(row)
            })
            .collect();
        let mut resid = Vec::with_capacity(n_paths);
        let mut u_cols = vec![Vec::with_capacity(n_paths); us.len()];
        for row in rows {
            let row = row?;
            resid.push(row[0] - row[1]);
            for (c, &v) in u_cols.iter_mut().zip(&row[2..]) {
                c.push(v);
            }
        }
        let n = n_paths as f64;
        let mean_r = resid.iter().sum::<f64>() / n;
        let var_r = resid.iter().map(|v| (v - mean_r) * (v - mean_r)).sum::<f64>() / (n - 1.0);
        let mean_residual_z = mean_r / (var_r / n).sqrt().max(1e-300);
        let mut entries = Vec::with_capacity(us.len());
        let mut max_abs_z: f64 = mean_residual_z.abs();
        for (c, &u) in u_cols.iter().zip(us) {
            let mean_u = c.iter().sum::<f64>() / n;
            let var_u = c.iter().map(|v| (v - mean_u) * (v - mean_u)).sum::<f64>() / (n - 1.0);
            let cov = resid
                .iter()
                .zip(c)
                .map(|(r, v)| (r - mean_r) * (v - mean_u))
                .sum::<f64>()
                / (n - 1.0);
            let corr = if var_r > 0.0 && var_u > 0.0 {
                cov / (var_r * var_u).sqrt()
            } else {
                0.0
            };
            let z = corr * n.sqrt();
            max_abs_z = max_abs_z.max(z.abs());
            entries.push(MarkovCheckEntry { u, corr, z });
        }
        Ok(MarkovCheck { s, t, n_paths, mean_residual_z, entries, max_abs_z })
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MarkovCheckEntry {
    pub u: f64,
    pub corr: f64,
    pub z: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MarkovCheck {
    pub s: f64,
    pub t: f64,
    pub n_paths: usize,
    /// z-score of the residual mean against zero.
    pub mean_residual_z: f64,
    pub entries: Vec<MarkovCheckEntry>,
    pub max_abs_z: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::Condition;
    use crate::kernel::Kernel;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

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

    fn zabb_drift(state: &AugmentedState) -> f64 {
        -4.0 * state.x / (1.0 - state.s) - 6.0 * state.ivals[1] / (1.0 - state.s).powi(2)
    }

    fn bridge_drift(state: &AugmentedState) -> f64 {
        -state.x / (1.0 - state.s)
    }

    #[test]
    fn expected_future_solves_the_hand_built_system() {
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap();
        let s3 = 3.0f64.sqrt();
        let (s, x, j) = (0.3, 0.25, -0.04);
        let state = AugmentedState { s, x, ivals: vec![0.0, j] };
        // hand-built 3x3 system, solved by elimination in the test
        let mut a = [
            [1.0, s, s3 * (s - s * s), x],
            [1.0, 1.0, 0.0, 0.0],
            [
                1.0 - s,
                (1.0 - s * s) / 2.0,
                s3 * (1.0 - s * s) / 2.0 - (1.0 - s * s * s) / s3,
                -j,
            ],
        ];
        for col in 0..3 {
            let p = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, p);
            for row in 0..3 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..4 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        let xi: Vec<f64> = (0..3).map(|i| a[i][3] / a[i][i]).collect();
        for t in [0.4, 0.7, 0.95] {
            let expect = xi[0] + xi[1] * t + xi[2] * s3 * (t - t * t);
            assert!(close(de.expected_future(&state, t).unwrap(), expect, 1e-11));
        }
        // xi_0 closed form: (x(2s^2 - s - 1) - 6 j s)/(s-1)^3
        let xi0 = (x * (2.0 * s * s - s - 1.0) - 6.0 * j * s) / (s - 1.0).powi(3);
        assert!(close(xi[0], xi0, 1e-12));
    }

    #[test]
    fn expected_future_at_s_returns_state() {
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap();
        let state = AugmentedState { s: 0.45, x: 0.3, ivals: vec![0.0, 0.05] };
        assert!(close(de.expected_future(&state, 0.45).unwrap(), 0.3, 1e-11));
    }

    #[test]
    fn bridge_expected_future_closed_form() {
        let m = bridge_model();
        let de = DriftEvaluator::new(&m).unwrap();
        let state = AugmentedState { s: 0.5, x: 0.2, ivals: vec![0.0] };
        assert!(close(de.expected_future(&state, 0.75).unwrap(), 0.1, 1e-12));
        // E[B_t | F_s] = B_s (1-t)/(1-s)
        for t in [0.5, 0.6, 0.9, 0.99] {
            assert!(close(
                de.expected_future(&state, t).unwrap(),
                0.2 * (1.0 - t) / 0.5,
                1e-12
            ));
        }
    }

    #[test]
    fn expected_future_matches_gaussian_conditioning_oracle() {
        // Independent oracle: E[X_t | V] for the augmented vector
        // V = (X_s, I^1_s, ..., I^N_s) by the plain Gaussian conditioning
        // formula cov(X_t, V) cov(V)^{-1} v, with every covariance of V and
        // X_t computed as (double) integrals of the conditioned covariance
        // through the quadrature route. Degenerate coordinates (the
        // endpoint-condition integral vanishes identically before T) are
        // excluded; both maps are linear in the state, so probing the unit
        // states of the remaining coordinates decides equality.
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap();
        let cov_model = zabb_model();
        let quad = crate::kernel::Kernel::from_cov(1.0, move |s, t| {
            cov_model.cond_cov(s, t).expect("closed-form covariance")
        })
        .unwrap();
        let conds = m.basis().conditions().to_vec();
        for s in [0.3, 0.6] {
            // conditions restricted to [0, s] represent the I-coordinates
            let restricted: Vec<Condition> = conds
                .iter()
                .map(|c| {
                    let atoms: Vec<crate::conditions::Atom> =
                        c.atoms().iter().copied().filter(|a| a.t <= s).collect();
                    let density: Vec<crate::conditions::PolyPiece> = c
                        .density()
                        .iter()
                        .filter(|p| p.lo < s)
                        .map(|p| crate::conditions::PolyPiece {
                            lo: p.lo,
                            hi: p.hi.min(s),
                            coeffs: p.coeffs.clone(),
                        })
                        .collect();
                    Condition::new(1.0, atoms, density).unwrap()
                })
                .collect();
            let point_s = Condition::point(1.0, s, 1.0).unwrap();

            // covariance matrix of (X_s, I^1_s, I^2_s) and its cross to X_t
            let mut full = vec![vec![0.0; 3]; 3];
            full[0][0] = m.cond_cov(s, s).unwrap();
            for (i, ci) in restricted.iter().enumerate() {
                full[0][i + 1] =
                    crate::kernel::kernel_double_apply(&quad, ci, &point_s).unwrap();
                full[i + 1][0] = full[0][i + 1];
                for (j, cj) in restricted.iter().enumerate().take(i + 1) {
                    let v = crate::kernel::kernel_double_apply(&quad, ci, cj).unwrap();
                    full[i + 1][j + 1] = v;
                    full[j + 1][i + 1] = v;
                }
            }
            let live: Vec<usize> = (0..3).filter(|&i| full[i][i] > 1e-12).collect();
            let n = live.len();
            let mut sigma = Mat::zeros(n);
            for a in 0..n {
                for b in 0..n {
                    sigma.set(a, b, full[live[a]][live[b]]);
                }
            }
            let lu = Lu::factor(&sigma, "oracle covariance").unwrap();

            for t in [0.7, 0.9] {
                let mut cross = Vec::with_capacity(n);
                for &idx in &live {
                    cross.push(if idx == 0 {
                        m.cond_cov(s, t).unwrap()
                    } else {
                        crate::kernel::kernel_double_apply(
                            &quad,
                            &restricted[idx - 1],
                            &Condition::point(1.0, t, 1.0).unwrap(),
                        )
                        .unwrap()
                    });
                }
                let weights = lu.solve(&cross);
                for (k, &idx) in live.iter().enumerate() {
                    // unit state of the k-th live coordinate
                    let mut state = AugmentedState { s, x: 0.0, ivals: vec![0.0, 0.0] };
                    if idx == 0 {
                        state.x = 1.0;
                    } else {
                        state.ivals[idx - 1] = 1.0;
                    }
                    let got = de.expected_future(&state, t).unwrap();
                    assert!(
                        close(got, weights[k], 1e-8),
                        "s={s} t={t} coord {idx}: {got} vs {}",
                        weights[k]
                    );
                }
            }
        }
    }

    #[test]
    fn drift_matches_closed_forms() {
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap();
        let state = AugmentedState { s: 0.5, x: 0.1, ivals: vec![0.0, 0.02] };
        assert!(close(de.drift_generic(&state).unwrap(), -1.28, 1e-9));
        assert!(close(zabb_drift(&state), -1.28, 1e-15));

        let mb = bridge_model();
        let deb = DriftEvaluator::new(&mb).unwrap();
        let state = AugmentedState { s: 0.5, x: 0.2, ivals: vec![0.0] };
        assert!(close(deb.drift_generic(&state).unwrap(), -0.4, 1e-9));
    }

    #[test]
    fn finite_difference_drift_agrees_with_termwise_derivative() {
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap();
        for k in 1..=8 {
            let s = 0.1 * k as f64;
            let state = AugmentedState { s, x: 0.2, ivals: vec![0.0, -0.03] };
            let a = de.drift_generic(&state).unwrap();
            let b = de.drift_finite_difference(&state).unwrap();
            assert!(close(a, b, 1e-7), "s={s}: {a} vs {b}");
        }
    }

    #[test]
    fn zero_state_has_zero_drift() {
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap();
        let state = AugmentedState::initial(2);
        assert!(de.drift_generic(&state).unwrap().abs() < 1e-12);
    }

    #[test]
    fn closed_form_validation_accepts_true_and_rejects_wrong() {
        let m = zabb_model();
        assert!(DriftEvaluator::new(&m).unwrap().with_closed_form(zabb_drift).is_ok());
        let wrong = DriftEvaluator::new(&m)
            .unwrap()
            .with_closed_form(|st: &AugmentedState| -3.9 * st.x / (1.0 - st.s));
        assert!(wrong.is_err());

        let mb = bridge_model();
        assert!(DriftEvaluator::new(&mb).unwrap().with_closed_form(bridge_drift).is_ok());
    }

    #[test]
    fn expected_future_degenerates_near_the_horizon() {
        // The endpoint row of D_s collides with the value row as s -> T; the
        // solve must fail loudly with a condition estimate instead of
        // returning garbage.
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap();
        let state = AugmentedState { s: 1.0 - 1e-9, x: 0.01, ivals: vec![0.0, 0.001] };
        match de.expected_future(&state, 1.0) {
            Err(Error::Singular { cond, .. }) => assert!(cond > 1e14),
            other => panic!("expected a singular-system error, got {other:?}"),
        }
    }

    #[test]
    fn drift_evaluator_rejects_non_martingale_kernels() {
        let m = ConditionedModel::new(
            Kernel::ornstein_uhlenbeck(1.0, 1.0).unwrap(),
            vec![Condition::endpoint(1.0)],
        )
        .unwrap();
        assert!(DriftEvaluator::new(&m).is_err());
    }

    #[test]
    fn zero_noise_run_stays_at_zero() {
        // With x = 0 and all integrals 0 the drift vanishes, so the noiseless
        // dynamics are identically zero; emulate zero noise via alpha = 0
        // through a custom kernel scaled to zero diffusion? alpha is fixed by
        // the kernel, so instead check the invariant directly along a run of
        // the deterministic map.
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap();
        let mut state = AugmentedState::initial(2);
        for _ in 0..50 {
            let delta = de.drift(&state).unwrap();
            assert!(delta.abs() < 1e-12);
            let dt = 1e-3;
            let s_new = state.s + dt;
            // zero-noise Euler step with the same integral update rule
            let x_new = state.x + delta * dt;
            state.ivals[1] += 0.5 * (state.x + x_new) * dt;
            state.s = s_new;
            state.x = x_new;
        }
        assert!(close(state.x, 0.0, 1e-12));
        assert!(close(state.ivals[1], 0.0, 1e-12));
    }

    #[test]
    fn sde_is_deterministic_and_respects_eps_end() {
        let m = bridge_model();
        let de = DriftEvaluator::new(&m).unwrap().with_closed_form(bridge_drift).unwrap();
        let a = de.integrate_sde(1e-3, 4, 1e-2).unwrap();
        let b = de.integrate_sde(1e-3, 4, 1e-2).unwrap();
        assert_eq!(a.values, b.values);
        assert!(close(*a.times.last().unwrap(), 0.99, 1e-12));
        assert!(a.ivals.len() == 1 && a.ivals[0].len() == a.times.len());
    }

    #[test]
    fn sde_input_validation() {
        let m = bridge_model();
        let de = DriftEvaluator::new(&m).unwrap();
        assert!(de.integrate_sde(-1.0, 0, 1e-3).is_err());
        assert!(de.integrate_sde(1e-3, 0, 0.5).is_err());
    }

    #[test]
    fn bridge_sde_covariance() {
        // Reduced-budget version of the law check (the acceptance suite runs
        // the full budget): Cov(B_0.3, B_0.7) = 0.09.
        let m = bridge_model();
        let de = DriftEvaluator::new(&m).unwrap().with_closed_form(bridge_drift).unwrap();
        let n = 4000u64;
        let obs = [0.3, 0.7];
        let sums: (f64, f64, f64) = (0..n)
            .into_par_iter()
            .map(|idx| {
                let mut rng = stream_rng(77, idx);
                let (vals, _) = de.integrate_observed(1e-3, 1e-3, &mut rng, &obs).unwrap();
                (vals[0], vals[1], vals[0] * vals[1])
            })
            .reduce(
                || (0.0, 0.0, 0.0),
                |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2),
            );
        let nf = n as f64;
        let cov = sums.2 / nf - (sums.0 / nf) * (sums.1 / nf);
        // std error of the product moment is ~ sqrt((v11*v22 + cov^2)/n)
        let se = ((0.21 * 0.21 + 0.09 * 0.09) / nf).sqrt() * 1.5;
        assert!(
            (cov - 0.09).abs() < 4.0 * se + 3e-3,
            "cov {cov}, target 0.09, se {se}"
        );
    }

    #[test]
    fn tower_property() {
        // E[X_t | state_s] equals the average of E[X_t | state_r] over
        // simulated transitions s -> r.
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap().with_closed_form(zabb_drift).unwrap();
        let (s, r, t) = (0.2, 0.5, 0.8);
        // start from a definite state at s reached by a fixed path
        let grid = Path::uniform_grid(1.0, 200);
        let base = m.kernel().sample_path(&grid, 5).unwrap();
        let start_path = m.anticipative_transform(&base).unwrap();
        let state_s = de.state_from_path(&start_path, s).unwrap();
        let direct = de.expected_future(&state_s, t).unwrap();

        let n = 20_000u64;
        let dt = 5e-4f64;
        let total: f64 = (0..n)
            .into_par_iter()
            .map(|idx| {
                let mut rng = stream_rng(31, idx);
                // integrate the SDE from state_s to r
                let mut state = state_s.clone();
                while state.s < r - 1e-12 {
                    let step = dt.min(r - state.s);
                    let delta = de.drift(&state).unwrap();
                    let z: f64 = rng.sample(StandardNormal);
                    let s_new = state.s + step;
                    let x_new = state.x + delta * step + step.sqrt() * z;
                    state.ivals[1] += 0.5 * (state.x + x_new) * step;
                    state.s = s_new;
                    state.x = x_new;
                }
                de.expected_future(&state, t).unwrap()
            })
            .sum();
        let avg = total / n as f64;
        // Monte Carlo spread of E[X_t | state_r] is below the spread of X_t
        let se = (0.1 / (n as f64)).sqrt() * 4.0;
        assert!(
            (avg - direct).abs() < se + 2e-3,
            "tower mismatch: {avg} vs {direct}"
        );
    }

    #[test]
    fn consistency_check_passes_for_presets_and_unconditioned() {
        let m = zabb_model();
        let de = DriftEvaluator::new(&m).unwrap();
        let rep = de.consistency_check(20_000, 0.4, 0.7, &[0.1, 0.2, 0.3], 500, 13).unwrap();
        assert!(rep.max_abs_z < 4.0, "zabb: {:?}", rep);

        let un = ConditionedModel::unconditioned(Kernel::brownian(1.0).unwrap());
        let deu = DriftEvaluator::new(&un).unwrap();
        let rep = deu.consistency_check(20_000, 0.4, 0.7, &[0.1, 0.2, 0.3], 500, 14).unwrap();
        assert!(rep.max_abs_z < 4.0, "unconditioned: {:?}", rep);
    }
}
