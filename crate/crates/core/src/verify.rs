//! Monte Carlo estimators and statistical comparisons for the verification
//! suite: empirical covariances with standard errors, condition residuals,
//! and the three-way cross-method agreement report.
//!
//! All batches derive per-path generators from (seed, method stream, path
//! index), and every reduction runs in path-index order, so a fixed master
//! seed reproduces every report byte for byte regardless of thread count.

use crate::conditioning::ConditionedModel;
use crate::error::{Error, Result};
use crate::kernel::Path;
use crate::markov_sde::DriftEvaluator;
use crate::seeds::stream_rng;
use crate::series::SeriesBasis;
use rayon::prelude::*;
use serde::Serialize;

const STREAM_ANTICIPATIVE: u64 = 0;
const STREAM_SERIES: u64 = 1 << 40;
const STREAM_SDE: u64 = 2 << 40;

/// Covariance of two path coordinates with its standard error. The estimate
/// is the unbiased sample covariance; the error comes from the sample spread
/// of the centered products.
pub fn empirical_cov(paths: &[Path], s: f64, t: f64) -> Result<(f64, f64)> {
    if paths.len() < 100 {
        return Err(Error::Domain(format!(
            "need at least 100 paths for a covariance estimate, got {}",
            paths.len()
        )));
    }
    let xs: Vec<f64> = paths.iter().map(|p| p.value_at(s)).collect();
    let ys: Vec<f64> = paths.iter().map(|p| p.value_at(t)).collect();
    Ok(cov_with_stderr(&xs, &ys))
}

fn cov_with_stderr(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let z = (x - mx) * (y - my);
        sum += z;
        sum_sq += z * z;
    }
    let cov = sum / (n - 1.0);
    let mean_z = sum / n;
    let var_z = (sum_sq / n - mean_z * mean_z).max(0.0);
    let stderr = (var_z / n).sqrt();
    (cov, stderr)
}

/// Largest |a_j(path)| over a batch, one entry per effective condition.
pub fn condition_residuals(model: &ConditionedModel, paths: &[Path]) -> Result<Vec<f64>> {
    let kept = model.basis().kept();
    let mut worst = vec![0.0f64; kept.len()];
    for p in paths {
        for (slot, &j) in worst.iter_mut().zip(kept) {
            let r = model.basis().conditions()[j].apply(p)?.abs();
            *slot = slot.max(r);
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct CovCell {
    pub s: f64,
    pub t: f64,
    pub analytic: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CovReport {
    pub method: String,
    pub n_paths: usize,
    pub cells: Vec<CovCell>,
    pub max_abs_z: f64,
    pub rmse: f64,
}

impl CovReport {
    fn from_columns(
        method: &str,
        lattice: &[f64],
        analytic: &[Vec<f64>],
        columns: &[Vec<f64>],
        n_paths: usize,
    ) -> CovReport {
        let mut cells = Vec::new();
        let mut max_abs_z: f64 = 0.0;
        let mut sq_sum = 0.0;
        for i in 0..lattice.len() {
            for j in i..lattice.len() {
                let (emp, se) = cov_with_stderr(&columns[i], &columns[j]);
                let diff = emp - analytic[i][j];
                // z stays finite (and JSON-representable) even for
                // degenerate zero-variance cells
                let z = if se > 0.0 {
                    diff / se
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::MAX
                };
                max_abs_z = max_abs_z.max(z.abs());
                sq_sum += diff * diff;
                cells.push(CovCell {
                    s: lattice[i],
                    t: lattice[j],
                    analytic: analytic[i][j],
                    empirical: emp,
                    std_error: se,
                    z,
                });
            }
        }
        let rmse = (sq_sum / cells.len() as f64).sqrt();
        CovReport { method: method.to_string(), n_paths, cells, max_abs_z, rmse }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SdeEndpointStats {
    /// T - eps_end, where the integrator stops.
    pub time: f64,
    pub mean_abs_x: f64,
    pub mean_abs_ivals: Vec<f64>,
    /// Conditioned standard deviation at the endpoint, from the analytic
    /// covariance: the scale the endpoint means are measured against.
    pub cond_std_at_end: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossMethodReport {
    pub lattice: Vec<f64>,
    pub z_threshold: f64,
    pub anticipative: CovReport,
    pub series: CovReport,
    pub sde: CovReport,
    pub sde_dt: f64,
    /// Step pair of the convergence check (bias must be resolvable above the
    /// Monte Carlo noise for the comparison to mean anything, so the pair is
    /// coarser than the main run).
    pub sde_rmse_dt_coarse: f64,
    pub sde_rmse_dt_fine: f64,
    pub sde_rmse_coarse: f64,
    pub sde_rmse_fine: f64,
    pub sde_rmse_decreased: bool,
    /// max |a_j(path)| over the anticipative batch, per condition.
    pub anticipative_max_residual: Vec<f64>,
    /// max per-draw residual of the exact truncated expansion, per condition.
    pub series_max_residual: Vec<f64>,
    pub series_truncation_deficit: f64,
    pub sde_endpoint: SdeEndpointStats,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub lattice: Vec<f64>,
    pub grid_n: usize,
    pub n_anticipative: usize,
    pub n_series: usize,
    pub n_sde: usize,
    /// Step of the main SDE run (covariance table, endpoint stats).
    pub dt: f64,
    /// Steps of the convergence check, coarse then fine (fine = coarse/2).
    pub rmse_dt_coarse: f64,
    pub rmse_dt_fine: f64,
    pub eps_end: f64,
    pub seed: u64,
    pub z_threshold: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig::for_horizon(1.0)
    }
}

impl VerifyConfig {
    /// Default budget with all times scaled to the horizon.
    pub fn for_horizon(t_max: f64) -> Self {
        VerifyConfig {
            lattice: vec![0.1, 0.3, 0.5, 0.7, 0.9].into_iter().map(|s| s * t_max).collect(),
            grid_n: 500,
            n_anticipative: 200_000,
            n_series: 200_000,
            n_sde: 100_000,
            dt: 1e-4 * t_max,
            rmse_dt_coarse: 2e-3 * t_max,
            rmse_dt_fine: 1e-3 * t_max,
            eps_end: 1e-3 * t_max,
            seed: 0,
            z_threshold: 5.0,
        }
    }
}

/// Covariance z-score tables for the three samplers against the analytic
/// conditioned covariance. PASS means: anticipative and series z-scores stay
/// below the threshold, and the SDE lattice RMSE decreases when the step is
/// halved (the coarse companion run uses 2 dt with the same driving noise).
pub fn cross_method_report(
    model: &ConditionedModel,
    evaluator: &DriftEvaluator,
    series: &SeriesBasis,
    cfg: &VerifyConfig,
) -> Result<CrossMethodReport> {
    let t_max = model.horizon();
    let lattice = cfg.lattice.clone();
    if lattice.is_empty() || lattice.iter().any(|&s| s <= 0.0 || s >= t_max) {
        return Err(Error::Config("lattice points must lie strictly inside (0, T)".into()));
    }
    let l = lattice.len();
    let mut analytic = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in 0..l {
            analytic[i][j] = model.cond_cov(lattice[i], lattice[j])?;
        }
    }

    // anticipative batch
    let grid = Path::uniform_grid(t_max, cfg.grid_n);
    let basis_grid = model.basis_on_grid(&grid)?;
    let kept = model.basis().kept();
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..cfg.n_anticipative as u64)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream_rng(cfg.seed, STREAM_ANTICIPATIVE + idx);
            let base = model.kernel().sample_path_with(&grid, &mut rng)?;
            let path = model.transform_with_basis(&base, &basis_grid)?;
            let vals: Vec<f64> = lattice.iter().map(|&s| path.value_at(s)).collect();
            let mut resid = Vec::with_capacity(kept.len());
            for &j in kept {
                resid.push(model.basis().conditions()[j].apply(&path)?.abs());
            }
            Ok((vals, resid))
        })
        .collect();
    let mut anti_cols = vec![Vec::with_capacity(cfg.n_anticipative); l];
    let mut anti_resid = vec![0.0f64; kept.len()];
    for row in rows {
        let (vals, resid) = row?;
        for (c, v) in anti_cols.iter_mut().zip(vals) {
            c.push(v);
        }
        for (slot, r) in anti_resid.iter_mut().zip(resid) {
            *slot = slot.max(r);
        }
    }
    let anticipative =
        CovReport::from_columns("anticipative", &lattice, &analytic, &anti_cols, cfg.n_anticipative);

    // series batch (values are exact at the lattice points by construction)
    let sampler = series.sampler(model, &lattice)?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.n_series as u64)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream_rng(cfg.seed, STREAM_SERIES + idx);
            sampler.sample_with(&mut rng)
        })
        .collect();
    let mut series_cols = vec![Vec::with_capacity(cfg.n_series); l];
    let mut series_resid = vec![0.0f64; kept.len()];
    for (vals, resid) in rows {
        for (c, v) in series_cols.iter_mut().zip(vals) {
            c.push(v);
        }
        for (slot, r) in series_resid.iter_mut().zip(resid) {
            *slot = slot.max(r.abs());
        }
    }
    let series_report =
        CovReport::from_columns("series", &lattice, &analytic, &series_cols, cfg.n_series);
    let deficit_grid = Path::uniform_grid(t_max, cfg.grid_n.min(512));
    let series_truncation_deficit =
        crate::series::series_truncation_error(series, model, &deficit_grid)?;

    // SDE batches: the main run at cfg.dt feeds the z-table and the endpoint
    // statistics; the step-halving pair quantifies the discretization bias.
    let run_sde = |dt: f64| -> Result<(Vec<Vec<f64>>, f64, Vec<f64>)> {
        let rows: Vec<Result<(Vec<f64>, f64, Vec<f64>)>> = (0..cfg.n_sde as u64)
            .into_par_iter()
            .map(|idx| {
                let mut rng = stream_rng(cfg.seed, STREAM_SDE + idx);
                let (vals, state) =
                    evaluator.integrate_observed(dt, cfg.eps_end, &mut rng, &lattice)?;
                Ok((vals, state.x, state.ivals))
            })
            .collect();
        let mut cols = vec![Vec::with_capacity(cfg.n_sde); l];
        let mut abs_x = 0.0;
        let mut abs_ivals = vec![0.0f64; kept.len()];
        for row in rows {
            let (vals, x_end, ivals) = row?;
            for (c, v) in cols.iter_mut().zip(vals) {
                c.push(v);
            }
            abs_x += x_end.abs();
            for (slot, v) in abs_ivals.iter_mut().zip(ivals) {
                *slot += v.abs();
            }
        }
        let n = cfg.n_sde as f64;
        abs_x /= n;
        for v in &mut abs_ivals {
            *v /= n;
        }
        Ok((cols, abs_x, abs_ivals))
    };
    let (main_cols, mean_abs_x, mean_abs_ivals) = run_sde(cfg.dt)?;
    let sde = CovReport::from_columns("sde", &lattice, &analytic, &main_cols, cfg.n_sde);
    let (coarse_cols, _, _) = run_sde(cfg.rmse_dt_coarse)?;
    let sde_rmse_coarse =
        CovReport::from_columns("sde", &lattice, &analytic, &coarse_cols, cfg.n_sde).rmse;
    let (fine_cols, _, _) = run_sde(cfg.rmse_dt_fine)?;
    let sde_rmse_fine =
        CovReport::from_columns("sde", &lattice, &analytic, &fine_cols, cfg.n_sde).rmse;

    let end_time = t_max - cfg.eps_end;
    let sde_endpoint = SdeEndpointStats {
        time: end_time,
        mean_abs_x,
        mean_abs_ivals,
        cond_std_at_end: model.cond_cov(end_time, end_time)?.max(0.0).sqrt(),
    };

    let sde_rmse_decreased = sde_rmse_fine < sde_rmse_coarse;
    let pass = anticipative.max_abs_z < cfg.z_threshold
        && series_report.max_abs_z < cfg.z_threshold
        && sde_rmse_decreased;
    Ok(CrossMethodReport {
        lattice,
        z_threshold: cfg.z_threshold,
        anticipative,
        series: series_report,
        sde,
        sde_dt: cfg.dt,
        sde_rmse_dt_coarse: cfg.rmse_dt_coarse,
        sde_rmse_dt_fine: cfg.rmse_dt_fine,
        sde_rmse_coarse,
        sde_rmse_fine,
        sde_rmse_decreased,
        anticipative_max_residual: anti_resid,
        series_max_residual: series_resid,
        series_truncation_deficit,
        sde_endpoint,
        pass,
    })
}
