//! Command-line surface: parse kernel/condition specs, run the samplers and
//! checks, and emit CSV/JSON data files.
//!
//! Commands: `sample`, `covariance`, `drift-table`, `verify`,
//! `dump-geometry`. Models come either from `--preset zabb|bridge` or from a
//! JSON spec via `--config`. Exit codes: 0 on success/PASS, 1 on usage or
//! runtime errors, 2 on verification failure.

use crate::conditions::{Atom, Condition, PiecewisePoly, PolyPiece};
use crate::conditioning::ConditionedModel;
use crate::error::{Error, Result};
use crate::kernel::{Kernel, Path};
use crate::markov_sde::{AugmentedState, DriftEvaluator};
use crate::seeds::stream_rng;
use crate::series::SeriesBasis;
use crate::verify::{cross_method_report, VerifyConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

// ---------------------------------------------------------------------------
// JSON model spec
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecFile {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub kernel: KernelSpec,
    pub conditions: Vec<ConditionSpec>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum KernelSpec {
    #[default]
    #[serde(rename = "bm")]
    Bm,
    #[serde(rename = "ou")]
    Ou { rate: f64 },
    #[serde(rename = "custom-fg")]
    CustomFg {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        f: Vec<PieceSpec>,
        g: Vec<PieceSpec>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub atoms: Vec<AtomSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub density: Vec<PieceSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomSpec {
    pub t: f64,
    pub w: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PieceSpec {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
}

impl SpecFile {
    pub fn build_kernel(&self) -> Result<Kernel> {
        match &self.kernel {
            KernelSpec::Bm => Kernel::brownian(self.horizon),
            KernelSpec::Ou { rate } => Kernel::ornstein_uhlenbeck(self.horizon, *rate),
            KernelSpec::CustomFg { alpha, f, g } => Kernel::custom_fg(
                self.horizon,
                PiecewisePoly::new(f.iter().map(piece_from_spec).collect())?,
                PiecewisePoly::new(g.iter().map(piece_from_spec).collect())?,
                *alpha,
            ),
        }
    }

    pub fn build_conditions(&self) -> Result<Vec<Condition>> {
        self.conditions
            .iter()
            .map(|c| {
                Condition::new(
                    self.horizon,
                    c.atoms.iter().map(|a| Atom { t: a.t, w: a.w }).collect(),
                    c.density.iter().map(piece_from_spec).collect(),
                )
            })
            .collect()
    }

    pub fn build_model(&self) -> Result<ConditionedModel> {
        ConditionedModel::new(self.build_kernel()?, self.build_conditions()?)
    }

    fn from_model_parts(horizon: f64, kernel: KernelSpec, conditions: &[Condition]) -> SpecFile {
        SpecFile {
            horizon,
            kernel,
            conditions: conditions
                .iter()
                .map(|c| ConditionSpec {
                    atoms: c.atoms().iter().map(|a| AtomSpec { t: a.t, w: a.w }).collect(),
                    density: c
                        .density()
                        .iter()
                        .map(|p| PieceSpec { lo: p.lo, hi: p.hi, coeffs: p.coeffs.clone() })
                        .collect(),
                })
                .collect(),
        }
    }
}

fn piece_from_spec(p: &PieceSpec) -> PolyPiece {
    PolyPiece { lo: p.lo, hi: p.hi, coeffs: p.coeffs.clone() }
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preset {
    /// Brownian motion on [0,1] conditioned on W_1 = 0 and zero area.
    Zabb,
    /// Brownian motion on [0,1] conditioned on W_1 = 0.
    Bridge,
}

impl Preset {
    fn parse(name: &str) -> Result<Preset> {
        match name {
            "zabb" => Ok(Preset::Zabb),
            "bridge" => Ok(Preset::Bridge),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (available: zabb, bridge)"
            ))),
        }
    }

    pub fn spec(self) -> SpecFile {
        let endpoint = ConditionSpec { atoms: vec![AtomSpec { t: 1.0, w: 1.0 }], density: vec![] };
        let area = ConditionSpec {
            atoms: vec![],
            density: vec![PieceSpec { lo: 0.0, hi: 1.0, coeffs: vec![1.0] }],
        };
        let conditions = match self {
            Preset::Zabb => vec![endpoint, area],
            Preset::Bridge => vec![endpoint],
        };
        SpecFile { horizon: 1.0, kernel: KernelSpec::Bm, conditions }
    }

    fn closed_form_drift(self) -> impl Fn(&AugmentedState) -> f64 + Send + Sync + 'static {
        move |state: &AugmentedState| match self {
            Preset::Zabb => {
                -4.0 * state.x / (1.0 - state.s)
                    - 6.0 * state.ivals[1] / ((1.0 - state.s) * (1.0 - state.s))
            }
            Preset::Bridge => -state.x / (1.0 - state.s),
        }
    }
}

// ---------------------------------------------------------------------------
// argument structure
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "gpcond",
    version,
    about = "Condition Gaussian processes on vanishing linear functionals and sample the result"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Built-in model: zabb | bridge
    #[arg(long)]
    preset: Option<String>,
    /// JSON model spec (kernel + conditions)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; all randomness derives from it deterministically
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker-thread cap (fallback: GPCOND_THREADS)
    #[arg(long, env = "GPCOND_THREADS")]
    threads: Option<usize>,
    /// Output file (or directory for multi-path sampling); stdout if absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Method {
    Anticipative,
    Series,
    Sde,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample conditioned paths and write them as CSV
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 1)]
        n_paths: usize,
        /// Number of uniform grid steps (grid+1 points)
        #[arg(long, default_value_t = 512)]
        grid: usize,
        /// Series truncation level (method: series)
        #[arg(long)]
        terms: Option<usize>,
        /// Euler-Maruyama step (method: sde)
        #[arg(long, allow_hyphen_values = true)]
        dt: Option<f64>,
        /// Stop the SDE at T - eps_end (method: sde; default 1e-3 T)
        #[arg(long, allow_hyphen_values = true)]
        eps_end: Option<f64>,
        /// Single long-format file with a path_id column
        #[arg(long)]
        long: bool,
    },
    /// Tabulate the analytic conditioned covariance as CSV
    Covariance {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated s values (default 0.1T..0.9T)
        #[arg(long)]
        s_list: Option<String>,
        /// Comma-separated t values (default: same as s-list)
        #[arg(long)]
        t_list: Option<String>,
    },
    /// Tabulate the drift at a fixed augmented state over an s-grid
    DriftTable {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated s values (default 0.1T..0.9T)
        #[arg(long)]
        s_grid: Option<String>,
        /// Comma-separated state "x,i1,...,iN" (default zeros)
        #[arg(long, allow_hyphen_values = true)]
        state: Option<String>,
    },
    /// Cross-method agreement report (JSON); exit 0 on PASS, 2 on FAIL
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 200_000)]
        n_anticipative: usize,
        #[arg(long, default_value_t = 200_000)]
        n_series: usize,
        #[arg(long, default_value_t = 100_000)]
        n_sde: usize,
        #[arg(long, default_value_t = 2048)]
        terms: usize,
        /// Euler-Maruyama step of the main run (default 1e-4 T)
        #[arg(long, allow_hyphen_values = true)]
        dt: Option<f64>,
        /// Integration stops at T - eps_end (default 1e-3 T)
        #[arg(long, allow_hyphen_values = true)]
        eps_end: Option<f64>,
        #[arg(long, default_value_t = 500)]
        grid: usize,
        /// Negate the drift before integrating (negative-control hook)
        #[arg(long, hide = true)]
        negate_drift: bool,
    },
    /// Print the Gram matrix, orthonormalization coefficients and B (JSON)
    DumpGeometry {
        #[command(flatten)]
        model: ModelArgs,
        /// Also write the model back out as a JSON spec file
        #[arg(long)]
        dump_spec: Option<PathBuf>,
    },
}

// ---------------------------------------------------------------------------
// entry point and dispatch
// ---------------------------------------------------------------------------

/// Parse the process arguments, run, and return the exit code
/// (0 success/PASS, 1 usage or runtime error, 2 verification failure).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version print to stdout and are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Resolved {
    spec: SpecFile,
    model: ConditionedModel,
    preset: Option<Preset>,
    seed: u64,
    out: Option<PathBuf>,
}

fn resolve(args: &ModelArgs) -> Result<Resolved> {
    if let Some(n) = args.threads {
        // ignore the error if a pool already exists (tests, repeated calls)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (spec, preset) = match (&args.preset, &args.config) {
        (Some(p), None) => {
            let preset = Preset::parse(p)?;
            (preset.spec(), Some(preset))
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            (serde_json::from_str::<SpecFile>(&text)?, None)
        }
        (Some(_), Some(_)) => {
            return Err(Error::Config("--preset and --config are mutually exclusive".into()))
        }
        (None, None) => {
            return Err(Error::Config("one of --preset or --config is required".into()))
        }
    };
    let model = spec.build_model()?;
    Ok(Resolved { spec, model, preset, seed: args.seed, out: args.out.clone() })
}

fn evaluator_for<'m>(resolved: &Resolved, model: &'m ConditionedModel) -> Result<DriftEvaluator<'m>> {
    let de = DriftEvaluator::new(model)?;
    match resolved.preset {
        Some(p) => de.with_closed_form(p.closed_form_drift()),
        None => Ok(de),
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Sample { model, method, n_paths, grid, terms, dt, eps_end, long } => {
            let resolved = resolve(&model)?;
            cmd_sample(&resolved, method, n_paths, grid, terms, dt, eps_end, long)?;
            Ok(0)
        }
        Cmd::Covariance { model, s_list, t_list } => {
            let resolved = resolve(&model)?;
            cmd_covariance(&resolved, s_list.as_deref(), t_list.as_deref())?;
            Ok(0)
        }
        Cmd::DriftTable { model, s_grid, state } => {
            let resolved = resolve(&model)?;
            cmd_drift_table(&resolved, s_grid.as_deref(), state.as_deref())?;
            Ok(0)
        }
        Cmd::Verify {
            model,
            n_anticipative,
            n_series,
            n_sde,
            terms,
            dt,
            eps_end,
            grid,
            negate_drift,
        } => {
            let resolved = resolve(&model)?;
            let t_max = resolved.model.horizon();
            let defaults = VerifyConfig::for_horizon(t_max);
            cmd_verify(
                &resolved,
                VerifyConfig {
                    n_anticipative,
                    n_series,
                    n_sde,
                    dt: dt.unwrap_or(defaults.dt),
                    eps_end: eps_end.unwrap_or(defaults.eps_end),
                    grid_n: grid,
                    seed: resolved.seed,
                    ..defaults
                },
                terms,
                negate_drift,
            )
        }
        Cmd::DumpGeometry { model, dump_spec } => {
            let resolved = resolve(&model)?;
            cmd_dump_geometry(&resolved, dump_spec.as_deref())?;
            Ok(0)
        }
    }
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    resolved: &Resolved,
    method: Method,
    n_paths: usize,
    grid_n: usize,
    terms: Option<usize>,
    dt: Option<f64>,
    eps_end: Option<f64>,
    long: bool,
) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::Config("n-paths must be positive".into()));
    }
    if grid_n < 2 {
        return Err(Error::Config("grid must have at least 2 steps".into()));
    }
    if method != Method::Series && terms.is_some() {
        return Err(Error::Config("--terms is only valid with --method series".into()));
    }
    if method != Method::Sde {
        if dt.is_some() {
            return Err(Error::Config("--dt is only valid with --method sde".into()));
        }
        if eps_end.is_some() {
            return Err(Error::Config("--eps-end is only valid with --method sde".into()));
        }
    }
    let model = &resolved.model;
    let t_max = model.horizon();
    let grid = Path::uniform_grid(t_max, grid_n);

    // Each sampled path becomes (times, columns); SDE paths carry integrals.
    let mut header = vec!["s".to_string(), "x".to_string()];
    let mut paths: Vec<(Vec<f64>, Vec<Vec<f64>>)> = Vec::with_capacity(n_paths);
    match method {
        Method::Anticipative => {
            let basis_grid = model.basis_on_grid(&grid)?;
            for idx in 0..n_paths as u64 {
                let mut rng = stream_rng(resolved.seed, idx);
                let base = model.kernel().sample_path_with(&grid, &mut rng)?;
                let path = model.transform_with_basis(&base, &basis_grid)?;
                paths.push((path.grid().to_vec(), vec![path.values().to_vec()]));
            }
        }
        Method::Series => {
            let n_terms = terms.unwrap_or(2048);
            let basis = SeriesBasis::new(model, n_terms)?;
            let sampler = basis.sampler(model, &grid)?;
            for idx in 0..n_paths as u64 {
                let mut rng = stream_rng(resolved.seed, idx);
                let (values, _) = sampler.sample_with(&mut rng);
                paths.push((grid.clone(), vec![values]));
            }
        }
        Method::Sde => {
            let dt = dt.ok_or_else(|| Error::Config("--method sde requires --dt".into()))?;
            if !(dt > 0.0) {
                return Err(Error::Config("dt must be positive".into()));
            }
            let eps_end = eps_end.unwrap_or(1e-3 * t_max);
            if !(eps_end > 0.0) {
                return Err(Error::Config("eps-end must be positive".into()));
            }
            let de = evaluator_for(resolved, model)?;
            for i in 0..model.rank() {
                header.push(format!("i{}", i + 1));
            }
            for idx in 0..n_paths as u64 {
                let mut rng = stream_rng(resolved.seed, idx);
                let ap = de.integrate_sde_with(dt, eps_end, &mut rng)?;
                let mut cols = vec![ap.values];
                cols.extend(ap.ivals);
                paths.push((ap.times, cols));
            }
        }
    }

    write_sample_output(resolved, &header, &paths, long)
}

fn write_sample_output(
    resolved: &Resolved,
    header: &[String],
    paths: &[(Vec<f64>, Vec<Vec<f64>>)],
    long: bool,
) -> Result<()> {
    let render = |buf: &mut String, times: &[f64], cols: &[Vec<f64>], prefix: Option<usize>| {
        for (k, &s) in times.iter().enumerate() {
            if let Some(id) = prefix {
                buf.push_str(&format!("{id},"));
            }
            buf.push_str(&format!("{s}"));
            for col in cols {
                buf.push_str(&format!(",{}", col[k]));
            }
            buf.push('\n');
        }
    };
    if long || paths.len() == 1 {
        let mut buf = String::new();
        if long {
            buf.push_str("path_id,");
        }
        buf.push_str(&header.join(","));
        buf.push('\n');
        for (id, (times, cols)) in paths.iter().enumerate() {
            render(&mut buf, times, cols, long.then_some(id));
        }
        emit(resolved.out.as_deref(), &buf)
    } else {
        let dir = resolved.out.as_deref().ok_or_else(|| {
            Error::Config("multi-path sampling needs --out DIR (or --long)".into())
        })?;
        std::fs::create_dir_all(dir)?;
        for (id, (times, cols)) in paths.iter().enumerate() {
            let mut buf = String::new();
            buf.push_str(&header.join(","));
            buf.push('\n');
            render(&mut buf, times, cols, None);
            std::fs::write(dir.join(format!("path_{id:04}.csv")), buf)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// covariance / drift tables
// ---------------------------------------------------------------------------

fn default_lattice(t_max: f64) -> Vec<f64> {
    (1..=9).map(|k| 0.1 * k as f64 * t_max).collect()
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse {what} entry '{tok}'")))
        })
        .collect()
}

fn cmd_covariance(resolved: &Resolved, s_list: Option<&str>, t_list: Option<&str>) -> Result<()> {
    let model = &resolved.model;
    let s_vals = match s_list {
        Some(text) => parse_list(text, "s-list")?,
        None => default_lattice(model.horizon()),
    };
    let t_vals = match t_list {
        Some(text) => parse_list(text, "t-list")?,
        None => s_vals.clone(),
    };
    let mut buf = String::from("s,t,cov\n");
    for &s in &s_vals {
        for &t in &t_vals {
            let v = model.cond_cov(s, t)?;
            buf.push_str(&format!("{s},{t},{v}\n"));
        }
    }
    emit(resolved.out.as_deref(), &buf)
}

fn cmd_drift_table(resolved: &Resolved, s_grid: Option<&str>, state: Option<&str>) -> Result<()> {
    let model = &resolved.model;
    let de = evaluator_for(resolved, model)?;
    let s_vals = match s_grid {
        Some(text) => parse_list(text, "s-grid")?,
        None => default_lattice(model.horizon()),
    };
    let rank = model.rank();
    let state_vals = match state {
        Some(text) => {
            let vals = parse_list(text, "state")?;
            if vals.len() != rank + 1 {
                return Err(Error::Config(format!(
                    "state needs 1 + {rank} entries (x and one integral per condition), got {}",
                    vals.len()
                )));
            }
            vals
        }
        None => vec![0.0; rank + 1],
    };
    let mut buf = String::from("s,drift\n");
    for &s in &s_vals {
        let st = AugmentedState { s, x: state_vals[0], ivals: state_vals[1..].to_vec() };
        let d = de.drift(&st)?;
        buf.push_str(&format!("{s},{d}\n"));
    }
    emit(resolved.out.as_deref(), &buf)
}

// ---------------------------------------------------------------------------
// verify / geometry
// ---------------------------------------------------------------------------

fn cmd_verify(
    resolved: &Resolved,
    cfg: VerifyConfig,
    terms: usize,
    negate_drift: bool,
) -> Result<i32> {
    let model = &resolved.model;
    let de = evaluator_for(resolved, model)?.negated(negate_drift);
    let basis = SeriesBasis::new(model, terms)?;
    let report = cross_method_report(model, &de, &basis, &cfg)?;
    let json = serde_json::to_string_pretty(&report)?;
    emit(resolved.out.as_deref(), &format!("{json}\n"))?;
    Ok(if report.pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct GeometryDump {
    gram: Vec<Vec<f64>>,
    coeffs: Vec<Vec<f64>>,
    kept: Vec<usize>,
    dropped: Vec<usize>,
    b: Vec<Vec<f64>>,
    b_condition: f64,
    orthonormality_residual: f64,
}

fn cmd_dump_geometry(resolved: &Resolved, dump_spec: Option<&FsPath>) -> Result<()> {
    let model = &resolved.model;
    let basis = model.basis();
    let dump = GeometryDump {
        gram: crate::detached::gram(model.kernel(), basis.conditions())?,
        coeffs: basis.coeffs().to_vec(),
        kept: basis.kept().to_vec(),
        dropped: basis.dropped().to_vec(),
        b: model.b_matrix().to_vec(),
        b_condition: model.b_condition_number(),
        orthonormality_residual: basis.residual_check()?,
    };
    if let Some(path) = dump_spec {
        let kernel_spec = resolved.spec.kernel.clone();
        let spec =
            SpecFile::from_model_parts(model.horizon(), kernel_spec, basis.conditions());
        std::fs::write(path, serde_json::to_string_pretty(&spec)?)?;
    }
    emit(resolved.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&dump)?))
}

fn emit(out: Option<&FsPath>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
