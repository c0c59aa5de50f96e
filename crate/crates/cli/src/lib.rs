//! Batch front-end: one JSON experiment spec in, CSV/JSON results out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use twomv_core::fokker_planck::{fp_evolve, fp_residual, residual_csv, DensityPair, Grid1D};
use twomv_core::invariant::{
    roots_csv, sigma_scan, start_grid, stationary_density, FixedPointOptions, MeanPair,
};
use twomv_core::invariant::laplace_expand;
use twomv_core::output::CsvTable;
use twomv_core::picard::{picard_solve, GridSpec, McParams};
use twomv_core::poc::{error_stats, rate_fit, rate_fit_csv, replicate, results_csv, CouplingParams};
use twomv_core::sde::{simulate, DriveMode, Ensemble, InitialLaw, PairwiseMethod, SimParams};
use twomv_core::util::derive_stream;
use twomv_core::{Error, ModelConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent spec. Exit 2.
    Schema(String),
    /// Numerical failure during the run. Exit 3.
    Numeric(String),
    /// Filesystem trouble. Exit 1.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "invalid spec: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Precondition(_) | Error::SymmetryPrecondition(_) => {
                CliError::Schema(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Simulate,
    Picard,
    Poc,
    Invariant,
    Fpde,
    Laplace,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: Kind,
    model: ModelConfig,
    seed: u64,
    #[serde(default)]
    threads: usize,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default = "empty_object")]
    params: Value,
}

fn empty_object() -> Value {
    json!({})
}

fn default_law() -> InitialLaw {
    InitialLaw::Gaussian {
        mean: 0.0,
        var: 1.0,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default = "default_law")]
    pub init_x: InitialLaw,
    #[serde(default = "default_law")]
    pub init_y: InitialLaw,
    #[serde(default)]
    pub antithetic: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardParams {
    pub horizon: f64,
    pub dt: f64,
    pub n_particles: usize,
    #[serde(default = "picard_tol")]
    pub tol: f64,
    #[serde(default = "picard_iter")]
    pub max_iter: usize,
    #[serde(default = "default_law")]
    pub init_x: InitialLaw,
    #[serde(default = "default_law")]
    pub init_y: InitialLaw,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub norm_grid: GridSpec,
}

fn picard_tol() -> f64 {
    1e-9
}

fn picard_iter() -> usize {
    40
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePoint {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardBudget {
    #[serde(default = "picard_particles")]
    pub n_particles: usize,
    #[serde(default = "picard_tol")]
    pub tol: f64,
    #[serde(default = "picard_iter")]
    pub max_iter: usize,
}

fn picard_particles() -> usize {
    50_000
}

impl Default for PicardBudget {
    fn default() -> Self {
        Self {
            n_particles: picard_particles(),
            tol: picard_tol(),
            max_iter: picard_iter(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PocParams {
    pub schedule: Vec<SchedulePoint>,
    pub replicas: usize,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_law")]
    pub init_x: InitialLaw,
    #[serde(default = "default_law")]
    pub init_y: InitialLaw,
    #[serde(default)]
    pub picard: PicardBudget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantParams {
    /// Decreasing σ values; defaults to the model's σ.
    #[serde(default)]
    pub sigmas: Vec<f64>,
    #[serde(default = "seven")]
    pub start_grid: usize,
    #[serde(default = "two")]
    pub start_radius: f64,
    #[serde(default = "nodes")]
    pub n_nodes: usize,
    #[serde(default)]
    pub solver: FixedPointOptions,
    /// Density export grid: symmetric uniform points on [−R, R].
    #[serde(default = "density_radius")]
    pub density_radius: f64,
    #[serde(default = "density_points")]
    pub density_points: usize,
}

fn seven() -> usize {
    7
}

fn two() -> f64 {
    2.0
}

fn nodes() -> usize {
    4001
}

fn density_radius() -> f64 {
    3.0
}

fn density_points() -> usize {
    1201
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FpInit {
    Gaussian { mean: [f64; 2], var: [f64; 2] },
    Stationary { m1: f64, m2: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpdeParams {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "hundred")]
    pub record_stride: usize,
    pub init: FpInit,
}

fn hundred() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceParams {
    pub m_star: f64,
    #[serde(default)]
    pub rho1: f64,
    #[serde(default)]
    pub rho2: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Params {
    Simulate(SimulateParams),
    Picard(PicardParams),
    Poc(PocParams),
    Invariant(InvariantParams),
    Fpde(FpdeParams),
    Laplace(LaplaceParams),
}

/// A validated spec with all defaults filled in.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSpec {
    pub kind: Kind,
    pub model: ModelConfig,
    pub seed: u64,
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub params: Params,
}

fn parse_at<T: DeserializeOwned>(value: &Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let at = if path == "." {
            prefix.to_string()
        } else {
            format!("{prefix}.{path}")
        };
        CliError::Schema(format!("at `{at}`: {}", e.inner()))
    })
}

/// Parses and validates a spec.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        CliError::Schema(format!("at `{}`: {}", e.path(), e.inner()))
    })?;
    let params = match raw.kind {
        Kind::Simulate => Params::Simulate(parse_at(&raw.params, "params")?),
        Kind::Picard => Params::Picard(parse_at(&raw.params, "params")?),
        Kind::Poc => Params::Poc(parse_at(&raw.params, "params")?),
        Kind::Invariant => Params::Invariant(parse_at(&raw.params, "params")?),
        Kind::Fpde => Params::Fpde(parse_at(&raw.params, "params")?),
        Kind::Laplace => Params::Laplace(parse_at(&raw.params, "params")?),
    };
    let spec = ExperimentSpec {
        kind: raw.kind,
        model: raw.model,
        seed: raw.seed,
        threads: raw.threads,
        out: raw.out,
        params,
    };
    validate(&spec)?;
    Ok(spec)
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

fn validate(spec: &ExperimentSpec) -> Result<(), CliError> {
    match &spec.params {
        Params::Simulate(p) => {
            if p.n == 0 || p.m == 0 {
                return Err(schema("at `params.n`/`params.m`: particle counts must be positive"));
            }
        }
        Params::Picard(p) => {
            if p.n_particles == 0 {
                return Err(schema("at `params.n_particles`: must be positive"));
            }
        }
        Params::Poc(p) => {
            let mut ns: Vec<usize> = p.schedule.iter().map(|s| s.n).collect();
            ns.sort_unstable();
            ns.dedup();
            if ns.len() < 4 {
                return Err(schema(format!(
                    "at `params.schedule`: the rate fit needs at least 4 distinct N, got {}",
                    ns.len()
                )));
            }
            if p.replicas < 2 {
                return Err(schema("at `params.replicas`: need at least 2 replicas"));
            }
            if p.schedule.iter().any(|s| s.n == 0 || s.m == 0) {
                return Err(schema("at `params.schedule`: particle counts must be positive"));
            }
            let r0 = p.schedule[0].n as f64 / p.schedule[0].m as f64;
            if p
                .schedule
                .iter()
                .any(|s| (s.n as f64 / s.m as f64 - r0).abs() > 1e-12 * r0)
            {
                return Err(schema("at `params.schedule`: N/M must be the same at every point"));
            }
            let frac = r0 / (1.0 + r0);
            if !spec.model.interactions.is_zero() && (spec.model.a - frac).abs() > 1e-12 {
                return Err(schema(format!(
                    "at `model.a`: must equal N/(N+M) = {frac} for the schedule"
                )));
            }
        }
        Params::Invariant(p) => {
            if p.sigmas.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(schema("at `params.sigmas`: must be strictly decreasing"));
            }
            if p.sigmas.iter().any(|s| !(*s > 0.0)) {
                return Err(schema("at `params.sigmas`: values must be positive"));
            }
            if p.start_grid == 0 {
                return Err(schema("at `params.start_grid`: must be positive"));
            }
        }
        Params::Fpde(_) | Params::Laplace(_) => {}
    }
    if spec.model.quadratic().is_none()
        && matches!(spec.kind, Kind::Invariant | Kind::Laplace)
    {
        return Err(schema("at `model`: this kind needs quadratic interactions"));
    }
    Ok(())
}

/// Files a run writes, in order.
pub fn planned_files(spec: &ExperimentSpec) -> Vec<String> {
    let mut files: Vec<String> = match &spec.params {
        Params::Simulate(_) => vec!["moments.csv".into(), "positions.csv".into()],
        Params::Picard(_) => vec!["picard_log.csv".into(), "drift.json".into()],
        Params::Poc(_) => vec![
            "picard_log.csv".into(),
            "poc_results.csv".into(),
            "rate_fit.csv".into(),
        ],
        Params::Invariant(_) => vec![
            "roots.csv".into(),
            "density_root<i>.csv (one per root at the last sigma)".into(),
        ],
        Params::Fpde(p) => {
            let mut f = vec!["fp_snapshots.csv".to_string(), "fp_log.csv".to_string()];
            if matches!(p.init, FpInit::Stationary { .. }) {
                f.push("residual.csv".into());
            }
            f
        }
        Params::Laplace(_) => vec!["expansion.json".into()],
    };
    files.push("summary.json".into());
    files.push("manifest.json".into());
    files
}

fn mib(bytes: f64) -> String {
    format!("{:.1} MiB", bytes / (1024.0 * 1024.0))
}

/// Human-readable plan. Performs no computation and writes nothing.
pub fn describe(spec: &ExperimentSpec, out: Option<&Path>) -> String {
    let mut s = String::new();
    let kind = serde_json::to_value(spec.kind).unwrap();
    let _ = writeln!(s, "twomv {VERSION} plan");
    let _ = writeln!(s, "kind: {}", kind.as_str().unwrap_or("?"));
    let _ = writeln!(s, "master seed: {}", spec.seed);
    let threads = if spec.threads == 0 {
        "all hardware threads".to_string()
    } else {
        spec.threads.to_string()
    };
    let _ = writeln!(s, "threads: {threads}");
    let _ = writeln!(
        s,
        "model: {}",
        serde_json::to_string(&spec.model).unwrap_or_default()
    );
    let _ = writeln!(
        s,
        "params: {}",
        serde_json::to_string(&spec.params).unwrap_or_default()
    );
    match &spec.params {
        Params::Simulate(p) => {
            let snaps = p.n_steps / p.record_stride + 2;
            let _ = writeln!(
                s,
                "schedule: 1 run, N = {}, M = {}, {} steps of dt = {}",
                p.n, p.m, p.n_steps, p.dt
            );
            let bytes = (p.n + p.m) as f64 * 8.0 * (snaps as f64 + 3.0)
                + (p.n_steps + 1) as f64 * 2.0 * 6.0 * 8.0;
            let _ = writeln!(s, "estimated memory: {}", mib(bytes));
        }
        Params::Picard(p) => {
            let steps = (p.horizon / p.dt).round() as usize;
            let _ = writeln!(
                s,
                "schedule: up to {} applications of the drift map, {} particles per species, {} steps",
                p.max_iter, p.n_particles, steps
            );
            let bytes = 2.0 * p.n_particles as f64 * 8.0 * 3.0 + (steps + 1) as f64 * 4.0 * 8.0 * 8.0 * 2.0;
            let _ = writeln!(s, "estimated memory: {}", mib(bytes));
        }
        Params::Poc(p) => {
            let picard_seed = derive_stream(spec.seed, "picard", 0);
            let _ = writeln!(
                s,
                "hat drift: Picard with {} particles per species, seed {picard_seed}",
                p.picard.n_particles
            );
            for pt in &p.schedule {
                let _ = writeln!(s, "  N = {}, M = {}: {} coupled runs", pt.n, pt.m, p.replicas);
            }
            let _ = writeln!(
                s,
                "schedule: {} x {} coupled runs",
                p.schedule.len(),
                p.replicas
            );
            let _ = writeln!(
                s,
                "replica seeds: derive_stream({}, \"replica\", r) for r = 0..{}",
                spec.seed,
                p.replicas
            );
            let steps = (p.horizon / p.dt).round() as usize;
            let big = p.schedule.iter().map(|x| x.n + x.m).max().unwrap_or(0);
            let bytes = 2.0 * p.picard.n_particles as f64 * 24.0
                + p.replicas as f64 * (steps + 1) as f64 * 5.0 * 8.0
                + big as f64 * 8.0 * 8.0;
            let _ = writeln!(s, "estimated memory: {}", mib(bytes));
        }
        Params::Invariant(p) => {
            let sigmas = if p.sigmas.is_empty() {
                vec![spec.model.sigma]
            } else {
                p.sigmas.clone()
            };
            let _ = writeln!(
                s,
                "schedule: fixed points at sigma = {sigmas:?} from a {0}x{0} start grid over [-{1}, {1}]^2",
                p.start_grid, p.start_radius
            );
            let _ = writeln!(s, "estimated memory: {}", mib(p.n_nodes as f64 * 8.0 * 8.0));
        }
        Params::Fpde(p) => {
            let steps = (p.horizon / p.dt).round() as usize;
            let _ = writeln!(
                s,
                "schedule: {} explicit steps on {} cells of [{}, {}]",
                steps, p.n_cells, p.x_min, p.x_max
            );
            let snaps = steps / p.record_stride.max(1) + 2;
            let _ = writeln!(
                s,
                "estimated memory: {}",
                mib(snaps as f64 * p.n_cells as f64 * 16.0)
            );
        }
        Params::Laplace(p) => {
            let _ = writeln!(s, "schedule: closed-form expansion about m* = {}", p.m_star);
            let _ = writeln!(s, "estimated memory: {}", mib(1024.0));
        }
    }
    let dir = out
        .map(|p| p.display().to_string())
        .or_else(|| spec.out.as_ref().map(|p| p.display().to_string()))
        .unwrap_or_else(|| "<unset>".into());
    let _ = writeln!(s, "output directory: {dir}");
    let _ = writeln!(s, "files:");
    for f in planned_files(spec) {
        let _ = writeln!(s, "  {f}");
    }
    s
}

struct Writer {
    dir: PathBuf,
    files: Vec<(String, String, usize)>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        let digest = hex::encode(Sha256::digest(bytes));
        self.files.push((name.to_string(), digest, bytes.len()));
        Ok(())
    }

    fn csv(&mut self, name: &str, t: &CsvTable) -> Result<(), CliError> {
        self.put(name, t.as_str().as_bytes())
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(v).expect("json values serialize");
        text.push('\n');
        self.put(name, text.as_bytes())
    }
}

/// Outcome of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Value,
    pub files: Vec<String>,
    /// Set when the run finished but a solver did not converge.
    pub warning: Option<String>,
}

fn verbose_log(verbose: u8, msg: impl AsRef<str>) {
    if verbose > 0 {
        eprintln!("[twomv] {}", msg.as_ref());
    }
}

/// Runs the experiment and writes artifacts into `out` (created if needed).
pub fn run(spec: &ExperimentSpec, out: &Path, verbose: u8) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    let mut w = Writer {
        dir: out.to_path_buf(),
        files: Vec::new(),
    };
    let (summary, warning) = pool.install(|| execute(spec, &mut w, verbose))?;
    w.json("summary.json", &summary)?;
    let manifest = json!({
        "tool": "twomv",
        "version": VERSION,
        "spec": spec,
        "files": w.files.iter().map(|(n, h, b)| json!({"name": n, "sha256": h, "bytes": b})).collect::<Vec<_>>(),
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let path = out.join("manifest.json");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    let mut files: Vec<String> = w.files.into_iter().map(|(n, _, _)| n).collect();
    files.push("manifest.json".into());
    Ok(RunOutcome {
        summary,
        files,
        warning,
    })
}

fn execute(spec: &ExperimentSpec, w: &mut Writer, verbose: u8) -> Result<(Value, Option<String>), CliError> {
    let cfg = &spec.model;
    match &spec.params {
        Params::Simulate(p) => {
            let ens = Ensemble::sample(cfg, p.n, p.m, &p.init_x, &p.init_y, spec.seed, p.antithetic)?;
            let params = SimParams {
                dt: p.dt,
                n_steps: p.n_steps,
                seed: spec.seed,
                record_stride: p.record_stride,
            };
            verbose_log(verbose, format!("simulating {} steps", p.n_steps));
            let traj = simulate(&ens, cfg, &params, DriveMode::Interacting)?;
            w.csv("moments.csv", &traj.moments_csv())?;
            w.csv("positions.csv", &traj.positions_csv())?;
            let last = traj.times.len() - 1;
            Ok((
                json!({
                    "kind": "simulate",
                    "horizon": traj.final_state.t,
                    "final_mean_x": traj.moments_x[last].mean(),
                    "final_mean_y": traj.moments_y[last].mean(),
                }),
                None,
            ))
        }
        Params::Picard(p) => {
            let mc = McParams {
                n_particles: p.n_particles,
                dt: p.dt,
                seed: spec.seed,
                init_x: p.init_x.clone(),
                init_y: p.init_y.clone(),
                antithetic: p.antithetic,
                norm_grid: p.norm_grid,
            };
            let res = picard_solve(cfg, p.horizon, &mc, p.tol, p.max_iter)?;
            for r in &res.log {
                verbose_log(verbose, format!("iteration {}: difference {:e}", r.iter, r.norm_diff));
            }
            w.csv("picard_log.csv", &res.log_csv())?;
            w.put("drift.json", res.drift.to_json().as_bytes())?;
            let warning = (!res.converged).then(|| {
                format!("Picard iteration did not reach tol {} in {} iterations", p.tol, p.max_iter)
            });
            Ok((
                json!({
                    "kind": "picard",
                    "converged": res.converged,
                    "iterations": res.log.len(),
                    "final_difference": res.log.last().map(|r| r.norm_diff),
                }),
                warning,
            ))
        }
        Params::Poc(p) => {
            let mc = McParams {
                n_particles: p.picard.n_particles,
                dt: p.dt,
                seed: derive_stream(spec.seed, "picard", 0),
                init_x: p.init_x.clone(),
                init_y: p.init_y.clone(),
                antithetic: true,
                norm_grid: GridSpec::default(),
            };
            verbose_log(verbose, "solving for the nonlinear drift");
            let hat = picard_solve(cfg, p.horizon, &mc, p.picard.tol, p.picard.max_iter)?;
            w.csv("picard_log.csv", &hat.log_csv())?;
            if !hat.converged {
                return Err(CliError::Numeric(format!(
                    "Picard iteration for the nonlinear drift did not reach tol {} in {} iterations",
                    p.picard.tol, p.picard.max_iter
                )));
            }
            let mut stats = Vec::with_capacity(p.schedule.len());
            for pt in &p.schedule {
                verbose_log(verbose, format!("N = {}, M = {}: {} runs", pt.n, pt.m, p.replicas));
                let cp = CouplingParams {
                    n: pt.n,
                    m: pt.m,
                    horizon: p.horizon,
                    dt: p.dt,
                    init_x: p.init_x.clone(),
                    init_y: p.init_y.clone(),
                    method: PairwiseMethod::Auto,
                };
                let runs = replicate(cfg, &cp, p.replicas, spec.seed, &hat.drift)?;
                stats.push(error_stats(&runs)?);
            }
            w.csv("poc_results.csv", &results_csv(&stats))?;
            let fits = rate_fit(&stats)?;
            w.csv("rate_fit.csv", &rate_fit_csv(&fits))?;
            let slopes: serde_json::Map<String, Value> = fits
                .iter()
                .map(|f| (f.stat.name().to_string(), json!({"slope": f.slope, "ci_halfwidth": f.ci_halfwidth})))
                .collect();
            Ok((
                json!({
                    "kind": "poc",
                    "coupled_runs": p.schedule.len() * p.replicas,
                    "slopes": slopes,
                }),
                None,
            ))
        }
        Params::Invariant(p) => {
            let sigmas = if p.sigmas.is_empty() {
                vec![cfg.sigma]
            } else {
                p.sigmas.clone()
            };
            let starts: Vec<MeanPair> = start_grid(p.start_grid, p.start_radius);
            let rows = sigma_scan(cfg, &sigmas, &starts, p.n_nodes, &p.solver)?;
            w.csv("roots.csv", &roots_csv(&rows))?;
            let last = rows.last().expect("at least one sigma");
            let grid = symmetric_points(p.density_radius, p.density_points);
            let c_last = cfg.with_sigma(last.sigma)?;
            for (i, r) in last.roots.iter().enumerate() {
                let sp = stationary_density(&r.m, &c_last, &grid)?;
                w.csv(&format!("density_root{i}.csv"), &sp.to_csv())?;
            }
            Ok((
                json!({
                    "kind": "invariant",
                    "sigma": last.sigma,
                    "root_count": last.root_count(),
                    "root_counts": rows.iter().map(|r| json!({"sigma": r.sigma, "root_count": r.root_count()})).collect::<Vec<_>>(),
                    "roots": last.roots.iter().map(|r| json!([r.m.m1, r.m.m2])).collect::<Vec<_>>(),
                }),
                None,
            ))
        }
        Params::Fpde(p) => {
            let grid = Grid1D::new(p.x_min, p.x_max, p.n_cells)?;
            let (dp, sp) = match &p.init {
                FpInit::Gaussian { mean, var } => (DensityPair::gaussian(&grid, *mean, *var)?, None),
                FpInit::Stationary { m1, m2 } => {
                    let sp = stationary_density(&MeanPair::new(*m1, *m2), cfg, &grid.centers())?;
                    (DensityPair::from_stationary(&sp, &grid)?, Some(sp))
                }
            };
            let run = fp_evolve(&dp, cfg, &grid, p.horizon, p.dt, p.record_stride, true)?;
            w.csv("fp_snapshots.csv", &run.snapshots_csv(&grid))?;
            let mut log = CsvTable::new(&["t", "mass_mu", "mass_nu", "mean_mu", "mean_nu"]);
            for e in &run.log {
                log.row(&[e.t.into(), e.mass[0].into(), e.mass[1].into(), e.mean[0].into(), e.mean[1].into()]);
            }
            w.csv("fp_log.csv", &log)?;
            let mut summary = json!({
                "kind": "fpde",
                "final_mean_mu": run.state.means(&grid)[0],
                "final_mean_nu": run.state.means(&grid)[1],
                "l1_change": run.state.l1_distance(&dp, &grid),
            });
            if let Some(sp) = sp {
                let (a, b) = fp_residual(&sp, cfg, &grid)?;
                w.csv("residual.csv", &residual_csv(&[(grid.h(), a, b)]))?;
                summary["residual"] = json!([a, b]);
            }
            Ok((summary, None))
        }
        Params::Laplace(p) => {
            let e = laplace_expand(cfg, p.m_star, p.rho1, p.rho2)?;
            w.put("expansion.json", format!("{}\n", e.to_json()).as_bytes())?;
            Ok((
                json!({
                    "kind": "laplace",
                    "k1": e.k1,
                    "k2": e.k2,
                    "rho_threshold": e.rho_threshold,
                }),
                None,
            ))
        }
    }
}

fn symmetric_points(r: f64, n: usize) -> Vec<f64> {
    let n = n.max(3) | 1;
    let c = ((n - 1) / 2) as f64;
    let h = r / c;
    (0..n).map(|i| (i as f64 - c) * h).collect()
}

/// Reads, validates and runs (or describes) a spec file. Returns the exit code.
pub fn main_with(config: &Path, out: Option<&Path>, dry_run: bool, verbose: u8) -> i32 {
    let text = match fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}", io_err(config, e));
            return 1;
        }
    };
    let spec = match parse_spec(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if dry_run {
        print!("{}", describe(&spec, out));
        return 0;
    }
    let Some(dir) = out.map(Path::to_path_buf).or_else(|| spec.out.clone()) else {
        eprintln!("error: {}", schema("no output directory: pass --out or set `out`"));
        return 2;
    };
    match run(&spec, &dir, verbose) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
            if let Some(w) = outcome.warning {
                eprintln!("error: {}", CliError::Numeric(w));
                return 3;
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
