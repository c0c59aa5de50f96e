//! Propagation-of-chaos experiments.
//!
//! The interacting system and N + M independent copies of the nonlinear
//! process are stepped in lockstep from identical initial positions, with the
//! same Brownian increment for particle i in both systems (synchronous
//! coupling). The pathwise gaps `X_i − X̂_i` are then averaged over particles
//! and replicas, and the decay in N is fitted on a log-log scale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{ModelConfig, Species};
use crate::output::CsvTable;
use crate::picard::DriftPair;
use crate::sde::{
    em_step_external, em_step_interacting, Ensemble, InitialLaw, NoiseTape, PairwiseMethod,
};
use crate::util::{derive_stream, linfit, mean_stderr, student_t_quantile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub n: usize,
    pub m: usize,
    pub horizon: f64,
    pub dt: f64,
    pub init_x: InitialLaw,
    pub init_y: InitialLaw,
    #[serde(default)]
    pub method: PairwiseMethod,
}

/// Per-run coupling errors. Averages are over particles within the run.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRun {
    pub n: usize,
    pub m: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    /// avg_i (X_i − X̂_i)² at each step.
    pub sq_x: Vec<f64>,
    pub sq_y: Vec<f64>,
    /// avg_i (X_i − X̂_i)⁴ at each step.
    pub quad_x: Vec<f64>,
    pub quad_y: Vec<f64>,
    /// avg_i sup_t (X_i − X̂_i)².
    pub sup_sq_x: f64,
    pub sup_sq_y: f64,
    /// Final positions of both systems.
    pub interacting: Ensemble,
    pub hat: Ensemble,
}

fn gap_stats(a: &[f64], b: &[f64], sup: &mut [f64]) -> (f64, f64) {
    let mut s2 = 0.0;
    let mut s4 = 0.0;
    for ((p, q), s) in a.iter().zip(b).zip(sup.iter_mut()) {
        let d2 = (p - q) * (p - q);
        s2 += d2;
        s4 += d2 * d2;
        if d2 > *s {
            *s = d2;
        }
    }
    let n = a.len() as f64;
    (s2 / n, s4 / n)
}

/// Couples the interacting system with the nonlinear copies driven by
/// `hat_drift`, sampling identical initial positions for both.
pub fn coupled_run(
    cfg: &ModelConfig,
    params: &CouplingParams,
    seed: u64,
    hat_drift: &DriftPair,
) -> Result<CouplingRun> {
    let ens = Ensemble::sample(
        cfg,
        params.n,
        params.m,
        &params.init_x,
        &params.init_y,
        seed,
        false,
    )?;
    let tape = NoiseTape::new(seed, params.dt);
    coupled_run_from(cfg, &ens, &ens, params, seed, &tape, hat_drift)
}

/// Like [`coupled_run`] with explicit initial ensembles and noise tape.
/// The two ensembles must coincide.
pub fn coupled_run_from(
    cfg: &ModelConfig,
    interacting0: &Ensemble,
    hat0: &Ensemble,
    params: &CouplingParams,
    seed: u64,
    tape: &NoiseTape,
    hat_drift: &DriftPair,
) -> Result<CouplingRun> {
    if interacting0.x != hat0.x || interacting0.y != hat0.y {
        return invalid("coupled systems must start from identical positions");
    }
    let (n, m) = (interacting0.x.len(), interacting0.y.len());
    if n != params.n || m != params.m {
        return invalid("initial ensemble sizes do not match (N, M)");
    }
    let ratio = n as f64 / (n + m) as f64;
    if !cfg.interactions.is_zero() && (cfg.a - ratio).abs() > 1e-12 {
        return invalid(format!(
            "model weight a = {} must equal N/(N+M) = {ratio} for the coupling",
            cfg.a
        ));
    }
    if !(params.dt > 0.0) {
        return invalid("dt must be positive");
    }
    let n_steps = (params.horizon / params.dt).round() as usize;
    if n_steps == 0 || hat_drift.horizon() < params.horizon * (1.0 - 1e-12) {
        return invalid(format!(
            "hat drift covers [0, {}] but the horizon is {}",
            hat_drift.horizon(),
            params.horizon
        ));
    }
    let mut inter = interacting0.clone();
    let mut hat = hat0.clone();
    let mut dw_x = vec![0.0; n];
    let mut dw_y = vec![0.0; m];
    let mut sup_x = vec![0.0; n];
    let mut sup_y = vec![0.0; m];
    let mut out = CouplingRun {
        n,
        m,
        horizon: params.horizon,
        dt: params.dt,
        seed,
        times: Vec::with_capacity(n_steps + 1),
        sq_x: Vec::with_capacity(n_steps + 1),
        sq_y: Vec::with_capacity(n_steps + 1),
        quad_x: Vec::with_capacity(n_steps + 1),
        quad_y: Vec::with_capacity(n_steps + 1),
        sup_sq_x: 0.0,
        sup_sq_y: 0.0,
        interacting: inter.clone(),
        hat: hat.clone(),
    };
    for k in 0..=n_steps {
        let (s2x, s4x) = gap_stats(&inter.x, &hat.x, &mut sup_x);
        let (s2y, s4y) = gap_stats(&inter.y, &hat.y, &mut sup_y);
        out.times.push(inter.t);
        out.sq_x.push(s2x);
        out.sq_y.push(s2y);
        out.quad_x.push(s4x);
        out.quad_y.push(s4y);
        if k == n_steps {
            break;
        }
        tape.fill(Species::X, inter.step, &mut dw_x);
        tape.fill(Species::Y, inter.step, &mut dw_y);
        em_step_interacting(&mut inter, cfg, params.dt, &dw_x, &dw_y, params.method)?;
        em_step_external(&mut hat, cfg, hat_drift, params.dt, &dw_x, &dw_y)?;
    }
    out.sup_sq_x = sup_x.iter().sum::<f64>() / n as f64;
    out.sup_sq_y = sup_y.iter().sum::<f64>() / m as f64;
    out.interacting = inter;
    out.hat = hat;
    Ok(out)
}

/// Replica seeds depend only on (master seed, replica index), so the same
/// replica reuses its noise across the N-schedule.
pub fn replica_seed(master_seed: u64, replica: usize) -> u64 {
    derive_stream(master_seed, "replica", replica as u64)
}

/// Runs `replicas` coupled runs in parallel.
pub fn replicate(
    cfg: &ModelConfig,
    params: &CouplingParams,
    replicas: usize,
    master_seed: u64,
    hat_drift: &DriftPair,
) -> Result<Vec<CouplingRun>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| coupled_run(cfg, params, replica_seed(master_seed, r), hat_drift))
        .collect()
}

/// Headline statistics available for rate fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    /// sup_t E(X − X̂)²
    Omega,
    /// sup_t E(Y − Ŷ)²
    OmegaHat,
    /// sup_t E(X − X̂)⁴
    FourthMoment,
    /// sup_t E(Y − Ŷ)⁴
    FourthMomentHat,
    /// E sup_t (X − X̂)²
    SupSqX,
    /// E sup_t (Y − Ŷ)²
    SupSqY,
}

impl Stat {
    pub const ALL: [Stat; 6] = [
        Stat::Omega,
        Stat::OmegaHat,
        Stat::FourthMoment,
        Stat::FourthMomentHat,
        Stat::SupSqX,
        Stat::SupSqY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stat::Omega => "omega",
            Stat::OmegaHat => "omega_hat",
            Stat::FourthMoment => "fourth_moment",
            Stat::FourthMomentHat => "fourth_moment_hat",
            Stat::SupSqX => "sup_sq_x",
            Stat::SupSqY => "sup_sq_y",
        }
    }
}

/// Replica-averaged coupling errors with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub n: usize,
    pub m: usize,
    pub replicas: usize,
    pub times: Vec<f64>,
    pub omega: Vec<f64>,
    pub omega_se: Vec<f64>,
    pub omega_hat: Vec<f64>,
    pub omega_hat_se: Vec<f64>,
    pub fourth_moment: Vec<f64>,
    pub fourth_moment_se: Vec<f64>,
    pub fourth_moment_hat: Vec<f64>,
    pub fourth_moment_hat_se: Vec<f64>,
    pub sup_sq_x: f64,
    pub sup_sq_x_se: f64,
    pub sup_sq_y: f64,
    pub sup_sq_y_se: f64,
}

fn series_stats(runs: &[CouplingRun], pick: impl Fn(&CouplingRun) -> &[f64]) -> (Vec<f64>, Vec<f64>) {
    let len = pick(&runs[0]).len();
    let mut buf = vec![0.0; runs.len()];
    (0..len)
        .map(|k| {
            for (b, r) in buf.iter_mut().zip(runs) {
                *b = pick(r)[k];
            }
            mean_stderr(&buf)
        })
        .unzip()
}

fn sup_with_se(values: &[f64], se: &[f64]) -> (f64, f64) {
    values
        .iter()
        .zip(se)
        .fold((f64::NEG_INFINITY, f64::NAN), |acc, (&v, &s)| if v > acc.0 { (v, s) } else { acc })
}

pub fn error_stats(runs: &[CouplingRun]) -> Result<ErrorStats> {
    if runs.len() < 2 {
        return invalid("error statistics need at least two replicas");
    }
    let first = &runs[0];
    for r in runs {
        if r.n != first.n
            || r.m != first.m
            || r.dt != first.dt
            || r.horizon != first.horizon
            || r.times.len() != first.times.len()
        {
            return invalid("replicas must share (N, M, T, dt)");
        }
    }
    let (omega, omega_se) = series_stats(runs, |r| &r.sq_x);
    let (omega_hat, omega_hat_se) = series_stats(runs, |r| &r.sq_y);
    let (fourth_moment, fourth_moment_se) = series_stats(runs, |r| &r.quad_x);
    let (fourth_moment_hat, fourth_moment_hat_se) = series_stats(runs, |r| &r.quad_y);
    let (sup_sq_x, sup_sq_x_se) = mean_stderr(&runs.iter().map(|r| r.sup_sq_x).collect::<Vec<_>>());
    let (sup_sq_y, sup_sq_y_se) = mean_stderr(&runs.iter().map(|r| r.sup_sq_y).collect::<Vec<_>>());
    Ok(ErrorStats {
        n: first.n,
        m: first.m,
        replicas: runs.len(),
        times: first.times.clone(),
        omega,
        omega_se,
        omega_hat,
        omega_hat_se,
        fourth_moment,
        fourth_moment_se,
        fourth_moment_hat,
        fourth_moment_hat_se,
        sup_sq_x,
        sup_sq_x_se,
        sup_sq_y,
        sup_sq_y_se,
    })
}

impl ErrorStats {
    /// Headline value and its standard error.
    pub fn scalar(&self, stat: Stat) -> (f64, f64) {
        match stat {
            Stat::Omega => sup_with_se(&self.omega, &self.omega_se),
            Stat::OmegaHat => sup_with_se(&self.omega_hat, &self.omega_hat_se),
            Stat::FourthMoment => sup_with_se(&self.fourth_moment, &self.fourth_moment_se),
            Stat::FourthMomentHat => {
                sup_with_se(&self.fourth_moment_hat, &self.fourth_moment_hat_se)
            }
            Stat::SupSqX => (self.sup_sq_x, self.sup_sq_x_se),
            Stat::SupSqY => (self.sup_sq_y, self.sup_sq_y_se),
        }
    }

    /// Rows `N,M,R,stat,value,stderr` appended to `table`.
    pub fn append_rows(&self, table: &mut CsvTable) {
        for stat in Stat::ALL {
            let (v, se) = self.scalar(stat);
            table.row(&[
                self.n.into(),
                self.m.into(),
                self.replicas.into(),
                stat.name().into(),
                v.into(),
                se.into(),
            ]);
        }
    }
}

pub fn results_csv(schedule: &[ErrorStats]) -> CsvTable {
    let mut table = CsvTable::new(&["N", "M", "R", "stat", "value", "stderr"]);
    for s in schedule {
        s.append_rows(&mut table);
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub stat: Stat,
    pub slope: f64,
    /// 95% confidence half-width from the residuals.
    pub ci_halfwidth: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of log(stat) against log(N) for each headline statistic.
pub fn rate_fit(schedule: &[ErrorStats]) -> Result<Vec<RateFit>> {
    let mut ns: Vec<usize> = schedule.iter().map(|s| s.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return invalid(format!(
            "rate fit needs at least 4 distinct N, got {}",
            ns.len()
        ));
    }
    let ratio = schedule[0].n as f64 / schedule[0].m as f64;
    if schedule
        .iter()
        .any(|s| (s.n as f64 / s.m as f64 - ratio).abs() > 1e-12 * ratio)
    {
        return invalid("rate fit needs a fixed N/M ratio along the schedule");
    }
    let xs: Vec<f64> = schedule.iter().map(|s| (s.n as f64).ln()).collect();
    Stat::ALL
        .iter()
        .map(|&stat| {
            let values: Vec<f64> = schedule.iter().map(|s| s.scalar(stat).0).collect();
            if values.iter().any(|v| !(*v > 0.0)) {
                return invalid(format!(
                    "statistic {} is not strictly positive along the schedule",
                    stat.name()
                ));
            }
            let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            let fit = linfit(&xs, &ys)?;
            let t = student_t_quantile(0.975, (fit.n - 2) as f64);
            Ok(RateFit {
                stat,
                slope: fit.slope,
                ci_halfwidth: t * fit.slope_stderr,
                intercept: fit.intercept,
                r2: fit.r2,
            })
        })
        .collect()
}

pub fn rate_fit_csv(fits: &[RateFit]) -> CsvTable {
    let mut table = CsvTable::new(&["stat", "slope", "ci_halfwidth", "intercept", "r2"]);
    for f in fits {
        table.row(&[
            f.stat.name().into(),
            f.slope.into(),
            f.ci_halfwidth.into(),
            f.intercept.into(),
            f.r2.into(),
        ]);
    }
    table
}
