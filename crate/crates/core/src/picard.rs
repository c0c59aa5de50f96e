//! The fixed-point construction of the nonlinear drift.
//!
//! A drift 4-tuple `b = (b₁, b₂, b₃, b₄)` drives independent ensembles
//! `X^b`, `Y^b`; the map Γ returns the interaction drifts those ensembles
//! generate. Its fixed point is the drift of the McKean–Vlasov system on
//! `[0, T]`. Because every ∇F_ij is a polynomial, each component of Γ(b) is a
//! polynomial in x whose coefficients are moments of `X^b_t` or `Y^b_t`, so
//! the only discretization is the time grid.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{validate_assumptions, ModelConfig, Polynomial, Species, Verdict};
use crate::output::CsvTable;
use crate::sde::{em_step_external, empirical_moments, Ensemble, InitialLaw, NoiseTape};

/// Upper-bias factor applied to grid maxima in [`norm_t`].
pub const NORM_INFLATION: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DriftPairRaw {
    times: Vec<f64>,
    components: [Vec<Polynomial>; 4],
}

/// Drift 4-tuple on a time grid; coefficients interpolate linearly in t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DriftPairRaw", into = "DriftPairRaw")]
pub struct DriftPair {
    times: Vec<f64>,
    comps: [Vec<Polynomial>; 4],
}

impl TryFrom<DriftPairRaw> for DriftPair {
    type Error = Error;

    fn try_from(raw: DriftPairRaw) -> Result<Self> {
        Self::new(raw.times, raw.components)
    }
}

impl From<DriftPair> for DriftPairRaw {
    fn from(d: DriftPair) -> Self {
        Self {
            times: d.times,
            components: d.comps,
        }
    }
}

/// Time nodes produced by stepping `n_steps` times from 0 with `t += dt`,
/// matching the accumulation done by [`Ensemble`] stepping.
pub fn simulation_times(dt: f64, n_steps: usize) -> Vec<f64> {
    let mut t = 0.0;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(t);
    for _ in 0..n_steps {
        t += dt;
        out.push(t);
    }
    out
}

impl DriftPair {
    pub fn new(times: Vec<f64>, comps: [Vec<Polynomial>; 4]) -> Result<Self> {
        if times.len() < 2 {
            return invalid("drift time grid needs at least two nodes");
        }
        if times[0] != 0.0 {
            return invalid("drift time grid must start at 0");
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("drift time grid must be strictly increasing");
        }
        if comps.iter().any(|c| c.len() != times.len()) {
            return invalid("every drift component needs one polynomial per time node");
        }
        Ok(Self { times, comps })
    }

    pub fn zero(times: &[f64]) -> Result<Self> {
        Self::constant(times, std::array::from_fn(|_| Polynomial::zero()))
    }

    /// The same polynomials at every node.
    pub fn constant(times: &[f64], polys: [Polynomial; 4]) -> Result<Self> {
        let comps = polys.map(|p| vec![p; times.len()]);
        Self::new(times.to_vec(), comps)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    pub fn component(&self, i: usize) -> &[Polynomial] {
        &self.comps[i]
    }

    pub fn max_degree(&self) -> usize {
        self.comps
            .iter()
            .flatten()
            .map(Polynomial::degree)
            .max()
            .unwrap_or(0)
    }

    /// All four components at time `t`.
    pub fn at(&self, t: f64) -> Result<[Polynomial; 4]> {
        let horizon = self.horizon();
        if !(t >= 0.0) || t > horizon * (1.0 + 1e-12) {
            return invalid(format!("time {t} outside drift domain [0, {horizon}]"));
        }
        let k = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        Ok(std::array::from_fn(|i| {
            let (p0, p1) = (&self.comps[i][k], &self.comps[i][k + 1]);
            if w == 0.0 {
                p0.clone()
            } else if w == 1.0 {
                p1.clone()
            } else {
                p0.scale(1.0 - w).add(&p1.scale(w))
            }
        }))
    }

    pub fn eval(&self, i: usize, t: f64, x: f64) -> Result<f64> {
        Ok(self.at(t)?[i].eval(x))
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.times.len() == other.times.len()
            && self
                .times
                .iter()
                .zip(&other.times)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0))
    }

    /// Node-wise difference; both drifts must share a time grid.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if !self.same_grid(other) {
            return invalid("drift difference needs identical time grids");
        }
        let comps = std::array::from_fn(|i| {
            self.comps[i]
                .iter()
                .zip(&other.comps[i])
                .map(|(p, q)| p.sub(q))
                .collect()
        });
        Self::new(self.times.clone(), comps)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("drift serializes")
    }
}

/// Symmetric spatial grid `[−R, R]` used to approximate sup over x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub radius: f64,
    pub n_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            radius: 16.0,
            n_points: 3201,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let half = (self.n_points.max(3) - 1) as f64 / 2.0;
        let h = self.radius / half;
        (0..self.n_points.max(3))
            .map(|i| (i as f64 - half) * h)
            .collect()
    }
}

/// Weighted norms ‖b_i‖_T = sup_{s≤T} sup_x |b_i(s,x)| / (1 + |x|^{2q}).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftNorms {
    /// Reported (inflated) component norms.
    pub components: [f64; 4],
    /// Raw grid maxima before inflation.
    pub grid_max: [f64; 4],
    pub total: f64,
}

impl DriftNorms {
    pub fn max_component(&self) -> f64 {
        self.components.iter().copied().fold(0.0, f64::max)
    }
}

/// Upper bound on sup_{|x|≥r} |p(x)| / (1 + |x|^{2q}).
///
/// Splits off `c_{2q}·(1 + x^{2q})` and bounds the remainder term by term:
/// `x^k / (1 + x^{2q})` peaks at `x* = (k / (2q − k))^{1/2q}` and decreases
/// after it. Infinite when deg p > 2q.
fn tail_bound(p: &Polynomial, q: usize, r: f64) -> f64 {
    let two_q = 2 * q;
    if p.degree() > two_q {
        return f64::INFINITY;
    }
    let lead = p.coeff(two_q);
    let rest: f64 = p
        .coeffs()
        .iter()
        .take(two_q)
        .enumerate()
        .map(|(k, c)| {
            let c = if k == 0 { c - lead } else { *c };
            let peak = (k as f64 / (two_q - k) as f64).powf(1.0 / two_q as f64);
            let x = r.max(peak);
            c.abs() * x.powi(k as i32) / (1.0 + x.powi(two_q as i32))
        })
        .sum();
    lead.abs() + rest
}

/// Grid approximation of the weighted sup norm, inflated by [`NORM_INFLATION`].
///
/// The sup over time is exact on the nodes because coefficients are linear
/// in t between them. Fails with [`Error::GridTooSmall`] when a rigorous
/// bound on the weighted ratio beyond R exceeds the grid maximum, i.e. when
/// the grid cannot certify where the sup is attained.
pub fn norm_t(b: &DriftPair, q: usize, grid: &GridSpec) -> Result<DriftNorms> {
    if q == 0 {
        return invalid("q must be at least 1");
    }
    let xs = grid.points();
    let weights: Vec<f64> = xs.iter().map(|x| 1.0 + x.abs().powi(2 * q as i32)).collect();
    let r = grid.radius;
    let mut grid_max = [0.0; 4];
    for (i, comp) in b.comps.iter().enumerate() {
        let mut best = 0.0f64;
        for p in comp {
            if p.is_zero() {
                continue;
            }
            for (x, w) in xs.iter().zip(&weights) {
                best = best.max(p.eval(*x).abs() / w);
            }
        }
        for p in comp {
            if tail_bound(p, q, r) > best * (1.0 + 1e-9) {
                return Err(Error::GridTooSmall {
                    component: i + 1,
                    radius: r,
                });
            }
        }
        grid_max[i] = best;
    }
    let components = grid_max.map(|v| v * NORM_INFLATION);
    Ok(DriftNorms {
        components,
        grid_max,
        total: components.iter().sum(),
    })
}

/// Monte Carlo budget for one application of Γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub n_particles: usize,
    pub dt: f64,
    pub seed: u64,
    pub init_x: InitialLaw,
    pub init_y: InitialLaw,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub norm_grid: GridSpec,
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    let n = (horizon / dt).round();
    if n < 1.0 || (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return invalid(format!("horizon {horizon} is not a positive multiple of dt = {dt}"));
    }
    Ok(n as usize)
}

/// Interaction drifts generated by moments of X and Y at one instant.
fn interaction_drifts(cfg: &ModelConfig, mx: &[f64], my: &[f64]) -> Result<[Polynomial; 4]> {
    let a = cfg.a;
    let (f11, f12) = cfg.interactions.kernels(Species::X);
    let (f21, f22) = cfg.interactions.kernels(Species::Y);
    Ok([
        f11.convolve_moments(mx)?.scale(a),
        f12.convolve_moments(my)?.scale(1.0 - a),
        f21.convolve_moments(mx)?.scale(a),
        f22.convolve_moments(my)?.scale(1.0 - a),
    ])
}

/// One application of Γ with common random numbers fixed by `mc.seed`.
pub fn gamma_map(b: &DriftPair, cfg: &ModelConfig, mc: &McParams) -> Result<DriftPair> {
    let report = validate_assumptions(cfg);
    if report.verdict(7) != Verdict::Satisfied || report.verdict(8) != Verdict::Satisfied {
        return Err(Error::Precondition(
            "the drift map needs odd increasing self-interactions and affine cross-interactions"
                .into(),
        ));
    }
    if mc.n_particles == 0 {
        return invalid("n_particles must be positive");
    }
    let n_steps = step_count(b.horizon(), mc.dt)?;
    let order = cfg.interactions.max_degree().max(1);
    let n = mc.n_particles;
    let mut ens = Ensemble::sample(cfg, n, n, &mc.init_x, &mc.init_y, mc.seed, mc.antithetic)?;
    let tape = NoiseTape::new(mc.seed, mc.dt).with_antithetic(mc.antithetic);
    let mut dw_x = vec![0.0; n];
    let mut dw_y = vec![0.0; n];
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut comps: [Vec<Polynomial>; 4] = std::array::from_fn(|_| Vec::with_capacity(n_steps + 1));
    for k in 0..=n_steps {
        let mx = empirical_moments(&ens.x, order)?;
        let my = empirical_moments(&ens.y, order)?;
        for (c, p) in comps.iter_mut().zip(interaction_drifts(cfg, &mx.0, &my.0)?) {
            c.push(p);
        }
        times.push(ens.t);
        if k < n_steps {
            tape.fill(Species::X, ens.step, &mut dw_x);
            tape.fill(Species::Y, ens.step, &mut dw_y);
            em_step_external(&mut ens, cfg, b, mc.dt, &dw_x, &dw_y)?;
        }
    }
    DriftPair::new(times, comps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// ‖b^{p+1} − b^p‖_T^F
    pub norm_diff: f64,
    /// Ratio of successive differences (NaN for the first iteration).
    pub contraction_ratio: f64,
    /// max_i ‖b_i^{p+1}‖_T, for the K-ball diagnostic.
    pub max_component_norm: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardResult {
    pub drift: DriftPair,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
}

impl PicardResult {
    /// Whether every iterate stayed in the ball `max_i ‖b_i‖_T ≤ k`.
    pub fn within_ball(&self, k: f64) -> bool {
        self.log.iter().all(|r| r.max_component_norm <= k)
    }

    pub fn log_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["iter", "norm_diff", "contraction_ratio", "wall_time_ms"]);
        for r in &self.log {
            table.row(&[
                r.iter.into(),
                r.norm_diff.into(),
                r.contraction_ratio.into(),
                r.wall_time_ms.into(),
            ]);
        }
        table
    }
}

/// Picard iteration `b⁰ = 0, b^{p+1} = Γ(b^p)` on `[0, horizon]`.
///
/// The same seed is used in every application of Γ, so successive
/// differences measure the map and not Monte Carlo noise. On
/// non-convergence the iterate with the smallest difference is returned
/// with `converged = false`.
pub fn picard_solve(
    cfg: &ModelConfig,
    horizon: f64,
    mc: &McParams,
    tol: f64,
    max_iter: usize,
) -> Result<PicardResult> {
    if !(tol > 0.0) {
        return invalid(format!("tol must be positive, got {tol}"));
    }
    if max_iter == 0 {
        return invalid("max_iter must be at least 1");
    }
    let n_steps = step_count(horizon, mc.dt)?;
    let q = cfg.q();
    let mut current = DriftPair::zero(&simulation_times(mc.dt, n_steps))?;
    let mut log = Vec::new();
    let mut best: Option<(f64, DriftPair)> = None;
    let mut prev_diff = f64::NAN;
    for iter in 1..=max_iter {
        let start = Instant::now();
        let next = gamma_map(&current, cfg, mc)?;
        let diff = norm_t(&next.sub(&current)?, q, &mc.norm_grid)?.total;
        let size = norm_t(&next, q, &mc.norm_grid)?.max_component();
        log.push(IterationRecord {
            iter,
            norm_diff: diff,
            contraction_ratio: diff / prev_diff,
            max_component_norm: size,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        prev_diff = diff;
        if diff < tol {
            return Ok(PicardResult {
                drift: next,
                log,
                converged: true,
            });
        }
        if best.as_ref().is_none_or(|(d, _)| diff < *d) {
            best = Some((diff, next.clone()));
        }
        current = next;
    }
    Ok(PicardResult {
        drift: best.map(|(_, d)| d).unwrap_or(current),
        log,
        converged: false,
    })
}

/// Empirical Lipschitz ratio ‖Γ(b) − Γ(c)‖_T^F / ‖b − c‖_T^F under common
/// random numbers.
pub fn contraction_diagnostic(
    cfg: &ModelConfig,
    mc: &McParams,
    b: &DriftPair,
    c: &DriftPair,
) -> Result<f64> {
    let q = cfg.q();
    let denom = norm_t(&b.sub(c)?, q, &mc.norm_grid)?.total;
    if denom == 0.0 {
        return invalid("contraction diagnostic needs distinct drifts");
    }
    let gb = gamma_map(b, cfg, mc)?;
    let gc = gamma_map(c, cfg, mc)?;
    Ok(norm_t(&gb.sub(&gc)?, q, &mc.norm_grid)?.total / denom)
}
