//! Stationary measures for quadratic interactions F_ij(x) = α_ij x²/2.
//!
//! A stationary pair is pinned down by its means m = (m₁, m₂): each density
//! is a Gibbs weight
//!
//! ```text
//! w₁(x) ∝ exp(−(2/σ²)[V₁(x) + τ₁x²/2 − β₁(m)x]),   τ₁ = aα₁₁ + (1−a)α₁₂,
//!                                                  β₁ = aα₁₁m₁ + (1−a)α₁₂m₂,
//! ```
//!
//! and likewise for w₂, so the means solve m = Φ(m) with Φ the vector of
//! Gibbs means.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ModelConfig, Polynomial, Species};
use crate::output::CsvTable;

/// ln(1e16): the required drop of the log-weight from its peak to ±R.
const TAIL_DROP: f64 = 36.841_361_487_904_734;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanPair {
    pub m1: f64,
    pub m2: f64,
}

impl MeanPair {
    pub fn new(m1: f64, m2: f64) -> Self {
        Self { m1, m2 }
    }

    pub fn norm_inf(&self) -> f64 {
        self.m1.abs().max(self.m2.abs())
    }

    pub fn dist(&self, other: &Self) -> f64 {
        (self.m1 - other.m1).abs().max((self.m2 - other.m2).abs())
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.m1, -self.m2)
    }

    pub fn is_finite(&self) -> bool {
        self.m1.is_finite() && self.m2.is_finite()
    }
}

/// Per-species Gibbs exponent pieces for a quadratic configuration.
#[derive(Debug, Clone)]
struct GibbsModel {
    v: [Polynomial; 2],
    tau: [f64; 2],
    /// β_s = coupling[s][0]·m₁ + coupling[s][1]·m₂
    coupling: [[f64; 2]; 2],
    beta_scale: f64,
}

impl GibbsModel {
    fn new(cfg: &ModelConfig) -> Result<Self> {
        let q = cfg.quadratic().ok_or_else(|| {
            Error::Precondition("stationary analysis requires quadratic interactions".into())
        })?;
        let [[a11, a12], [a21, a22]] = q.alpha;
        let a = cfg.a;
        let coupling = [[a * a11, (1.0 - a) * a12], [a * a21, (1.0 - a) * a22]];
        Ok(Self {
            v: [cfg.v1.clone(), cfg.v2.clone()],
            tau: [coupling[0][0] + coupling[0][1], coupling[1][0] + coupling[1][1]],
            coupling,
            beta_scale: 2.0 / (cfg.sigma * cfg.sigma),
        })
    }

    fn beta(&self, s: usize, m: &MeanPair) -> f64 {
        self.coupling[s][0] * m.m1 + self.coupling[s][1] * m.m2
    }

    /// Log of the unnormalized weight.
    fn log_weight(&self, s: usize, beta: f64, x: f64) -> f64 {
        -self.beta_scale * (self.v[s].eval(x) + 0.5 * self.tau[s] * x * x - beta * x)
    }
}

/// Composite trapezoid rule on [−R, R] with an odd number of symmetric nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub radius: f64,
    pub n_nodes: usize,
    /// Largest weight ratio w(±R)/max w seen when the rule was built.
    pub tail_bound: f64,
}

impl QuadratureRule {
    /// Builds a rule for `cfg` valid for every mean pair with |m|∞ ≤ `m_bound`.
    /// R starts at 2 and grows by 25% until the tail criterion holds.
    pub fn auto(cfg: &ModelConfig, m_bound: f64, n_nodes: usize) -> Result<Self> {
        let gm = GibbsModel::new(cfg)?;
        if n_nodes < 3 {
            return invalid("quadrature needs at least 3 nodes");
        }
        let n_nodes = n_nodes | 1;
        let mut radius = 2.0_f64.max(1.5 * m_bound);
        for _ in 0..200 {
            let rule = Self {
                radius,
                n_nodes,
                tail_bound: 0.0,
            };
            let nodes = rule.nodes();
            let mut worst = f64::NEG_INFINITY;
            for s in 0..2 {
                let bmax = (gm.coupling[s][0].abs() + gm.coupling[s][1].abs()) * m_bound;
                for beta in [-bmax, bmax] {
                    worst = worst.max(tail_drop(&gm, s, beta, &nodes));
                }
            }
            if worst <= -TAIL_DROP {
                return Ok(Self {
                    tail_bound: worst.exp(),
                    ..rule
                });
            }
            radius *= 1.25;
        }
        Err(Error::QuadratureDomain(
            "no finite radius satisfies the tail criterion".into(),
        ))
    }

    pub fn with_nodes(&self, n_nodes: usize) -> Self {
        Self {
            n_nodes: n_nodes.max(3) | 1,
            ..self.clone()
        }
    }

    pub fn h(&self) -> f64 {
        self.radius / ((self.n_nodes - 1) / 2) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let c = ((self.n_nodes - 1) / 2) as f64;
        let h = self.h();
        (0..self.n_nodes).map(|i| (i as f64 - c) * h).collect()
    }
}

/// Log-weight at the end nodes relative to the peak (≤ 0).
fn tail_drop(gm: &GibbsModel, s: usize, beta: f64, nodes: &[f64]) -> f64 {
    let lw: Vec<f64> = nodes.iter().map(|&x| gm.log_weight(s, beta, x)).collect();
    let peak = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lw[0].max(lw[lw.len() - 1]) - peak
}

/// Trapezoid weights on uniform nodes, normalized by log-sum-exp.
/// Returns (weights, peak log-weight).
fn gibbs_weights(gm: &GibbsModel, s: usize, beta: f64, nodes: &[f64]) -> (Vec<f64>, f64) {
    let lw: Vec<f64> = nodes.iter().map(|&x| gm.log_weight(s, beta, x)).collect();
    let peak = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = nodes.len();
    let w = lw
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let e = (l - peak).exp();
            if i == 0 || i + 1 == n {
                0.5 * e
            } else {
                e
            }
        })
        .collect();
    (w, peak)
}

/// Σ f_i summed from both ends inward, so mirror-symmetric inputs cancel
/// exactly.
fn paired_sum(f: impl Fn(usize) -> f64, n: usize) -> f64 {
    let mut acc = 0.0;
    let (mut i, mut j) = (0, n - 1);
    while i < j {
        acc += f(i) + f(j);
        i += 1;
        j -= 1;
    }
    if i == j {
        acc += f(i);
    }
    acc
}

fn gibbs_mean(gm: &GibbsModel, s: usize, beta: f64, nodes: &[f64]) -> Result<f64> {
    let (w, _) = gibbs_weights(gm, s, beta, nodes);
    let drop = tail_drop(gm, s, beta, nodes);
    if drop > -TAIL_DROP {
        return Err(Error::QuadratureDomain(format!(
            "species {} weight at the domain edge is exp({drop:.3}) of its peak",
            if s == 0 { "x" } else { "y" }
        )));
    }
    let n = nodes.len();
    let z = paired_sum(|i| w[i], n);
    Ok(paired_sum(|i| nodes[i] * w[i], n) / z)
}

/// Self-consistency map Φ(m) for quadratic interactions.
pub fn phi_map(m: &MeanPair, cfg: &ModelConfig, rule: &QuadratureRule) -> Result<MeanPair> {
    let gm = GibbsModel::new(cfg)?;
    phi_with(&gm, m, &rule.nodes())
}

fn phi_with(gm: &GibbsModel, m: &MeanPair, nodes: &[f64]) -> Result<MeanPair> {
    if !m.is_finite() {
        return invalid("mean pair must be finite");
    }
    Ok(MeanPair::new(
        gibbs_mean(gm, 0, gm.beta(0, m), nodes)?,
        gibbs_mean(gm, 1, gm.beta(1, m), nodes)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

impl Stability {
    pub fn label(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub m: MeanPair,
    pub residual: f64,
    /// Spectral radius of the damped iteration map at the root.
    pub spectral_radius: f64,
    pub classification: Stability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartDiagnostic {
    pub start: MeanPair,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    /// Distinct roots sorted by (m₁, m₂).
    pub roots: Vec<Root>,
    pub diagnostics: Vec<StartDiagnostic>,
}

/// Uniform k×k grid of starts over [−r, r]².
pub fn start_grid(k: usize, r: f64) -> Vec<MeanPair> {
    if k == 1 {
        return vec![MeanPair::default()];
    }
    let pts: Vec<f64> = (0..k)
        .map(|i| -r + 2.0 * r * i as f64 / (k - 1) as f64)
        .collect();
    pts.iter()
        .flat_map(|&a| pts.iter().map(move |&b| MeanPair::new(a, b)))
        .collect()
}

fn residual(gm: &GibbsModel, m: &MeanPair, nodes: &[f64]) -> Result<f64> {
    Ok(phi_with(gm, m, nodes)?.dist(m))
}

/// Central-difference Jacobian of Φ.
fn phi_jacobian(gm: &GibbsModel, m: &MeanPair, nodes: &[f64]) -> Result<[[f64; 2]; 2]> {
    let h = 1e-5 * (1.0 + m.norm_inf());
    let p1 = phi_with(gm, &MeanPair::new(m.m1 + h, m.m2), nodes)?;
    let q1 = phi_with(gm, &MeanPair::new(m.m1 - h, m.m2), nodes)?;
    let p2 = phi_with(gm, &MeanPair::new(m.m1, m.m2 + h), nodes)?;
    let q2 = phi_with(gm, &MeanPair::new(m.m1, m.m2 - h), nodes)?;
    Ok([
        [(p1.m1 - q1.m1) / (2.0 * h), (p2.m1 - q2.m1) / (2.0 * h)],
        [(p1.m2 - q1.m2) / (2.0 * h), (p2.m2 - q2.m2) / (2.0 * h)],
    ])
}

fn spectral_radius(j: [[f64; 2]; 2]) -> f64 {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (0.5 * tr + s).abs().max((0.5 * tr - s).abs())
    } else {
        det.sqrt()
    }
}

/// Newton on G(m) = Φ(m) − m. Returns the best point seen and its residual.
fn newton(gm: &GibbsModel, m0: MeanPair, tol: f64, nodes: &[f64]) -> Result<(MeanPair, f64)> {
    let mut m = m0;
    let mut res = residual(gm, &m, nodes)?;
    for _ in 0..50 {
        if res < 1e-3 * tol {
            break;
        }
        let j = phi_jacobian(gm, &m, nodes)?;
        let (a, b, c, d) = (j[0][0] - 1.0, j[0][1], j[1][0], j[1][1] - 1.0);
        let det = a * d - b * c;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let p = phi_with(gm, &m, nodes)?;
        let (g1, g2) = (p.m1 - m.m1, p.m2 - m.m2);
        let next = MeanPair::new(m.m1 - (d * g1 - b * g2) / det, m.m2 - (a * g2 - c * g1) / det);
        let next_res = match residual(gm, &next, nodes) {
            Ok(r) if next.is_finite() => r,
            _ => break,
        };
        if next_res >= res {
            break;
        }
        m = next;
        res = next_res;
    }
    Ok((m, res))
}

fn solve_from(
    gm: &GibbsModel,
    start: MeanPair,
    opts: &FixedPointOptions,
    nodes: &[f64],
) -> Result<(Option<MeanPair>, StartDiagnostic)> {
    let theta = opts.damping;
    let mut m = start;
    let mut res = f64::INFINITY;
    let mut iterations = 0;
    for k in 0..opts.max_iter {
        let p = phi_with(gm, &m, nodes)?;
        res = p.dist(&m);
        iterations = k;
        if res < opts.tol {
            break;
        }
        m = MeanPair::new(
            (1.0 - theta) * m.m1 + theta * p.m1,
            (1.0 - theta) * m.m2 + theta * p.m2,
        );
    }
    let (polished, pres) = newton(gm, m, opts.tol, nodes)?;
    let (m, res) = if pres <= res { (polished, pres) } else { (m, res) };
    let converged = res < opts.tol;
    Ok((
        converged.then_some(m),
        StartDiagnostic {
            start,
            converged,
            iterations,
            final_residual: res,
        },
    ))
}

/// Multi-start damped iteration with Newton polishing. Roots closer than
/// 10·tol are merged.
pub fn fixed_points(
    cfg: &ModelConfig,
    rule: &QuadratureRule,
    starts: &[MeanPair],
    opts: &FixedPointOptions,
) -> Result<FixedPointReport> {
    if starts.is_empty() {
        return invalid("fixed_points needs at least one start");
    }
    if !(opts.tol > 0.0) {
        return invalid("tol must be positive");
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return invalid("damping must lie in (0, 1]");
    }
    let gm = GibbsModel::new(cfg)?;
    let nodes = rule.nodes();
    let results: Vec<_> = starts
        .par_iter()
        .map(|&s| solve_from(&gm, s, opts, &nodes))
        .collect::<Result<_>>()?;
    let mut found: Vec<MeanPair> = Vec::new();
    let mut diagnostics = Vec::with_capacity(results.len());
    for (root, diag) in results {
        if let Some(r) = root {
            if !found.iter().any(|f| f.dist(&r) < 10.0 * opts.tol) {
                found.push(r);
            }
        }
        diagnostics.push(diag);
    }
    found.sort_by(|a, b| a.m1.total_cmp(&b.m1).then(a.m2.total_cmp(&b.m2)));
    let theta = opts.damping;
    let roots = found
        .into_iter()
        .map(|m| {
            let j = phi_jacobian(&gm, &m, &nodes)?;
            let it = [
                [(1.0 - theta) + theta * j[0][0], theta * j[0][1]],
                [theta * j[1][0], (1.0 - theta) + theta * j[1][1]],
            ];
            let rho = spectral_radius(it);
            Ok(Root {
                m,
                residual: residual(&gm, &m, &nodes)?,
                spectral_radius: rho,
                classification: if rho < 1.0 {
                    Stability::Stable
                } else {
                    Stability::Unstable
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(FixedPointReport { roots, diagnostics })
}

/// Densities of both species on a grid, with their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPair {
    pub grid: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// Means of the returned densities.
    pub means: MeanPair,
    /// |means − m|∞ for the input pair m.
    pub residual: f64,
}

impl StationaryPair {
    pub fn density(&self, species: Species) -> &[f64] {
        match species {
            Species::X => &self.mu,
            Species::Y => &self.nu,
        }
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["x", "mu", "nu"]);
        for ((x, mu), nu) in self.grid.iter().zip(&self.mu).zip(&self.nu) {
            t.row(&[(*x).into(), (*mu).into(), (*nu).into()]);
        }
        t
    }
}

/// Gibbs densities for the mean pair `m`, normalized by the trapezoid rule
/// on `grid` (uniform, symmetric spacing not required).
pub fn stationary_density(m: &MeanPair, cfg: &ModelConfig, grid: &[f64]) -> Result<StationaryPair> {
    let gm = GibbsModel::new(cfg)?;
    if grid.len() < 3 {
        return invalid("density grid needs at least 3 points");
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if !(h > 0.0)
        || grid
            .windows(2)
            .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h)
    {
        return invalid("density grid must be uniform and increasing");
    }
    let mut dens = [Vec::new(), Vec::new()];
    let mut means = [0.0; 2];
    for s in 0..2 {
        let beta = gm.beta(s, m);
        let drop = tail_drop(&gm, s, beta, grid);
        if drop > -TAIL_DROP {
            return Err(Error::QuadratureDomain(format!(
                "grid [{}, {}] is narrower than the support of species {}",
                grid[0],
                grid[grid.len() - 1],
                if s == 0 { "x" } else { "y" }
            )));
        }
        let (w, _) = gibbs_weights(&gm, s, beta, grid);
        let n = grid.len();
        let z = paired_sum(|i| w[i], n) * h;
        let lw: Vec<f64> = grid.iter().map(|&x| gm.log_weight(s, beta, x)).collect();
        let peak = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let d: Vec<f64> = lw.iter().map(|&l| (l - peak).exp() / z).collect();
        means[s] = paired_sum(|i| grid[i] * w[i], n) * h / z;
        dens[s] = d;
    }
    let [mu, nu] = dens;
    let means = MeanPair::new(means[0], means[1]);
    Ok(StationaryPair {
        grid: grid.to_vec(),
        mu,
        nu,
        residual: means.dist(m),
        means,
    })
}

/// Residual tolerance accepted by [`symmetric_invariant`].
pub const SYMMETRIC_RESIDUAL_TOL: f64 = 1e-10;

/// The invariant pair with zero means. Requires even V₁, V₂.
pub fn symmetric_invariant(cfg: &ModelConfig, grid: &[f64]) -> Result<StationaryPair> {
    for (name, v) in [("V1", &cfg.v1), ("V2", &cfg.v2)] {
        if !v.is_even() {
            return Err(Error::SymmetryPrecondition(format!("{name} = {v} is not even")));
        }
    }
    let sp = stationary_density(&MeanPair::default(), cfg, grid)?;
    if sp.residual >= SYMMETRIC_RESIDUAL_TOL {
        return Err(Error::Precondition(format!(
            "symmetric pair has mean residual {}; is the grid symmetric?",
            sp.residual
        )));
    }
    Ok(sp)
}

/// First-order small-σ coefficients about a common minimizer m*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceExpansion {
    pub m_star: f64,
    pub k1: f64,
    pub k2: f64,
    pub rho_threshold: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// ζ_s = coupling of species s to (ρ₁, ρ₂).
    pub laplace_zeta: [f64; 2],
}

impl LaplaceExpansion {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

/// Coefficients of Φ_s(m* + ρ₁σ², m* + ρ₂σ²) = m* − k_s σ² + o(σ²):
///
/// `k_s = V_s‴(m*)/(4U_s²) − ζ_s/U_s`, `U_s = V_s″(m*) + τ_s`.
pub fn laplace_expand(cfg: &ModelConfig, m_star: f64, rho1: f64, rho2: f64) -> Result<LaplaceExpansion> {
    let gm = GibbsModel::new(cfg)?;
    let mut k = [0.0; 2];
    let mut zeta = [0.0; 2];
    let mut thresh: f64 = 0.0;
    for s in 0..2 {
        let d1 = gm.v[s].derivative();
        let d2 = d1.derivative();
        let d3 = d2.derivative();
        let (v1, v2, v3) = (d1.eval(m_star), d2.eval(m_star), d3.eval(m_star));
        if v1.abs() > 1e-10 {
            return Err(Error::Precondition(format!(
                "m* = {m_star} is not a critical point of V{} (V' = {v1:e})",
                s + 1
            )));
        }
        if !(v2 > 0.0) {
            return Err(Error::Precondition(format!(
                "m* = {m_star} is a degenerate critical point of V{} (V'' = {v2})",
                s + 1
            )));
        }
        let u = v2 + gm.tau[s];
        zeta[s] = gm.coupling[s][0] * rho1 + gm.coupling[s][1] * rho2;
        k[s] = v3 / (4.0 * u * u) - zeta[s] / u;
        thresh = thresh.max(v3.abs() / (4.0 * v2 * u));
    }
    if rho1.abs() <= thresh && rho2.abs() <= thresh {
        let slack = 1e-12 * (1.0 + thresh);
        debug_assert!(k[0].abs() <= thresh + slack && k[1].abs() <= thresh + slack);
    }
    Ok(LaplaceExpansion {
        m_star,
        k1: k[0],
        k2: k[1],
        rho_threshold: thresh,
        tau1: gm.tau[0],
        tau2: gm.tau[1],
        laplace_zeta: zeta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub sigma: f64,
    pub roots: Vec<Root>,
}

impl ScanRow {
    pub fn root_count(&self) -> usize {
        self.roots.len()
    }
}

/// Root tracing along a decreasing list of σ, warm-started from the previous
/// roots plus `starts`.
pub fn sigma_scan(
    cfg: &ModelConfig,
    sigmas: &[f64],
    starts: &[MeanPair],
    n_nodes: usize,
    opts: &FixedPointOptions,
) -> Result<Vec<ScanRow>> {
    if sigmas.windows(2).any(|w| !(w[1] < w[0])) {
        return invalid("sigma list must be strictly decreasing");
    }
    let bound = starts.iter().map(MeanPair::norm_inf).fold(1.0, f64::max);
    let mut rows: Vec<ScanRow> = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let c = cfg.with_sigma(sigma)?;
        let rule = QuadratureRule::auto(&c, bound, n_nodes)?;
        let mut s: Vec<MeanPair> = rows
            .last()
            .map(|r| r.roots.iter().map(|x| x.m).collect())
            .unwrap_or_default();
        s.extend_from_slice(starts);
        let report = fixed_points(&c, &rule, &s, opts)?;
        rows.push(ScanRow {
            sigma,
            roots: report.roots,
        });
    }
    Ok(rows)
}

/// `sigma,m1,m2,residual,classification`
pub fn roots_csv(rows: &[ScanRow]) -> CsvTable {
    let mut t = CsvTable::new(&["sigma", "m1", "m2", "residual", "classification"]);
    for row in rows {
        for r in &row.roots {
            t.row(&[
                row.sigma.into(),
                r.m.m1.into(),
                r.m.m2.into(),
                r.residual.into(),
                r.classification.label().into(),
            ]);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InteractionSpec, QuadraticInteraction};
    use approx::assert_abs_diff_eq;

    fn harmonic(alpha: f64, a: f64, sigma: f64) -> ModelConfig {
        ModelConfig::new(
            Polynomial::new(vec![0.0, 0.0, 0.5]),
            Polynomial::new(vec![0.0, 0.0, 0.5]),
            QuadraticInteraction::uniform(alpha).unwrap().into(),
            a,
            sigma,
        )
        .unwrap()
    }

    fn dw(sigma: f64) -> ModelConfig {
        ModelConfig::double_well(0.1, 0.5, sigma).unwrap()
    }

    #[test]
    fn harmonic_origin_is_fixed() {
        let cfg = harmonic(1.0, 0.5, 0.7);
        let rule = QuadratureRule::auto(&cfg, 2.0, 2001).unwrap();
        let p = phi_map(&MeanPair::default(), &cfg, &rule).unwrap();
        assert_eq!(p, MeanPair::default());
    }

    #[test]
    fn harmonic_matches_affine_closed_form() {
        let cfg = harmonic(1.0, 0.3, 0.8);
        let rule = QuadratureRule::auto(&cfg, 2.0, 4001).unwrap();
        for m in start_grid(5, 2.0) {
            let p = phi_map(&m, &cfg, &rule).unwrap();
            // Gaussian with precision ∝ 1+τ and linear tilt β.
            let tau = 1.0;
            let b1 = 0.3 * m.m1 + 0.7 * m.m2;
            assert_abs_diff_eq!(p.m1, b1 / (1.0 + tau), epsilon = 1e-8);
            assert_abs_diff_eq!(p.m2, b1 / (1.0 + tau), epsilon = 1e-8);
        }
    }

    #[test]
    fn double_well_maps_well_into_itself() {
        let cfg = dw(0.3);
        let rule = QuadratureRule::auto(&cfg, 2.0, 4001).unwrap();
        let p = phi_map(&MeanPair::new(1.0, 1.0), &cfg, &rule).unwrap();
        assert!((0.5..=1.5).contains(&p.m1) && (0.5..=1.5).contains(&p.m2));
        // brute force: midpoint sums on 1e5 cells of [-6, 6]
        let n = 100_000;
        let h = 12.0 / n as f64;
        let (mut z, mut s) = (0.0, 0.0);
        for i in 0..n {
            let x = -6.0 + (i as f64 + 0.5) * h;
            let e = (-(2.0 / 0.09) * (x.powi(4) / 4.0 - x * x / 2.0 + 0.05 * x * x - 0.1 * x)).exp();
            z += e;
            s += x * e;
        }
        assert_abs_diff_eq!(p.m1, s / z, epsilon = 1e-9);
    }

    #[test]
    fn odd_equivariance() {
        let cfg = dw(0.4);
        let rule = QuadratureRule::auto(&cfg, 2.0, 4001).unwrap();
        for m in start_grid(5, 1.5) {
            let a = phi_map(&m, &cfg, &rule).unwrap();
            let b = phi_map(&m.neg(), &cfg, &rule).unwrap();
            assert_abs_diff_eq!(a.m1, -b.m1, epsilon = 1e-10);
            assert_abs_diff_eq!(a.m2, -b.m2, epsilon = 1e-10);
        }
    }

    #[test]
    fn narrow_rule_is_rejected() {
        let cfg = dw(1.0);
        let rule = QuadratureRule {
            radius: 1.5,
            n_nodes: 301,
            tail_bound: 0.0,
        };
        assert!(matches!(
            phi_map(&MeanPair::default(), &cfg, &rule),
            Err(Error::QuadratureDomain(_))
        ));
    }

    #[test]
    fn large_sigma_has_one_root() {
        let cfg = dw(3.0);
        let rule = QuadratureRule::auto(&cfg, 2.0, 4001).unwrap();
        let rep = fixed_points(&cfg, &rule, &start_grid(5, 2.0), &FixedPointOptions::default()).unwrap();
        assert_eq!(rep.roots.len(), 1);
        assert!(rep.roots[0].m.norm_inf() < 1e-8);
        assert_eq!(rep.roots[0].classification, Stability::Stable);
    }

    #[test]
    fn small_sigma_has_three_roots() {
        let cfg = dw(0.3);
        let rule = QuadratureRule::auto(&cfg, 2.0, 4001).unwrap();
        let opts = FixedPointOptions::default();
        let rep = fixed_points(&cfg, &rule, &start_grid(7, 2.0), &opts).unwrap();
        assert_eq!(rep.roots.len(), 3, "{:?}", rep.roots);
        let [lo, mid, hi] = [rep.roots[0], rep.roots[1], rep.roots[2]];
        assert!(mid.m.norm_inf() < 1e-6);
        assert!(lo.m.dist(&hi.m.neg()) < 1e-8);
        assert!(hi.m.m1 > 0.9 && hi.m.m1 < 1.0);
        for r in &rep.roots {
            assert!(r.residual < opts.tol);
        }
        assert_eq!(mid.classification, Stability::Unstable);
        assert_eq!(hi.classification, Stability::Stable);
    }

    #[test]
    fn zero_interaction_root_ignores_starts() {
        let cfg = ModelConfig::new(
            Polynomial::double_well(),
            Polynomial::new(vec![0.0, 0.0, 0.5]),
            InteractionSpec::zero(),
            0.5,
            0.5,
        )
        .unwrap();
        let rule = QuadratureRule::auto(&cfg, 2.0, 4001).unwrap();
        let rep = fixed_points(&cfg, &rule, &start_grid(3, 2.0), &FixedPointOptions::default()).unwrap();
        assert_eq!(rep.roots.len(), 1);
        assert!(rep.roots[0].m.norm_inf() < 1e-12);
    }

    #[test]
    fn quadrature_converged_at_roots() {
        let cfg = dw(0.3);
        let rule = QuadratureRule::auto(&cfg, 2.0, 4001).unwrap();
        let rep = fixed_points(&cfg, &rule, &start_grid(7, 2.0), &FixedPointOptions::default()).unwrap();
        let fine = rule.with_nodes(8001);
        for r in rep.roots {
            let a = phi_map(&r.m, &cfg, &rule).unwrap();
            let b = phi_map(&r.m, &cfg, &fine).unwrap();
            assert!(a.dist(&b) < 1e-9);
        }
    }

    #[test]
    fn empty_starts_rejected() {
        let cfg = dw(1.0);
        let rule = QuadratureRule::auto(&cfg, 2.0, 401).unwrap();
        assert!(fixed_points(&cfg, &rule, &[], &FixedPointOptions::default()).is_err());
    }

    fn sym_grid(r: f64, n: usize) -> Vec<f64> {
        QuadratureRule {
            radius: r,
            n_nodes: n,
            tail_bound: 0.0,
        }
        .nodes()
    }

    #[test]
    fn gaussian_stationary_density() {
        let cfg = ModelConfig::new(
            Polynomial::new(vec![0.0, 0.0, 0.5]),
            Polynomial::new(vec![0.0, 0.0, 0.5]),
            InteractionSpec::zero(),
            0.5,
            0.6,
        )
        .unwrap();
        let grid = sym_grid(6.0, 2001);
        let sp = stationary_density(&MeanPair::default(), &cfg, &grid).unwrap();
        let var = 0.36 / 2.0;
        let h = grid[1] - grid[0];
        for (x, mu) in grid.iter().zip(&sp.mu) {
            let exact = (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            assert_abs_diff_eq!(*mu, exact, epsilon = 1e-12);
        }
        let second: f64 = grid.iter().zip(&sp.mu).map(|(x, m)| x * x * m * h).sum();
        assert_abs_diff_eq!(second, var, epsilon = 1e-10);
    }

    #[test]
    fn symmetric_invariant_is_even() {
        let cfg = dw(0.3);
        let grid = sym_grid(2.5, 1001);
        let sp = symmetric_invariant(&cfg, &grid).unwrap();
        assert!(sp.means.norm_inf() < 1e-10);
        let n = grid.len();
        for i in 0..n {
            assert!((sp.mu[i] - sp.mu[n - 1 - i]).abs() < 1e-12);
            assert!((sp.nu[i] - sp.nu[n - 1 - i]).abs() < 1e-12);
        }
        let h = grid[1] - grid[0];
        let mass: f64 = sp.mu.iter().enumerate().map(|(i, m)| if i == 0 || i == n - 1 { 0.5 * m } else { *m }).sum::<f64>() * h;
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn asymmetric_potential_rejected() {
        let mut cfg = dw(0.3);
        cfg.v1 = Polynomial::new(vec![0.0, 0.1, -0.5, 0.0, 0.25]);
        assert!(matches!(
            symmetric_invariant(&cfg, &sym_grid(2.5, 1001)),
            Err(Error::SymmetryPrecondition(_))
        ));
    }

    #[test]
    fn symmetric_harmonic_is_augmented_gaussian() {
        let cfg = harmonic(1.0, 0.5, 0.6);
        let grid = sym_grid(5.0, 2001);
        let sp = symmetric_invariant(&cfg, &grid).unwrap();
        let var = 0.36 / (2.0 * 2.0);
        for (x, mu) in grid.iter().zip(&sp.mu) {
            let exact = (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            assert_abs_diff_eq!(*mu, exact, epsilon = 1e-11);
        }
    }

    #[test]
    fn nonzero_root_density_leans_to_its_side() {
        let cfg = dw(0.3);
        let rule = QuadratureRule::auto(&cfg, 2.0, 4001).unwrap();
        let rep = fixed_points(&cfg, &rule, &start_grid(7, 2.0), &FixedPointOptions::default()).unwrap();
        let hi = rep.roots.last().unwrap();
        let grid = sym_grid(2.5, 1001);
        let sp = stationary_density(&hi.m, &cfg, &grid).unwrap();
        let h = grid[1] - grid[0];
        let right: f64 = grid.iter().zip(&sp.mu).filter(|(x, _)| **x > 0.0).map(|(_, m)| m * h).sum();
        assert!(right > 0.5);
        assert!(sp.residual < 1e-9);
    }

    #[test]
    fn narrow_density_grid_rejected() {
        let cfg = dw(1.0);
        assert!(matches!(
            stationary_density(&MeanPair::default(), &cfg, &sym_grid(1.0, 101)),
            Err(Error::QuadratureDomain(_))
        ));
    }

    #[test]
    fn laplace_coefficients() {
        let cfg = dw(0.1);
        let e = laplace_expand(&cfg, 1.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(e.k1, 6.0 / (4.0 * 2.1 * 2.1), epsilon = 1e-14);
        assert_abs_diff_eq!(e.k1, 0.340_136_054_421_768_7, epsilon = 1e-12);
        assert_abs_diff_eq!(e.rho_threshold, 6.0 / (4.0 * 2.0 * 2.1), epsilon = 1e-14);
        assert_abs_diff_eq!(e.tau1, 0.1, epsilon = 1e-15);
        let sym = laplace_expand(&cfg, 0.0, 0.0, 0.0);
        assert!(sym.is_err(), "V'' < 0 at the origin");
        let json = e.to_json();
        for key in ["m_star", "k1", "k2", "rho_threshold", "tau1", "tau2"] {
            assert!(json.contains(&format!("\"{key}\"")));
        }
    }

    #[test]
    fn laplace_symmetric_potential_gives_zero() {
        let cfg = harmonic(0.1, 0.5, 0.3);
        let e = laplace_expand(&cfg, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(e.k1, 0.0);
        assert!(laplace_expand(&cfg, 0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn laplace_matches_small_sigma_regression() {
        let base = dw(0.1);
        let e = laplace_expand(&base, 1.0, 0.2, -0.1).unwrap();
        let mut prev = f64::INFINITY;
        for sigma in [0.3, 0.2, 0.1, 0.05] {
            let cfg = base.with_sigma(sigma).unwrap();
            let rule = QuadratureRule::auto(&cfg, 1.5, 8001).unwrap();
            let s2 = sigma * sigma;
            let m = MeanPair::new(1.0 + 0.2 * s2, 1.0 - 0.1 * s2);
            let p = phi_map(&m, &cfg, &rule).unwrap();
            let err = ((p.m1 - (1.0 - e.k1 * s2)) / s2).abs();
            assert!(err < prev, "sigma {sigma}: {err} vs {prev}");
            prev = err;
        }
        assert!(prev < 0.05);
    }

    #[test]
    fn scan_orders_and_counts() {
        let cfg = dw(1.0);
        let opts = FixedPointOptions::default();
        assert!(sigma_scan(&cfg, &[], &start_grid(3, 2.0), 2001, &opts).unwrap().is_empty());
        assert!(sigma_scan(&cfg, &[0.3, 0.5], &start_grid(3, 2.0), 2001, &opts).is_err());
        let rows = sigma_scan(&cfg, &[3.0, 0.3], &start_grid(5, 2.0), 4001, &opts).unwrap();
        assert_eq!(rows[0].root_count(), 1);
        assert!(rows[1].root_count() >= 3);
        let csv = roots_csv(&rows);
        assert!(csv.as_str().starts_with("sigma,m1,m2,residual,classification\n"));
        let harm = harmonic(0.5, 0.5, 1.0);
        for row in sigma_scan(&harm, &[2.0, 1.0, 0.3], &start_grid(3, 2.0), 2001, &opts).unwrap() {
            assert_eq!(row.root_count(), 1);
        }
    }
}
