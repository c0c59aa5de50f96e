//! Finite-volume solver for the coupled nonlocal Fokker–Planck system
//!
//! ```text
//! ∂_t μ = ∂_x(b_μ μ) + (σ²/2) ∂_xx μ,   b_μ = V₁′ + a ∇F₁₁∗μ + (1−a) ∇F₁₂∗ν,
//! ∂_t ν = ∂_x(b_ν ν) + (σ²/2) ∂_xx ν,   b_ν = V₂′ + a ∇F₂₁∗μ + (1−a) ∇F₂₂∗ν,
//! ```
//!
//! on a bounded interval with no-flux boundaries. Convolutions are exact
//! polynomials in x built from the grid moments of μ and ν.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::invariant::StationaryPair;
use crate::model::{ModelConfig, Species};
use crate::output::CsvTable;

/// Uniform cell-centred grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if n_cells < 16 {
            return invalid(format!("grid needs at least 16 cells, got {n_cells}"));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return invalid(format!("grid bounds [{x_min}, {x_max}] are not an interval"));
        }
        Ok(Self {
            x_min,
            x_max,
            n_cells,
        })
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    /// Cell centres. On a domain symmetric about 0 they are exactly
    /// mirror-symmetric.
    pub fn centers(&self) -> Vec<f64> {
        let h = self.h();
        let n = self.n_cells;
        if self.x_min == -self.x_max {
            let c = n as f64 / 2.0;
            (0..n).map(|i| (i as f64 + 0.5 - c) * h).collect()
        } else {
            (0..n).map(|i| self.x_min + (i as f64 + 0.5) * h).collect()
        }
    }

    /// Interior faces x_{i+1/2}, i = 0..n−2.
    pub fn faces(&self) -> Vec<f64> {
        let h = self.h();
        let n = self.n_cells;
        if self.x_min == -self.x_max {
            let c = n as f64 / 2.0;
            (1..n).map(|i| (i as f64 - c) * h).collect()
        } else {
            (1..n).map(|i| self.x_min + i as f64 * h).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPair {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub t: f64,
}

impl DensityPair {
    /// Rescales non-negative cell values to unit mass.
    pub fn normalized(mut mu: Vec<f64>, mut nu: Vec<f64>, grid: &Grid1D) -> Result<Self> {
        for (name, d) in [("mu", &mut mu), ("nu", &mut nu)] {
            if d.len() != grid.n_cells {
                return invalid(format!(
                    "{name} has {} cells, grid has {}",
                    d.len(),
                    grid.n_cells
                ));
            }
            if d.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return invalid(format!("{name} must be finite and non-negative"));
            }
            let mass = d.iter().sum::<f64>() * grid.h();
            if !(mass > 0.0) {
                return invalid(format!("{name} has zero mass"));
            }
            d.iter_mut().for_each(|v| *v /= mass);
        }
        Ok(Self { mu, nu, t: 0.0 })
    }

    /// Samples `f_mu`, `f_nu` at cell centres and normalizes.
    pub fn from_fn(grid: &Grid1D, f_mu: impl Fn(f64) -> f64, f_nu: impl Fn(f64) -> f64) -> Result<Self> {
        let c = grid.centers();
        Self::normalized(
            c.iter().map(|&x| f_mu(x)).collect(),
            c.iter().map(|&x| f_nu(x)).collect(),
            grid,
        )
    }

    /// Gaussian initial data.
    pub fn gaussian(grid: &Grid1D, mean: [f64; 2], var: [f64; 2]) -> Result<Self> {
        if var.iter().any(|v| !(*v > 0.0)) {
            return invalid("Gaussian variances must be positive");
        }
        Self::from_fn(
            grid,
            |x| (-(x - mean[0]).powi(2) / (2.0 * var[0])).exp(),
            |x| (-(x - mean[1]).powi(2) / (2.0 * var[1])).exp(),
        )
    }

    /// Takes densities evaluated at the grid's cell centres.
    pub fn from_stationary(sp: &StationaryPair, grid: &Grid1D) -> Result<Self> {
        check_on_grid(sp, grid)?;
        Self::normalized(sp.mu.clone(), sp.nu.clone(), grid)
    }

    pub fn density(&self, species: Species) -> &[f64] {
        match species {
            Species::X => &self.mu,
            Species::Y => &self.nu,
        }
    }

    pub fn mass(&self, grid: &Grid1D) -> [f64; 2] {
        let h = grid.h();
        [self.mu.iter().sum::<f64>() * h, self.nu.iter().sum::<f64>() * h]
    }

    pub fn means(&self, grid: &Grid1D) -> [f64; 2] {
        let c = grid.centers();
        let h = grid.h();
        let m = |d: &[f64]| c.iter().zip(d).map(|(x, v)| x * v).sum::<f64>() * h;
        [m(&self.mu), m(&self.nu)]
    }

    /// h·Σ|μ − μ'| + h·Σ|ν − ν'|, reported per species.
    pub fn l1_distance(&self, other: &Self, grid: &Grid1D) -> [f64; 2] {
        let h = grid.h();
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() * h;
        [d(&self.mu, &other.mu), d(&self.nu, &other.nu)]
    }
}

fn check_on_grid(sp: &StationaryPair, grid: &Grid1D) -> Result<()> {
    let c = grid.centers();
    if sp.grid.len() != c.len()
        || sp
            .grid
            .iter()
            .zip(&c)
            .any(|(a, b)| (a - b).abs() > 1e-9 * grid.h())
    {
        return invalid("stationary pair is not sampled at the grid's cell centres");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxScheme {
    /// Exponentially fitted (Chang–Cooper / Scharfetter–Gummel) weights.
    #[default]
    ChangCooper,
    /// Central advection, central diffusion.
    Central,
}

/// Force b at the interior faces, for μ and ν.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceDrift {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl FaceDrift {
    pub fn max_abs(&self) -> f64 {
        self.mu
            .iter()
            .chain(&self.nu)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn grid_moments(d: &[f64], centers: &[f64], h: f64, order: usize) -> Vec<f64> {
    let mut m = vec![0.0; order + 1];
    for (x, v) in centers.iter().zip(d) {
        let mut p = v * h;
        for mk in m.iter_mut() {
            *mk += p;
            p *= x;
        }
    }
    m
}

/// Force `V′ + a∇F∗μ + (1−a)∇F∗ν` at each interior face.
pub fn assemble_drift_field(dp: &DensityPair, cfg: &ModelConfig, grid: &Grid1D) -> Result<FaceDrift> {
    let centers = grid.centers();
    let order = cfg.moment_order();
    let mm = grid_moments(&dp.mu, &centers, grid.h(), order);
    let mn = grid_moments(&dp.nu, &centers, grid.h(), order);
    let fx = cfg.force_polynomial(Species::X, &mm, &mn)?;
    let fy = cfg.force_polynomial(Species::Y, &mm, &mn)?;
    let faces = grid.faces();
    Ok(FaceDrift {
        mu: faces.iter().map(|&x| fx.eval(x)).collect(),
        nu: faces.iter().map(|&x| fy.eval(x)).collect(),
    })
}

/// B(z) = z / (eᶻ − 1).
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Coefficients (left, right) with J_{i+1/2} = left·μ_i − right·μ_{i+1}.
fn face_coeffs(b: f64, d: f64, h: f64, scheme: FluxScheme) -> (f64, f64) {
    match scheme {
        FluxScheme::ChangCooper => {
            let z = -b * h / d;
            (d / h * bernoulli(-z), d / h * bernoulli(z))
        }
        FluxScheme::Central => (d / h - 0.5 * b, d / h + 0.5 * b),
    }
}

/// Largest admissible step: 0.4·min(h²/σ², h/max|b|).
pub fn cfl_limit(drift: &FaceDrift, sigma: f64, grid: &Grid1D) -> f64 {
    let h = grid.h();
    let diff = h * h / (sigma * sigma);
    let bmax = drift.max_abs();
    let adv = if bmax > 0.0 { h / bmax } else { f64::INFINITY };
    0.4 * diff.min(adv)
}

fn step_density(
    d: &[f64],
    b: &[f64],
    diff: f64,
    h: f64,
    dt: f64,
    scheme: FluxScheme,
) -> Result<Vec<f64>> {
    let n = d.len();
    let coeffs: Vec<(f64, f64)> = b.iter().map(|&bf| face_coeffs(bf, diff, h, scheme)).collect();
    let lam = dt / h;
    let mut out = vec![0.0; n];
    for i in 0..n {
        // outflow through right face (left coeff) and left face (right coeff)
        let out_r = if i + 1 < n { coeffs[i].0 } else { 0.0 };
        let out_l = if i > 0 { coeffs[i - 1].1 } else { 0.0 };
        let centre = 1.0 - lam * (out_r + out_l);
        if centre < 0.0 {
            return Err(Error::Positivity { cell: i });
        }
        let mut v = centre * d[i];
        if i + 1 < n {
            v += lam * coeffs[i].1 * d[i + 1];
        }
        if i > 0 {
            v += lam * coeffs[i - 1].0 * d[i - 1];
        }
        if v < 0.0 {
            return Err(Error::Positivity { cell: i });
        }
        out[i] = v;
    }
    Ok(out)
}

/// One explicit step. Fails if `dt` exceeds the CFL bound.
pub fn fp_step(dp: &DensityPair, cfg: &ModelConfig, grid: &Grid1D, dt: f64) -> Result<DensityPair> {
    fp_step_with(dp, cfg, grid, dt, FluxScheme::ChangCooper)
}

pub fn fp_step_with(
    dp: &DensityPair,
    cfg: &ModelConfig,
    grid: &Grid1D,
    dt: f64,
    scheme: FluxScheme,
) -> Result<DensityPair> {
    if dp.mu.len() != grid.n_cells || dp.nu.len() != grid.n_cells {
        return invalid("density length does not match the grid");
    }
    if !(dt > 0.0) {
        return invalid("dt must be positive");
    }
    let drift = assemble_drift_field(dp, cfg, grid)?;
    let limit = cfl_limit(&drift, cfg.sigma, grid);
    if dt > limit {
        return Err(Error::Cfl { dt, limit });
    }
    let diff = 0.5 * cfg.sigma * cfg.sigma;
    let h = grid.h();
    Ok(DensityPair {
        mu: step_density(&dp.mu, &drift.mu, diff, h, dt, scheme)?,
        nu: step_density(&dp.nu, &drift.nu, diff, h, dt, scheme)?,
        t: dp.t + dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpLogEntry {
    pub t: f64,
    pub mass: [f64; 2],
    pub mean: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpRun {
    pub state: DensityPair,
    pub log: Vec<FpLogEntry>,
    pub snapshots: Vec<DensityPair>,
}

impl FpRun {
    /// `t,x,mu,nu` for every snapshot.
    pub fn snapshots_csv(&self, grid: &Grid1D) -> CsvTable {
        let mut t = CsvTable::new(&["t", "x", "mu", "nu"]);
        let c = grid.centers();
        for s in &self.snapshots {
            for ((x, mu), nu) in c.iter().zip(&s.mu).zip(&s.nu) {
                t.row(&[s.t.into(), (*x).into(), (*mu).into(), (*nu).into()]);
            }
        }
        t
    }
}

/// Edge cells must be below this fraction of the peak.
pub const EDGE_TOLERANCE: f64 = 1e-12;

fn check_domain(dp: &DensityPair) -> Result<()> {
    for (name, d) in [("mu", &dp.mu), ("nu", &dp.nu)] {
        let peak = d.iter().copied().fold(0.0, f64::max);
        let edge = d[0].max(d[d.len() - 1]);
        if edge > EDGE_TOLERANCE * peak {
            return Err(Error::QuadratureDomain(format!(
                "{name} at the boundary is {:e} of its peak at t = {}",
                edge / peak,
                dp.t
            )));
        }
    }
    Ok(())
}

/// Evolves to `horizon` with fixed `dt`, logging mass and means every
/// `record_stride` steps (and at the end). Snapshots are kept at the same
/// stride when `keep_snapshots` is set.
pub fn fp_evolve(
    dp0: &DensityPair,
    cfg: &ModelConfig,
    grid: &Grid1D,
    horizon: f64,
    dt: f64,
    record_stride: usize,
    keep_snapshots: bool,
) -> Result<FpRun> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return invalid("dt and horizon must be positive");
    }
    let n_steps = (horizon / dt).round() as usize;
    if n_steps == 0 || ((n_steps as f64) * dt - horizon).abs() > 1e-9 * horizon {
        return invalid(format!("horizon {horizon} is not a multiple of dt = {dt}"));
    }
    let stride = record_stride.max(1);
    check_domain(dp0)?;
    let mut state = dp0.clone();
    let record = |s: &DensityPair, log: &mut Vec<FpLogEntry>, snaps: &mut Vec<DensityPair>| {
        log.push(FpLogEntry {
            t: s.t,
            mass: s.mass(grid),
            mean: s.means(grid),
        });
        if keep_snapshots {
            snaps.push(s.clone());
        }
    };
    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    record(&state, &mut log, &mut snapshots);
    for k in 1..=n_steps {
        state = fp_step(&state, cfg, grid, dt)?;
        if k % stride == 0 || k == n_steps {
            record(&state, &mut log, &mut snapshots);
        }
    }
    check_domain(&state)?;
    Ok(FpRun {
        state,
        log,
        snapshots,
    })
}

/// Discrete L¹ norm of the stationary operator, Σ_i |J_{i+1/2} − J_{i−1/2}|.
pub fn fp_residual(sp: &StationaryPair, cfg: &ModelConfig, grid: &Grid1D) -> Result<(f64, f64)> {
    fp_residual_with(sp, cfg, grid, FluxScheme::ChangCooper)
}

pub fn fp_residual_with(
    sp: &StationaryPair,
    cfg: &ModelConfig,
    grid: &Grid1D,
    scheme: FluxScheme,
) -> Result<(f64, f64)> {
    let dp = DensityPair::from_stationary(sp, grid)?;
    let drift = assemble_drift_field(&dp, cfg, grid)?;
    let diff = 0.5 * cfg.sigma * cfg.sigma;
    let h = grid.h();
    let res = |d: &[f64], b: &[f64]| {
        let n = d.len();
        let flux: Vec<f64> = (0..n - 1)
            .map(|i| {
                let (l, r) = face_coeffs(b[i], diff, h, scheme);
                l * d[i] - r * d[i + 1]
            })
            .collect();
        (0..n)
            .map(|i| {
                let jr = if i + 1 < n { flux[i] } else { 0.0 };
                let jl = if i > 0 { flux[i - 1] } else { 0.0 };
                (jr - jl).abs()
            })
            .sum::<f64>()
    };
    Ok((res(&dp.mu, &drift.mu), res(&dp.nu, &drift.nu)))
}

/// `grid_h,res_mu,res_nu`
pub fn residual_csv(rows: &[(f64, f64, f64)]) -> CsvTable {
    let mut t = CsvTable::new(&["grid_h", "res_mu", "res_nu"]);
    for &(h, a, b) in rows {
        t.row(&[h.into(), a.into(), b.into()]);
    }
    t
}
