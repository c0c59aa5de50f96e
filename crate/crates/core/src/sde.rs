//! Seeded Euler–Maruyama for the two-species particle system.
//!
//! Two drive modes are supported: the interacting system, in which every
//! particle feels the empirical measures of both species with weights
//! `1/(N+M)`, and the externally driven system, in which particles are
//! independent and feel a prescribed drift 4-tuple (see [`DriftPair`]).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ModelConfig, Polynomial, Species};
use crate::output::{Cell, CsvTable};
use crate::picard::DriftPair;
use crate::util::derive_stream;

const PAR_THRESHOLD: usize = 8192;

/// Empirical moments `m_k = (1/N) Σ x_iᵏ` for k = 0..K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentVector(pub Vec<f64>);

impl MomentVector {
    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.0[1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Moments of a point mass at `y`.
    pub fn point_mass(y: f64, order: usize) -> Self {
        Self((0..=order).map(|k| y.powi(k as i32)).collect())
    }
}

pub fn empirical_moments(positions: &[f64], order: usize) -> Result<MomentVector> {
    if positions.is_empty() {
        return invalid("empirical moments of an empty sample");
    }
    if order == 0 {
        return invalid("moment order must be at least 1");
    }
    let mut sums = vec![0.0; order + 1];
    for &x in positions {
        let mut p = 1.0;
        for s in sums.iter_mut() {
            *s += p;
            p *= x;
        }
    }
    let n = positions.len() as f64;
    for s in sums.iter_mut().skip(1) {
        *s /= n;
    }
    sums[0] = 1.0;
    Ok(MomentVector(sums))
}

/// Law of the initial positions of one species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialLaw {
    PointMass { x: f64 },
    Gaussian { mean: f64, var: f64 },
    Uniform { lo: f64, hi: f64 },
    Explicit { positions: Vec<f64> },
}

impl InitialLaw {
    fn center(&self) -> f64 {
        match self {
            InitialLaw::PointMass { x } => *x,
            InitialLaw::Gaussian { mean, .. } => *mean,
            InitialLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            InitialLaw::Explicit { .. } => 0.0,
        }
    }

    /// Draws `n` i.i.d. positions. With `antithetic`, odd-indexed draws are
    /// reflections of the preceding even-indexed ones about the law's center.
    pub fn sample(&self, n: usize, seed: u64, antithetic: bool) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw: Box<dyn FnMut() -> f64> = match self {
            InitialLaw::PointMass { x } => {
                let x = *x;
                Box::new(move || x)
            }
            InitialLaw::Gaussian { mean, var } => {
                if !(*var >= 0.0) {
                    return invalid(format!("Gaussian variance must be non-negative, got {var}"));
                }
                let normal = Normal::new(*mean, var.sqrt())
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Box::new(move || normal.sample(&mut rng))
            }
            InitialLaw::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return invalid(format!("uniform law needs lo < hi, got [{lo}, {hi}]"));
                }
                let u = Uniform::new(*lo, *hi).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Box::new(move || u.sample(&mut rng))
            }
            InitialLaw::Explicit { positions } => {
                if positions.len() != n {
                    return invalid(format!(
                        "explicit initial data has {} positions, expected {n}",
                        positions.len()
                    ));
                }
                return Ok(positions.clone());
            }
        };
        let c = self.center();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let v = draw();
            out.push(v);
            if antithetic && out.len() < n {
                out.push(2.0 * c - v);
            }
        }
        Ok(out)
    }
}

/// Brownian increments indexed by (species, particle, step).
///
/// Each (species, step) pair owns its own ChaCha stream; particle i takes the
/// i-th normal from it. Increments therefore do not depend on how many
/// particles are simulated or in which order steps are generated, and the
/// tape never has to be held in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseTape {
    seeds: [u64; 2],
    dt_bits: u64,
    antithetic: bool,
}

impl NoiseTape {
    pub fn new(seed: u64, dt: f64) -> Self {
        Self::from_species_seeds(
            derive_stream(seed, "noise", 0),
            derive_stream(seed, "noise", 1),
            dt,
        )
    }

    pub fn from_species_seeds(seed_x: u64, seed_y: u64, dt: f64) -> Self {
        Self {
            seeds: [seed_x, seed_y],
            dt_bits: dt.to_bits(),
            antithetic: false,
        }
    }

    /// Pairs particle 2k+1 with particle 2k by negating its increments.
    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    /// The tape with the X and Y streams exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            seeds: [self.seeds[1], self.seeds[0]],
            ..*self
        }
    }

    pub fn dt(&self) -> f64 {
        f64::from_bits(self.dt_bits)
    }

    /// Fills `out` with the increments of particles `0..out.len()` at `step`.
    pub fn fill(&self, species: Species, step: usize, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seeds[species.index()]);
        rng.set_stream(step as u64);
        let scale = self.dt().sqrt();
        if self.antithetic {
            let mut i = 0;
            while i < out.len() {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[i] = scale * z;
                if i + 1 < out.len() {
                    out[i + 1] = -scale * z;
                }
                i += 2;
            }
        } else {
            for v in out.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = scale * z;
            }
        }
    }

    pub fn increment(&self, species: Species, particle: usize, step: usize) -> f64 {
        let mut buf = vec![0.0; particle + 1];
        self.fill(species, step, &mut buf);
        buf[particle]
    }
}

/// Particle positions of both species at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    /// Number of steps taken; indexes the noise tape.
    pub step: usize,
    pub sigma: f64,
}

impl Ensemble {
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma: f64) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return invalid("ensembles need at least one particle per species");
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return invalid("initial positions must be finite");
        }
        Ok(Self {
            x,
            y,
            t: 0.0,
            step: 0,
            sigma,
        })
    }

    /// Samples `n` X-particles and `m` Y-particles from the given laws.
    pub fn sample(
        cfg: &ModelConfig,
        n: usize,
        m: usize,
        law_x: &InitialLaw,
        law_y: &InitialLaw,
        seed: u64,
        antithetic: bool,
    ) -> Result<Self> {
        let x = law_x.sample(n, derive_stream(seed, "init", 0), antithetic)?;
        let y = law_y.sample(m, derive_stream(seed, "init", 1), antithetic)?;
        Self::new(x, y, cfg.sigma)
    }

    pub fn positions(&self, species: Species) -> &[f64] {
        match species {
            Species::X => &self.x,
            Species::Y => &self.y,
        }
    }

    pub fn moments(&self, order: usize) -> Result<[MomentVector; 2]> {
        Ok([
            empirical_moments(&self.x, order)?,
            empirical_moments(&self.y, order)?,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub record_stride: usize,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if self.n_steps == 0 {
            return invalid("n_steps must be at least 1");
        }
        if self.record_stride == 0 {
            return invalid("record_stride must be at least 1");
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

/// How pairwise interaction sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairwiseMethod {
    /// Direct O((N+M)²) double sum.
    Direct,
    /// Binomial expansion into power sums, O((N+M)·q); exact for polynomial kernels.
    MomentExpansion,
    /// Moment expansion when q ≤ 3, direct otherwise.
    #[default]
    Auto,
}

impl PairwiseMethod {
    fn resolve(self, cfg: &ModelConfig) -> Self {
        match self {
            PairwiseMethod::Auto if cfg.q() <= 3 => PairwiseMethod::MomentExpansion,
            PairwiseMethod::Auto => PairwiseMethod::Direct,
            other => other,
        }
    }
}

fn advance(
    pos: &mut [f64],
    dw: &[f64],
    dt: f64,
    sigma: f64,
    force: impl Fn(usize, f64) -> f64 + Sync,
) {
    let update = |(i, (x, w)): (usize, (&mut f64, &f64))| {
        *x = *x - force(i, *x) * dt + sigma * w;
    };
    if pos.len() >= PAR_THRESHOLD {
        pos.par_iter_mut().zip(dw.par_iter()).enumerate().for_each(update);
    } else {
        pos.iter_mut().zip(dw.iter()).enumerate().for_each(update);
    }
}

fn check_finite(ens: &Ensemble) -> Result<()> {
    for species in [Species::X, Species::Y] {
        if let Some(index) = ens.positions(species).iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                step: ens.step,
                t: ens.t,
                species,
                index,
            });
        }
    }
    Ok(())
}

fn check_noise(ens: &Ensemble, dw_x: &[f64], dw_y: &[f64]) -> Result<()> {
    if dw_x.len() != ens.x.len() || dw_y.len() != ens.y.len() {
        return invalid(format!(
            "noise slice sizes ({}, {}) do not match ensemble sizes ({}, {})",
            dw_x.len(),
            dw_y.len(),
            ens.x.len(),
            ens.y.len()
        ));
    }
    Ok(())
}

/// Pairwise force on `species` by direct summation, already divided by N+M.
fn direct_force(cfg: &ModelConfig, species: Species, x: f64, xs: &[f64], ys: &[f64]) -> f64 {
    let (k_x, k_y) = cfg.interactions.kernels(species);
    let total = (xs.len() + ys.len()) as f64;
    let sx: f64 = if k_x.is_zero() {
        0.0
    } else {
        xs.iter().map(|&z| k_x.eval(x - z)).sum()
    };
    let sy: f64 = if k_y.is_zero() {
        0.0
    } else {
        ys.iter().map(|&z| k_y.eval(x - z)).sum()
    };
    (sx + sy) / total
}

/// Interacting-system force on `species` as a polynomial, obtained from the
/// empirical power sums of both species.
fn expanded_force(
    cfg: &ModelConfig,
    species: Species,
    mom_x: &[f64],
    mom_y: &[f64],
    n: usize,
    m: usize,
) -> Result<Polynomial> {
    let total = (n + m) as f64;
    let (k_x, k_y) = cfg.interactions.kernels(species);
    let from_x = k_x.convolve_moments(mom_x)?.scale(n as f64 / total);
    let from_y = k_y.convolve_moments(mom_y)?.scale(m as f64 / total);
    Ok(cfg.potential(species).derivative().add(&from_x.add(&from_y)))
}

/// One Euler–Maruyama step of the interacting particle system.
///
/// `X_i ← X_i − [V₁′(X_i) + (1/(N+M))Σ_j ∇F₁₁(X_i − X_j) + (1/(N+M))Σ_k ∇F₁₂(X_i − Y_k)] dt + σ ΔW_i`
/// and symmetrically for Y. The self term j = i is included.
pub fn em_step_interacting(
    ens: &mut Ensemble,
    cfg: &ModelConfig,
    dt: f64,
    dw_x: &[f64],
    dw_y: &[f64],
    method: PairwiseMethod,
) -> Result<()> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    check_noise(ens, dw_x, dw_y)?;
    let sigma = ens.sigma;
    match method.resolve(cfg) {
        PairwiseMethod::MomentExpansion => {
            let order = cfg.interactions.max_degree().max(1);
            let mx = empirical_moments(&ens.x, order)?;
            let my = empirical_moments(&ens.y, order)?;
            let (n, m) = (ens.x.len(), ens.y.len());
            let fx = expanded_force(cfg, Species::X, &mx.0, &my.0, n, m)?;
            let fy = expanded_force(cfg, Species::Y, &mx.0, &my.0, n, m)?;
            advance(&mut ens.x, dw_x, dt, sigma, |_, x| fx.eval(x));
            advance(&mut ens.y, dw_y, dt, sigma, |_, y| fy.eval(y));
        }
        _ => {
            let (xs, ys) = (ens.x.clone(), ens.y.clone());
            let v1p = cfg.v1.derivative();
            let v2p = cfg.v2.derivative();
            advance(&mut ens.x, dw_x, dt, sigma, |_, x| {
                v1p.eval(x) + direct_force(cfg, Species::X, x, &xs, &ys)
            });
            advance(&mut ens.y, dw_y, dt, sigma, |_, y| {
                v2p.eval(y) + direct_force(cfg, Species::Y, y, &xs, &ys)
            });
        }
    }
    ens.t += dt;
    ens.step += 1;
    check_finite(ens)
}

/// One Euler–Maruyama step under a prescribed drift: X-particles feel
/// `−V₁′ − b₁(t,·) − b₂(t,·)`, Y-particles `−V₂′ − b₃(t,·) − b₄(t,·)`.
/// Particles do not interact.
pub fn em_step_external(
    ens: &mut Ensemble,
    cfg: &ModelConfig,
    drift: &DriftPair,
    dt: f64,
    dw_x: &[f64],
    dw_y: &[f64],
) -> Result<()> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    check_noise(ens, dw_x, dw_y)?;
    let end = ens.t + dt;
    let horizon = drift.horizon();
    if ens.t < 0.0 || end > horizon + 1e-9 * dt.max(horizon) {
        return invalid(format!(
            "drift is defined on [0, {horizon}] but the step needs [{}, {end}]",
            ens.t
        ));
    }
    let [b1, b2, b3, b4] = drift.at(ens.t)?;
    let fx = cfg.v1.derivative().add(&b1.add(&b2));
    let fy = cfg.v2.derivative().add(&b3.add(&b4));
    let sigma = ens.sigma;
    advance(&mut ens.x, dw_x, dt, sigma, |_, x| fx.eval(x));
    advance(&mut ens.y, dw_y, dt, sigma, |_, y| fy.eval(y));
    ens.t = end;
    ens.step += 1;
    check_finite(ens)
}

#[derive(Debug, Clone, Copy)]
pub enum DriveMode<'a> {
    Interacting,
    External(&'a DriftPair),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Moments at every step and strided position snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub moments_x: Vec<MomentVector>,
    pub moments_y: Vec<MomentVector>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: Ensemble,
}

impl Trajectory {
    pub fn moments(&self, species: Species) -> &[MomentVector] {
        match species {
            Species::X => &self.moments_x,
            Species::Y => &self.moments_y,
        }
    }

    /// `t,species,index,position` for every snapshot.
    pub fn positions_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["t", "species", "index", "position"]);
        for snap in &self.snapshots {
            for (species, pos) in [(Species::X, &snap.x), (Species::Y, &snap.y)] {
                for (i, &p) in pos.iter().enumerate() {
                    table.row(&[snap.t.into(), species.label().into(), i.into(), p.into()]);
                }
            }
        }
        table
    }

    /// `t,species,m0,m1,m2,m3,m4` for every step.
    pub fn moments_csv(&self) -> CsvTable {
        let mut table = CsvTable::new(&["t", "species", "m0", "m1", "m2", "m3", "m4"]);
        for (k, &t) in self.times.iter().enumerate() {
            for species in [Species::X, Species::Y] {
                let m = &self.moments(species)[k].0;
                let mut cells: Vec<Cell> = vec![t.into(), species.label().into()];
                cells.extend((0..5).map(|j| Cell::Num(m.get(j).copied().unwrap_or(f64::NAN))));
                table.row(&cells);
            }
        }
        table
    }
}

/// Runs `params.n_steps` steps with the tape `NoiseTape::new(params.seed, dt)`.
pub fn simulate(
    ens0: &Ensemble,
    cfg: &ModelConfig,
    params: &SimParams,
    mode: DriveMode<'_>,
) -> Result<Trajectory> {
    let tape = NoiseTape::new(params.seed, params.dt);
    simulate_with(ens0, cfg, params, mode, &tape, PairwiseMethod::Auto)
}

pub fn simulate_with(
    ens0: &Ensemble,
    cfg: &ModelConfig,
    params: &SimParams,
    mode: DriveMode<'_>,
    tape: &NoiseTape,
    method: PairwiseMethod,
) -> Result<Trajectory> {
    params.validate()?;
    let order = cfg.moment_order();
    let mut ens = ens0.clone();
    let mut dw_x = vec![0.0; ens.x.len()];
    let mut dw_y = vec![0.0; ens.y.len()];
    let mut times = Vec::with_capacity(params.n_steps + 1);
    let mut moments_x = Vec::with_capacity(params.n_steps + 1);
    let mut moments_y = Vec::with_capacity(params.n_steps + 1);
    let mut snapshots = Vec::new();
    let mut record = |ens: &Ensemble, k: usize| -> Result<()> {
        times.push(ens.t);
        moments_x.push(empirical_moments(&ens.x, order)?);
        moments_y.push(empirical_moments(&ens.y, order)?);
        if k.is_multiple_of(params.record_stride) || k == params.n_steps {
            snapshots.push(Snapshot {
                t: ens.t,
                x: ens.x.clone(),
                y: ens.y.clone(),
            });
        }
        Ok(())
    };
    record(&ens, 0)?;
    for k in 1..=params.n_steps {
        tape.fill(Species::X, ens.step, &mut dw_x);
        tape.fill(Species::Y, ens.step, &mut dw_y);
        match mode {
            DriveMode::Interacting => {
                em_step_interacting(&mut ens, cfg, params.dt, &dw_x, &dw_y, method)?
            }
            DriveMode::External(b) => em_step_external(&mut ens, cfg, b, params.dt, &dw_x, &dw_y)?,
        }
        record(&ens, k)?;
    }
    Ok(Trajectory {
        times,
        moments_x,
        moments_y,
        snapshots,
        final_state: ens,
    })
}
