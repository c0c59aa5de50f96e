//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use twomv_core::fokker_planck::{fp_evolve, fp_residual, DensityPair, Grid1D};
use twomv_core::invariant::{
    fixed_points, laplace_expand, phi_map, start_grid, stationary_density, symmetric_invariant,
    FixedPointOptions, MeanPair, QuadratureRule,
};
use twomv_core::model::{ModelConfig, Polynomial, QuadraticInteraction};
use twomv_core::picard::{contraction_diagnostic, picard_solve, DriftPair, GridSpec, McParams};
use twomv_core::poc::{error_stats, rate_fit, replicate, CouplingParams, ErrorStats, Stat};
use twomv_core::sde::{simulate, DriveMode, Ensemble, InitialLaw, PairwiseMethod, SimParams};
use twomv_core::util::{gronwall_bound, integrate_comparison_ode, GronwallBound};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    format!("error: {err}")
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn double_well(sigma: f64) -> ModelConfig {
    ModelConfig::double_well(0.1, 0.5, sigma).unwrap()
}

fn init_x() -> InitialLaw {
    InitialLaw::Gaussian {
        mean: 0.5,
        var: 0.25,
    }
}

fn init_y() -> InitialLaw {
    InitialLaw::Gaussian {
        mean: -0.3,
        var: 0.25,
    }
}

fn mc(n: usize, dt: f64, seed: u64) -> McParams {
    McParams {
        n_particles: n,
        dt,
        seed,
        init_x: init_x(),
        init_y: init_y(),
        antithetic: true,
        norm_grid: GridSpec::default(),
    }
}

fn poc_schedule(cfg: &ModelConfig, horizon: f64, dt: f64, replicas: usize) -> Result<Vec<ErrorStats>, String> {
    let hat = picard_solve(cfg, horizon, &mc(50_000, dt, 11), 1e-9, 40).map_err(e)?;
    if !hat.converged {
        return Err(format!("Picard drift did not converge: {:?}", hat.log.last()));
    }
    [50, 100, 200, 400]
        .iter()
        .map(|&n| {
            let p = CouplingParams {
                n,
                m: n,
                horizon,
                dt,
                init_x: init_x(),
                init_y: init_y(),
                method: PairwiseMethod::Auto,
            };
            let runs = replicate(cfg, &p, replicas, 2024, &hat.drift).map_err(e)?;
            error_stats(&runs).map_err(e)
        })
        .collect()
}

fn slopes(schedule: &[ErrorStats]) -> Result<(f64, f64, f64), String> {
    let fits = rate_fit(schedule).map_err(e)?;
    let get = |s: Stat| fits.iter().find(|f| f.stat == s).unwrap();
    let w = get(Stat::Omega);
    Ok((w.slope, w.ci_halfwidth, get(Stat::FourthMoment).slope))
}

fn c1_poc_rate() -> Outcome {
    let cfg = double_well(0.5);
    let schedule = poc_schedule(&cfg, 2.0, 1e-3, 50)?;
    let values: Vec<String> = schedule
        .iter()
        .map(|s| format!("N={}: {:.3e}", s.n, s.scalar(Stat::Omega).0))
        .collect();
    let (w, ci, z) = slopes(&schedule)?;
    let half = poc_schedule(&cfg, 2.0, 5e-4, 50)
        .and_then(|s| slopes(&s))
        .map(|(w2, _, z2)| format!("; dt/2 slopes omega {w2:.3}, fourth {z2:.3}"))
        .unwrap_or_else(|err| format!("; dt/2 run failed: {err}"));
    check(
        (-1.4..=-0.6).contains(&w) && z <= w + 0.3,
        format!(
            "omega slope {w:.3} ± {ci:.3}, fourth-moment slope {z:.3} [{}]{half}",
            values.join(", ")
        ),
    )
}

fn c2_degenerate_coupling() -> Outcome {
    let cfg = ModelConfig::double_well(0.0, 0.5, 0.5).unwrap();
    let hat = picard_solve(&cfg, 2.0, &mc(2000, 1e-3, 3), 1e-12, 5).map_err(e)?;
    let p = CouplingParams {
        n: 100,
        m: 100,
        horizon: 2.0,
        dt: 1e-3,
        init_x: init_x(),
        init_y: init_y(),
        method: PairwiseMethod::Auto,
    };
    let runs = replicate(&cfg, &p, 4, 99, &hat.drift).map_err(e)?;
    let stats = error_stats(&runs).map_err(e)?;
    let worst = stats
        .omega
        .iter()
        .chain(&stats.omega_hat)
        .fold(0.0_f64, |m, v| m.max(*v));
    check(
        worst == 0.0,
        format!("max omega over {} recorded times = {worst:e}", stats.times.len()),
    )
}

fn roots_at(sigma: f64) -> Result<Vec<MeanPair>, String> {
    let cfg = double_well(sigma);
    let rule = QuadratureRule::auto(&cfg, 2.0, 4001).map_err(e)?;
    let rep = fixed_points(&cfg, &rule, &start_grid(7, 2.0), &FixedPointOptions::default()).map_err(e)?;
    Ok(rep.roots.iter().map(|r| r.m).collect())
}

fn c3_non_uniqueness() -> Outcome {
    let low = roots_at(0.3)?;
    let high = roots_at(3.0)?;
    let origin = low.iter().any(|m| m.norm_inf() < 1e-6);
    let pair = low
        .iter()
        .filter(|m| m.norm_inf() > 1e-3)
        .any(|m| low.iter().any(|o| o.dist(&m.neg()) < 1e-8));
    check(
        low.len() >= 3 && origin && pair && high.len() == 1,
        format!(
            "sigma=0.3: {} roots {:?}; sigma=3: {} root(s)",
            low.len(),
            low.iter().map(|m| (m.m1, m.m2)).collect::<Vec<_>>(),
            high.len()
        ),
    )
}

fn c4_symmetric_measure() -> Outcome {
    let cfg = double_well(0.3);
    let grid = QuadratureRule {
        radius: 2.5,
        n_nodes: 2001,
        tail_bound: 0.0,
    }
    .nodes();
    let sp = symmetric_invariant(&cfg, &grid).map_err(e)?;
    let n = grid.len();
    let asym = (0..n)
        .map(|i| (sp.mu[i] - sp.mu[n - 1 - i]).abs().max((sp.nu[i] - sp.nu[n - 1 - i]).abs()))
        .fold(0.0, f64::max);
    check(
        sp.means.norm_inf() < 1e-10 && asym < 1e-12,
        format!("|mean| = {:e}, max |mu(x) - mu(-x)| = {asym:e}", sp.means.norm_inf()),
    )
}

fn c5_gaussian_closed_form() -> Outcome {
    let alpha = [[0.7, 1.3], [0.4, 0.9]];
    let a = 0.35;
    let cfg = ModelConfig::new(
        Polynomial::new(vec![0.0, 0.0, 0.5]),
        Polynomial::new(vec![0.0, 0.0, 0.5]),
        QuadraticInteraction::new(alpha).unwrap().into(),
        a,
        0.8,
    )
    .unwrap();
    let rule = QuadratureRule::auto(&cfg, 2.0, 4001).map_err(e)?;
    let tau1 = a * alpha[0][0] + (1.0 - a) * alpha[0][1];
    let tau2 = a * alpha[1][0] + (1.0 - a) * alpha[1][1];
    let mut worst = 0.0_f64;
    for m in start_grid(5, 2.0) {
        let p = phi_map(&m, &cfg, &rule).map_err(e)?;
        let want1 = (a * alpha[0][0] * m.m1 + (1.0 - a) * alpha[0][1] * m.m2) / (1.0 + tau1);
        let want2 = (a * alpha[1][0] * m.m1 + (1.0 - a) * alpha[1][1] * m.m2) / (1.0 + tau2);
        worst = worst.max((p.m1 - want1).abs()).max((p.m2 - want2).abs());
    }
    check(worst < 1e-8, format!("max deviation over 25 mean pairs = {worst:e}"))
}

fn c6_laplace() -> Outcome {
    let base = double_well(0.3);
    let exp = laplace_expand(&base, 1.0, 0.0, 0.0).map_err(e)?;
    let mut errs = Vec::new();
    for sigma in [0.4, 0.3, 0.2, 0.15] {
        let cfg = base.with_sigma(sigma).map_err(e)?;
        let rule = QuadratureRule::auto(&cfg, 1.0, 8001).map_err(e)?;
        let p = phi_map(&MeanPair::new(1.0, 1.0), &cfg, &rule).map_err(e)?;
        let s2 = sigma * sigma;
        errs.push(((p.m1 - (1.0 - exp.k1 * s2)) / s2).abs());
    }
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    check(
        decreasing && (exp.k1 - 0.3401).abs() < 1e-4,
        format!("k1 = {:.6}, e(sigma) = {}", exp.k1, sci(&errs)),
    )
}

fn c7_pde_stationary() -> Outcome {
    let cfg = double_well(0.3);
    let roots = roots_at(0.3)?;
    let mut lines = Vec::new();
    let mut ok = !roots.is_empty();
    for m in &roots {
        let grid = Grid1D::new(-2.2, 2.2, 512).map_err(e)?;
        let sp = stationary_density(m, &cfg, &grid.centers()).map_err(e)?;
        let dp = DensityPair::from_stationary(&sp, &grid).map_err(e)?;
        let run = fp_evolve(&dp, &cfg, &grid, 5.0, 5.0 / 16_000.0, 16_000, false).map_err(e)?;
        let drift = run.state.l1_distance(&dp, &grid);
        let mut res = Vec::new();
        for n in [128, 256, 512] {
            let g = Grid1D::new(-2.2, 2.2, n).map_err(e)?;
            let s = stationary_density(m, &cfg, &g.centers()).map_err(e)?;
            res.push(fp_residual(&s, &cfg, &g).map_err(e)?);
        }
        let orders = [
            (res[0].0 / res[1].0).log2(),
            (res[1].0 / res[2].0).log2(),
            (res[0].1 / res[1].1).log2(),
            (res[1].1 / res[2].1).log2(),
        ];
        let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= drift[0] < 1e-3 && drift[1] < 1e-3 && min_order >= 1.8;
        lines.push(format!(
            "root ({:.4}, {:.4}): L1 drift ({:.2e}, {:.2e}), residual order >= {min_order:.3}",
            m.m1, m.m2, drift[0], drift[1]
        ));
    }
    check(ok, lines.join("; "))
}

fn c8_sde_pde() -> Outcome {
    let cfg = double_well(0.5);
    let horizon = 2.0;
    let grid = Grid1D::new(-5.0, 5.0, 640).map_err(e)?;
    let dp = DensityPair::gaussian(&grid, [0.5, -0.3], [0.25, 0.25]).map_err(e)?;
    let fp_dt = 5e-5;
    let fp = fp_evolve(&dp, &cfg, &grid, horizon, fp_dt, 4000, false).map_err(e)?;
    let n = 10_000;
    let ens = Ensemble::sample(&cfg, n, n, &init_x(), &init_y(), 77, false).map_err(e)?;
    let params = SimParams {
        dt: 1e-3,
        n_steps: 2000,
        seed: 78,
        record_stride: 2000,
    };
    let traj = simulate(&ens, &cfg, &params, DriveMode::Interacting).map_err(e)?;
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for k in 1..=10 {
        let idx = k * 200;
        let log = &fp.log[k];
        debug_assert!((log.t - traj.times[idx]).abs() < 1e-9);
        for (s, mv) in [&traj.moments_x[idx], &traj.moments_y[idx]].iter().enumerate() {
            let mean = mv.0[1];
            let se = ((mv.0[2] - mean * mean).max(0.0) / n as f64).sqrt();
            let gap = (mean - log.mean[s]).abs();
            let allowed = 3.0 * se + 0.01;
            ok &= gap <= allowed;
            worst = worst.max(gap / allowed);
        }
    }
    check(
        ok,
        format!("10 checkpoints, worst |sde - pde| / (3 SE + 0.01) = {worst:.3}"),
    )
}

fn c9_picard_contraction() -> Outcome {
    let cfg = double_well(0.5);
    let params = mc(20_000, 1e-3, 5);
    let res = picard_solve(&cfg, 0.25, &params, 1e-10, 40).map_err(e)?;
    let diffs: Vec<f64> = res.log.iter().map(|r| r.norm_diff).collect();
    let monotone = diffs.windows(2).skip(1).all(|w| w[1] < w[0]);
    let mut ratios = Vec::new();
    for horizon in [0.25, 0.125, 0.0625] {
        let times = twomv_core::picard::simulation_times(1e-3, (horizon / 1e-3_f64).round() as usize);
        let b = DriftPair::zero(&times).map_err(e)?;
        let c = DriftPair::constant(&times, std::array::from_fn(|_| Polynomial::constant(0.5)))
            .map_err(e)?;
        ratios.push(contraction_diagnostic(&cfg, &params, &b, &c).map_err(e)?);
    }
    let shrinking = ratios.windows(2).all(|w| w[1] < w[0]);
    check(
        res.converged && monotone && shrinking,
        format!(
            "{} iterations, differences {}; contraction at T, T/2, T/4 = {}",
            diffs.len(),
            sci(&diffs),
            sci(&ratios)
        ),
    )
}

fn c10_gronwall() -> Outcome {
    let samples: Vec<f64> = (0..=60).map(|i| i as f64 * 0.05).collect();
    let mut worst = f64::NEG_INFINITY;
    for a in [1.0, 2.0] {
        for b in [0.5, 1.0] {
            for alpha in [0.5, 0.75] {
                let gb = GronwallBound::new(a, b, alpha).map_err(e)?;
                let psi = integrate_comparison_ode(&gb, 1e-300, &samples, 1e-10).map_err(e)?;
                for (&t, &p) in samples.iter().zip(&psi) {
                    let bound = gronwall_bound(&gb, t).map_err(e)?;
                    if t > 0.0 {
                        worst = worst.max((p - bound) / bound);
                    }
                }
            }
        }
    }
    check(
        worst <= 1e-6,
        format!("max relative excess of the ODE over the bound = {worst:e}"),
    )
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "propagation-of-chaos rate", budget: Some(Duration::from_secs(600)), run: c1_poc_rate },
        Criterion { id: 2, name: "coupling degeneracy", budget: None, run: c2_degenerate_coupling },
        Criterion { id: 3, name: "non-uniqueness of invariant measures", budget: Some(Duration::from_secs(30)), run: c3_non_uniqueness },
        Criterion { id: 4, name: "symmetric invariant measure", budget: None, run: c4_symmetric_measure },
        Criterion { id: 5, name: "Gaussian closed form", budget: Some(Duration::from_secs(1)), run: c5_gaussian_closed_form },
        Criterion { id: 6, name: "Laplace expansion", budget: Some(Duration::from_secs(5)), run: c6_laplace },
        Criterion { id: 7, name: "PDE/stationary cross-validation", budget: Some(Duration::from_secs(120)), run: c7_pde_stationary },
        Criterion { id: 8, name: "SDE/PDE agreement", budget: None, run: c8_sde_pde },
        Criterion { id: 9, name: "Picard contraction", budget: None, run: c9_picard_contraction },
        Criterion { id: 10, name: "Gronwall oracle", budget: None, run: c10_gronwall },
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.contains(&c.id) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let over = c.budget.is_some_and(|b| elapsed > b);
        let (tag, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d} (over time budget {:?})", c.budget.unwrap())),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        println!(
            "[{tag}] criterion {:>2} {}: {detail} ({:.2}s)",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
