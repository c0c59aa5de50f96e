//! Shared numerics: the nonlinear Grönwall envelope, log-sum-exp, least
//! squares and seed-stream derivation.

use crate::error::{invalid, Result};

/// Parameters of the integral inequality φ(t) ≤ ∫₀ᵗ (A φ(s) + B φ(s)^α) ds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallBound {
    a: f64,
    b: f64,
    alpha: f64,
}

impl GronwallBound {
    pub fn new(a: f64, b: f64, alpha: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return invalid(format!("Grönwall A must be positive, got {a}"));
        }
        if !(b >= 0.0) || !b.is_finite() {
            return invalid(format!("Grönwall B must be non-negative, got {b}"));
        }
        if !(0.0..1.0).contains(&alpha) {
            return invalid(format!("Grönwall alpha must lie in [0, 1), got {alpha}"));
        }
        Ok(Self { a, b, alpha })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Right-hand side of the comparison ODE ψ′ = Aψ + Bψ^α.
    pub fn comparison_rhs(&self, psi: f64) -> f64 {
        self.a * psi + self.b * psi.max(0.0).powf(self.alpha)
    }
}

/// Closed-form envelope `(B/A · (e^{(1−α)At} − 1))^{1/(1−α)}`.
pub fn gronwall_bound(gb: &GronwallBound, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return invalid(format!("time must be non-negative, got {t}"));
    }
    let k = 1.0 - gb.alpha;
    let inner = gb.b / gb.a * (k * gb.a * t).exp_m1();
    Ok(inner.powf(1.0 / k))
}

/// Integrates ψ′ = Aψ + Bψ^α from ψ(0) = `psi0` and reports ψ at the
/// (non-decreasing, non-negative) sample times.
///
/// The equation is not Lipschitz at zero, so `psi0` should be a tiny positive
/// number such as `1e-300`.
pub fn integrate_comparison_ode(
    gb: &GronwallBound,
    psi0: f64,
    samples: &[f64],
    rtol: f64,
) -> Result<Vec<f64>> {
    integrate_scalar(|_, y| gb.comparison_rhs(y), 0.0, psi0, samples, rtol, 1e-300)
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive embedded Runge–Kutta (Dormand–Prince 5(4)) for a scalar ODE,
/// returning the solution at each requested sample time.
pub fn integrate_scalar<F>(
    f: F,
    t0: f64,
    y0: f64,
    samples: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<Vec<f64>>
where
    F: Fn(f64, f64) -> f64,
{
    if samples.windows(2).any(|w| w[1] < w[0]) || samples.first().is_some_and(|&s| s < t0) {
        return invalid("sample times must be non-decreasing and not before t0");
    }
    let mut out = Vec::with_capacity(samples.len());
    let (mut t, mut y) = (t0, y0);
    let span = samples.last().map_or(1.0, |&s| (s - t0).max(1e-12));
    let mut h = 1e-6 * span;
    let mut k = [0.0; 7];
    for &target in samples {
        while t < target {
            let step = h.min(target - t);
            for i in 0..7 {
                let yi = y + step * (0..i).map(|j| DP_A[i][j] * k[j]).sum::<f64>();
                k[i] = f(t + DP_C[i] * step, yi);
            }
            let y5 = y + step * (0..7).map(|i| DP_B5[i] * k[i]).sum::<f64>();
            let y4 = y + step * (0..7).map(|i| DP_B4[i] * k[i]).sum::<f64>();
            let scale = atol + rtol * y.abs().max(y5.abs());
            let err = ((y5 - y4) / scale).abs();
            if !err.is_finite() {
                h = step * 0.1;
                continue;
            }
            if err <= 1.0 {
                t = if step == target - t { target } else { t + step };
                y = y5;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = step * factor;
            if h < f64::MIN_POSITIVE {
                return invalid("step size underflow in ODE integration");
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// `ln Σ exp(vᵢ)` evaluated without overflow.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope from residuals (NaN for two points).
    pub slope_stderr: f64,
    pub n: usize,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linfit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return invalid("linfit: xs and ys differ in length");
    }
    let n = xs.len();
    let nf = n as f64;
    if n < 2 {
        return invalid("linfit needs at least two points");
    }
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return invalid("linfit needs at least two distinct x values");
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_stderr = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LinearFit {
        slope,
        intercept,
        r2,
        slope_stderr,
        n,
    })
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives an independent seed for `(purpose, index)` from a master seed.
///
/// Counter scheme: `mix(mix(master ⊕ fnv1a(purpose)) + index·γ)` with γ the
/// 64-bit golden-ratio constant. For a fixed purpose the map is a bijection in
/// `index`, so adding replicas never changes the seeds of existing ones.
pub fn derive_stream(master_seed: u64, purpose: &str, index: u64) -> u64 {
    let base = mix64(master_seed ^ fnv1a(purpose));
    mix64(base.wrapping_add(index.wrapping_mul(GOLDEN_GAMMA)))
}

/// Two-sided Student-t quantile used for slope confidence intervals.
pub fn student_t_quantile(p: f64, dof: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    match StudentsT::new(0.0, 1.0, dof) {
        Ok(d) => d.inverse_cdf(p),
        Err(_) => f64::NAN,
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
