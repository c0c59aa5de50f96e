//! Problem instances: polynomial potentials, interaction kernels, the full
//! model configuration and a diagnostic check of the standing assumptions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Real polynomial stored constant-term first: `c₀ + c₁x + … + c_d x^d`.
///
/// Trailing zero coefficients are trimmed on construction, so `degree()` is
/// exact. The zero polynomial has degree 0 and an empty coefficient list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl From<Vec<f64>> for Polynomial {
    fn from(coeffs: Vec<f64>) -> Self {
        Self::new(coeffs)
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// `c·x`.
    pub fn linear(c: f64) -> Self {
        Self::new(vec![0.0, c])
    }

    /// `x⁴/4 − x²/2`.
    pub fn double_well() -> Self {
        Self::new(vec![0.0, 0.0, -0.5, 0.0, 0.25])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `x^k` (zero past the degree).
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    /// Horner evaluation, highest degree first.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        Self::new((0..n).map(|k| self.coeff(k) + other.coeff(k)).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        Self::new((0..n).map(|k| self.coeff(k) - other.coeff(k)).collect())
    }

    /// Only odd powers carry nonzero coefficients.
    pub fn is_odd(&self) -> bool {
        self.coeffs.iter().step_by(2).all(|&c| c == 0.0)
    }

    /// Only even powers carry nonzero coefficients.
    pub fn is_even(&self) -> bool {
        self.coeffs.iter().skip(1).step_by(2).all(|&c| c == 0.0)
    }

    /// `x ↦ E[p(x − Z)]` where `moments[k] = E[Z^k]`.
    ///
    /// Binomial expansion: the coefficient of `x^j` is
    /// `Σ_{k≥j} c_k C(k, j) (−1)^{k−j} m_{k−j}`.
    pub fn convolve_moments(&self, moments: &[f64]) -> Result<Self> {
        let d = self.degree();
        if self.is_zero() {
            return Ok(Self::zero());
        }
        if moments.len() <= d {
            return invalid(format!(
                "moment vector has orders 0..{} but the kernel has degree {d}",
                moments.len() as isize - 1
            ));
        }
        let binom = binomial_rows(d);
        let out = (0..=d)
            .map(|j| {
                (j..=d)
                    .map(|k| {
                        let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                        self.coeffs[k] * binom[k][j] * sign * moments[k - j]
                    })
                    .sum()
            })
            .collect();
        Ok(Self::new(out))
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "{c}")?,
                1 => write!(f, "{c}x")?,
                _ => write!(f, "{c}x^{k}")?,
            }
        }
        Ok(())
    }
}

/// Pascal's triangle up to row `n`.
pub(crate) fn binomial_rows(n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut row = vec![1.0; k + 1];
        for j in 1..k {
            row[j] = rows[k - 1][j - 1] + rows[k - 1][j];
        }
        rows.push(row);
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    X,
    Y,
}

impl Species {
    pub fn index(self) -> usize {
        match self {
            Species::X => 0,
            Species::Y => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Species::X => "x",
            Species::Y => "y",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Species::X => "X",
            Species::Y => "Y",
        })
    }
}

/// Interaction gradients ∇F_ij as polynomials.
///
/// Nothing is enforced at construction; [`validate_assumptions`] reports
/// whether the self-interactions are odd and increasing and whether the
/// cross-interactions are affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub grad_f11: Polynomial,
    pub grad_f12: Polynomial,
    pub grad_f21: Polynomial,
    pub grad_f22: Polynomial,
}

impl InteractionSpec {
    pub fn zero() -> Self {
        Self {
            grad_f11: Polynomial::zero(),
            grad_f12: Polynomial::zero(),
            grad_f21: Polynomial::zero(),
            grad_f22: Polynomial::zero(),
        }
    }

    /// Growth exponent q, where the self-interactions have degree ≤ 2q − 1.
    pub fn q(&self) -> usize {
        let d = self.grad_f11.degree().max(self.grad_f22.degree());
        d.div_ceil(2).max(1)
    }

    /// Highest degree among all four kernels.
    pub fn max_degree(&self) -> usize {
        [&self.grad_f11, &self.grad_f12, &self.grad_f21, &self.grad_f22]
            .iter()
            .map(|p| p.degree())
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        [&self.grad_f11, &self.grad_f12, &self.grad_f21, &self.grad_f22]
            .iter()
            .all(|p| p.is_zero())
    }

    /// Kernel pair acting on `species`: (kernel against X, kernel against Y).
    pub fn kernels(&self, species: Species) -> (&Polynomial, &Polynomial) {
        match species {
            Species::X => (&self.grad_f11, &self.grad_f12),
            Species::Y => (&self.grad_f21, &self.grad_f22),
        }
    }

    /// Recovers the α matrix when every ∇F_ij is of the form α_ij·x.
    pub fn as_quadratic(&self) -> Option<QuadraticInteraction> {
        let lin = |p: &Polynomial| (p.degree() <= 1 && p.coeff(0) == 0.0).then(|| p.coeff(1));
        Some(QuadraticInteraction {
            alpha: [
                [lin(&self.grad_f11)?, lin(&self.grad_f12)?],
                [lin(&self.grad_f21)?, lin(&self.grad_f22)?],
            ],
        })
    }
}

/// Quadratic interaction potentials F_ij(x) = α_ij x²/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticInteraction {
    pub alpha: [[f64; 2]; 2],
}

impl QuadraticInteraction {
    pub fn new(alpha: [[f64; 2]; 2]) -> Result<Self> {
        if alpha.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return invalid("quadratic interaction coefficients must be finite and non-negative");
        }
        Ok(Self { alpha })
    }

    pub fn uniform(value: f64) -> Result<Self> {
        Self::new([[value; 2]; 2])
    }
}

impl From<QuadraticInteraction> for InteractionSpec {
    fn from(q: QuadraticInteraction) -> Self {
        let [[a11, a12], [a21, a22]] = q.alpha;
        Self {
            grad_f11: Polynomial::linear(a11),
            grad_f12: Polynomial::linear(a12),
            grad_f21: Polynomial::linear(a21),
            grad_f22: Polynomial::linear(a22),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum InteractionJson {
    Quadratic { quadratic: [[f64; 2]; 2] },
    General(InteractionSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    v1: Polynomial,
    v2: Polynomial,
    interaction: InteractionJson,
    a: f64,
    sigma: f64,
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct ModelConfig {
    pub v1: Polynomial,
    pub v2: Polynomial,
    pub interactions: InteractionSpec,
    pub a: f64,
    pub sigma: f64,
}

impl TryFrom<ModelJson> for ModelConfig {
    type Error = crate::Error;

    fn try_from(j: ModelJson) -> Result<Self> {
        let interactions = match j.interaction {
            InteractionJson::Quadratic { quadratic } => QuadraticInteraction::new(quadratic)?.into(),
            InteractionJson::General(spec) => spec,
        };
        ModelConfig::new(j.v1, j.v2, interactions, j.a, j.sigma)
    }
}

impl From<ModelConfig> for ModelJson {
    fn from(c: ModelConfig) -> Self {
        let interaction = match c.interactions.as_quadratic() {
            Some(q) => InteractionJson::Quadratic {
                quadratic: q.alpha,
            },
            None => InteractionJson::General(c.interactions),
        };
        ModelJson {
            v1: c.v1,
            v2: c.v2,
            interaction,
            a: c.a,
            sigma: c.sigma,
        }
    }
}

impl ModelConfig {
    pub fn new(
        v1: Polynomial,
        v2: Polynomial,
        interactions: InteractionSpec,
        a: f64,
        sigma: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return invalid(format!("field \"a\" must lie in [0, 1], got {a}"));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return invalid(format!("field \"sigma\" must be positive, got {sigma}"));
        }
        Ok(Self {
            v1,
            v2,
            interactions,
            a,
            sigma,
        })
    }

    /// Symmetric double well `x⁴/4 − x²/2` for both species with quadratic
    /// interactions α_ij = `alpha`.
    pub fn double_well(alpha: f64, a: f64, sigma: f64) -> Result<Self> {
        Self::new(
            Polynomial::double_well(),
            Polynomial::double_well(),
            QuadraticInteraction::uniform(alpha)?.into(),
            a,
            sigma,
        )
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(
            self.v1.clone(),
            self.v2.clone(),
            self.interactions.clone(),
            self.a,
            sigma,
        )
    }

    pub fn potential(&self, species: Species) -> &Polynomial {
        match species {
            Species::X => &self.v1,
            Species::Y => &self.v2,
        }
    }

    /// Species weight: `a` for X, `1 − a` for Y.
    pub fn weight(&self, species: Species) -> f64 {
        match species {
            Species::X => self.a,
            Species::Y => 1.0 - self.a,
        }
    }

    pub fn q(&self) -> usize {
        self.interactions.q()
    }

    /// Highest moment order carried by moment vectors: `max(2q − 1, 4)`, and
    /// at least the degree of every interaction kernel.
    pub fn moment_order(&self) -> usize {
        (2 * self.q() - 1).max(4).max(self.interactions.max_degree())
    }

    pub fn quadratic(&self) -> Option<QuadraticInteraction> {
        self.interactions.as_quadratic()
    }

    /// The role-swapped instance: X ↔ Y, a ↔ 1 − a.
    pub fn swapped(&self) -> Self {
        Self {
            v1: self.v2.clone(),
            v2: self.v1.clone(),
            interactions: InteractionSpec {
                grad_f11: self.interactions.grad_f22.clone(),
                grad_f12: self.interactions.grad_f21.clone(),
                grad_f21: self.interactions.grad_f12.clone(),
                grad_f22: self.interactions.grad_f11.clone(),
            },
            a: 1.0 - self.a,
            sigma: self.sigma,
        }
    }

    /// Mean-field force `V′ + a(∇F_s1 ∗ μ) + (1−a)(∇F_s2 ∗ ν)` acting on
    /// `species`, as a polynomial in x. The drift is its negative.
    pub fn force_polynomial(
        &self,
        species: Species,
        mu_moments: &[f64],
        nu_moments: &[f64],
    ) -> Result<Polynomial> {
        let needed = 2 * self.q();
        if mu_moments.len() < needed || nu_moments.len() < needed {
            return invalid(format!(
                "moment vectors must carry orders 0..{} (got {} and {} entries)",
                needed - 1,
                mu_moments.len(),
                nu_moments.len()
            ));
        }
        let (k_mu, k_nu) = self.interactions.kernels(species);
        let from_mu = k_mu.convolve_moments(mu_moments)?.scale(self.a);
        let from_nu = k_nu.convolve_moments(nu_moments)?.scale(1.0 - self.a);
        Ok(self.potential(species).derivative().add(&from_mu.add(&from_nu)))
    }

    /// Mean-field drift of the X equation at `x`.
    pub fn drift_x(&self, x: f64, mu_moments: &[f64], nu_moments: &[f64]) -> Result<f64> {
        Ok(-self.force_polynomial(Species::X, mu_moments, nu_moments)?.eval(x))
    }

    /// Mean-field drift of the Y equation at `y`.
    pub fn drift_y(&self, y: f64, mu_moments: &[f64], nu_moments: &[f64]) -> Result<f64> {
        Ok(-self.force_polynomial(Species::Y, mu_moments, nu_moments)?.eval(y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Satisfied,
    Violated,
    NotCheckable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub verdict: Verdict,
    pub note: String,
}

impl HypothesisCheck {
    fn new(ok: bool, note: impl Into<String>) -> Self {
        Self {
            verdict: if ok { Verdict::Satisfied } else { Verdict::Violated },
            note: note.into(),
        }
    }
}

/// Verdicts for H1..H8 plus the witness constants they produce.
///
/// * H1, H2: drift coefficients locally Lipschitz and C¹ (automatic here).
/// * H3: ∇Vᵢ one-sided Lipschitz with constant θᵢ.
/// * H4: coercivity `x·V′(x) ≥ C₄x⁴ − C₂`.
/// * H5: V″ → +∞ at infinity.
/// * H6: polynomial growth `deg ∇V = 2m − 1` with m ≥ 2.
/// * H7: self-interactions ∇F₁₁, ∇F₂₂ odd with positive leading coefficient.
/// * H8: cross-interactions ∇F₁₂, ∇F₂₁ affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `hypotheses[k]` is the verdict for H(k+1).
    pub hypotheses: [HypothesisCheck; 8],
    /// One-sided Lipschitz constants θ₁, θ₂ of ∇V₁, ∇V₂.
    pub theta: [Option<f64>; 2],
    pub c4: [Option<f64>; 2],
    pub c2: [Option<f64>; 2],
    /// Growth exponent of ∇V: deg ∇V ≤ 2m − 1.
    pub m: usize,
    pub q: usize,
}

impl AssumptionReport {
    pub fn verdict(&self, h: usize) -> Verdict {
        self.hypotheses[h - 1].verdict
    }

    pub fn all_satisfied(&self) -> bool {
        self.hypotheses.iter().all(|h| h.verdict == Verdict::Satisfied)
    }
}

const THETA_SCAN_POINTS: usize = 10_001;

/// θ = max(0, −min V″) from a grid scan, or None when V″ is unbounded below.
fn scan_theta(v: &Polynomial) -> Option<f64> {
    let v2 = v.derivative().derivative();
    if v2.degree() >= 1 && (v2.degree() % 2 == 1 || v2.leading() < 0.0) {
        return None;
    }
    // Cauchy bound on the real roots of V″; V″ > 0 outside it.
    let radius = if v2.degree() >= 1 {
        let lead = v2.leading().abs();
        1.0 + v2.coeffs()[..v2.degree()]
            .iter()
            .map(|c| c.abs() / lead)
            .fold(0.0, f64::max)
    } else {
        1.0
    };
    let half = (THETA_SCAN_POINTS - 1) / 2;
    let h = 1.1 * radius / half as f64;
    let min = (0..THETA_SCAN_POINTS)
        .map(|i| v2.eval((i as f64 - half as f64) * h))
        .fold(f64::INFINITY, f64::min);
    Some((-min).max(0.0))
}

fn quartic_growth(v: &Polynomial) -> bool {
    v.degree() >= 4 && v.degree().is_multiple_of(2) && v.leading() > 0.0
}

/// Checks H1–H8 for a polynomial configuration. Pure and deterministic.
pub fn validate_assumptions(cfg: &ModelConfig) -> AssumptionReport {
    let pots = [&cfg.v1, &cfg.v2];
    let h1 = HypothesisCheck::new(true, "polynomial coefficients are locally Lipschitz");
    let h2 = HypothesisCheck::new(true, "polynomials are continuously differentiable");

    let theta = pots.map(scan_theta);
    let h3 = HypothesisCheck::new(
        theta.iter().all(Option::is_some),
        match theta {
            [Some(t1), Some(t2)] => format!("theta1 = {t1}, theta2 = {t2}"),
            _ => "V'' is unbounded below for some species".to_string(),
        },
    );

    let mut c4 = [None; 2];
    let mut c2 = [None; 2];
    for (i, v) in pots.iter().enumerate() {
        if quartic_growth(v) {
            // x V′(x) has the same degree as V, leading coefficient d·c_d.
            let xv = Polynomial::new(
                std::iter::once(0.0)
                    .chain(v.derivative().coeffs().iter().copied())
                    .collect(),
            );
            c4[i] = Some(0.5 * xv.leading());
            c2[i] = Some(xv.coeffs()[..xv.degree()].iter().map(|c| c.abs()).sum());
        }
    }
    let h4 = HypothesisCheck::new(
        c4.iter().all(Option::is_some),
        match (c4, c2) {
            ([Some(a), Some(b)], [Some(c), Some(d)]) => {
                format!("C4 = ({a}, {b}), C2 = ({c}, {d})")
            }
            _ => "some potential lacks even-degree (>= 4) growth with positive leading coefficient"
                .to_string(),
        },
    );
    let h5 = HypothesisCheck::new(
        pots.iter().all(|v| quartic_growth(v)),
        "V'' -> +inf requires even degree >= 4 and positive leading coefficient",
    );

    let grad_deg = pots
        .iter()
        .map(|v| v.derivative().degree())
        .max()
        .unwrap_or(0);
    let m = (grad_deg + 1).div_ceil(2).max(1);
    let h6 = HypothesisCheck::new(m >= 2, format!("deg grad V = {grad_deg}, m = {m}"));

    let inter = &cfg.interactions;
    let self_ok = |p: &Polynomial| p.is_zero() || (p.is_odd() && p.leading() > 0.0);
    let q = inter.q();
    let h7 = HypothesisCheck::new(
        self_ok(&inter.grad_f11) && self_ok(&inter.grad_f22),
        format!("q = {q}"),
    );
    let h8 = HypothesisCheck::new(
        inter.grad_f12.degree() <= 1 && inter.grad_f21.degree() <= 1,
        format!(
            "deg grad F12 = {}, deg grad F21 = {}",
            inter.grad_f12.degree(),
            inter.grad_f21.degree()
        ),
    );

    AssumptionReport {
        hypotheses: [h1, h2, h3, h4, h5, h6, h7, h8],
        theta,
        c4,
        c2,
        m,
        q,
    }
}
