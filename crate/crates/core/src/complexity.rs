//! Sample counts from the Hoeffding and Chebyshev bounds, the control error
//! interval they certify, and lower bounds on covariance and cost growth.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::LtvModel;
use crate::error::{Error, Result};
use crate::linalg::{check_pd, lambda_max, lambda_min};

/// `log₁₀ N` above which a sample count is reported as overflow.
pub const DEFAULT_LOG10_CAP: f64 = 300.0;

const EXACT_LIMIT: f64 = 9_007_199_254_740_992.0; // 2^53

/// Exponent of the Hoeffding tail used for `N₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HoeffdingForm {
    /// `P{|Ê₁ − E[w]| ≥ ε₁} ≤ 2e^{−2Nε₁²}`.
    #[default]
    Eq9,
    /// `P{|Ê₁ − E[w]| ≥ ε₁} ≤ 2e^{−Nε₁²}`.
    Prop1,
}

impl std::str::FromStr for HoeffdingForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "eq9" => Ok(HoeffdingForm::Eq9),
            "prop1" => Ok(HoeffdingForm::Prop1),
            other => Err(format!("unknown hoeffding form `{other}` (expected eq9|prop1)")),
        }
    }
}

impl std::fmt::Display for HoeffdingForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HoeffdingForm::Eq9 => "eq9",
            HoeffdingForm::Prop1 => "prop1",
        })
    }
}

/// A required sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleCount {
    /// Exactly representable count.
    Exact(u64),
    /// Finite but beyond 2^53; only its magnitude is kept.
    Large { log10: f64 },
    /// Exceeds the configured magnitude cap.
    Overflow { log10: f64 },
}

impl SampleCount {
    pub fn exact(self) -> Option<u64> {
        match self {
            SampleCount::Exact(n) => Some(n),
            _ => None,
        }
    }

    pub fn is_overflow(self) -> bool {
        matches!(self, SampleCount::Overflow { .. })
    }

    pub fn log10(self) -> f64 {
        match self {
            SampleCount::Exact(n) => (n as f64).log10(),
            SampleCount::Large { log10 } | SampleCount::Overflow { log10 } => log10,
        }
    }

    fn from_ln(ln_n: f64, cap: f64) -> Self {
        let log10 = ln_n / std::f64::consts::LN_10;
        if log10 > cap {
            return SampleCount::Overflow { log10 };
        }
        let n = ln_n.exp();
        if n <= EXACT_LIMIT {
            SampleCount::Exact(ceil_count(n))
        } else {
            SampleCount::Large { log10 }
        }
    }
}

impl std::fmt::Display for SampleCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleCount::Exact(n) => write!(f, "{n}"),
            SampleCount::Large { log10 } => write!(f, "1e{log10:.1}"),
            SampleCount::Overflow { .. } => f.write_str("overflow"),
        }
    }
}

impl PartialOrd for SampleCount {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        match (self, other) {
            (SampleCount::Exact(a), SampleCount::Exact(b)) => Some(a.cmp(b)),
            _ => self.log10().partial_cmp(&other.log10()),
        }
    }
}

/// Smallest integer ≥ `x`, at least 1. Values within 1e-9 relative of an
/// integer snap to it so round-off does not add a spurious sample.
fn ceil_count(x: f64) -> u64 {
    if !(x > 1.0) {
        return 1;
    }
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `N₁ = ⌈ln(2/ρ₁)/(2ε₁²)⌉`.
pub fn hoeffding_samples(eps1: f64, rho1: f64) -> Result<u64> {
    hoeffding_samples_with(eps1, rho1, HoeffdingForm::Eq9)
}

/// Hoeffding count under either exponent; `ρ₁ ≥ 2` makes the bound vacuous
/// and yields 1.
pub fn hoeffding_samples_with(eps1: f64, rho1: f64, form: HoeffdingForm) -> Result<u64> {
    check_positive("eps1", eps1)?;
    check_positive("rho1", rho1)?;
    let factor = match form {
        HoeffdingForm::Eq9 => 2.0,
        HoeffdingForm::Prop1 => 1.0,
    };
    let n = (2.0 / rho1).ln() / (factor * eps1 * eps1);
    Ok(ceil_count(n))
}

/// `N₂ = ⌈(1+√2) e^{2E[S]/λ} / (ρ₂ ε₂²)⌉` from `E[S]/λ`, evaluated in the log
/// domain.
pub fn chebyshev_samples_analytic(log_e_s_scaled: f64, eps2: f64, rho2: f64, log10_cap: f64) -> Result<SampleCount> {
    if !(log_e_s_scaled >= 0.0) {
        return Err(Error::invalid(format!("E[S]/λ must be nonnegative, got {log_e_s_scaled}")));
    }
    check_positive("eps2", eps2)?;
    check_positive("rho2", rho2)?;
    let ln_n = variance_upper_bound(log_e_s_scaled).ln - rho2.ln() - 2.0 * eps2.ln();
    Ok(SampleCount::from_ln(ln_n, log10_cap))
}

/// `N₂ = ⌈(1+√2) / (ρ₂ ε₂² (Ê₁ − ε₁)²)⌉`.
pub fn chebyshev_samples_empirical(e1_hat: f64, eps1: f64, eps2: f64, rho2: f64) -> Result<SampleCount> {
    check_positive("eps1", eps1)?;
    check_positive("eps2", eps2)?;
    check_positive("rho2", rho2)?;
    if !(e1_hat > eps1) {
        return Err(Error::Assumption(format!("Ê₁ = {e1_hat} does not exceed ε₁ = {eps1}")));
    }
    let gap = e1_hat - eps1;
    let ln_n = LN_ONE_PLUS_SQRT2 - rho2.ln() - 2.0 * eps2.ln() - 2.0 * gap.ln();
    Ok(SampleCount::from_ln(ln_n, DEFAULT_LOG10_CAP))
}

const LN_ONE_PLUS_SQRT2: f64 = 0.881_373_587_019_543; // asinh(1)

/// Interval guaranteed to contain the estimate of component `u*ᵢ` when the
/// denominator is within a relative error `r = ε₁/E[w]` and the numerator
/// within `ε₂`: the hull of `(1 ± r)(u*ᵢ ± ε₂)`.
pub fn control_error_bounds(u_star: f64, eps1: f64, eps2: f64, e_w: f64) -> Result<(f64, f64)> {
    if !(eps1 >= 0.0 && eps2 >= 0.0) {
        return Err(Error::invalid("error tolerances must be nonnegative"));
    }
    check_positive("E[w]", e_w)?;
    if eps1 >= e_w {
        return Err(Error::Assumption(format!("ε₁ = {eps1} is not below E[w] = {e_w}")));
    }
    let r = eps1 / e_w;
    let low = u_star - eps2;
    let high = u_star + eps2;
    let lo = ((1.0 - r) * low).min((1.0 + r) * low);
    let hi = ((1.0 - r) * high).max((1.0 + r) * high);
    Ok((lo, hi))
}

/// `Var(w) ≤ (1 − E[w]) E[w]` for `w ∈ [0, 1]`.
pub fn var_w_bound(e_w: f64) -> Result<f64> {
    if !(e_w > 0.0 && e_w <= 1.0) {
        return Err(Error::invalid(format!("E[w] must lie in (0, 1], got {e_w}")));
    }
    Ok((1.0 - e_w) * e_w)
}

/// A nonnegative quantity held as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Magnitude {
    pub ln: f64,
}

impl Magnitude {
    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    /// Saturates to `f64::INFINITY` past the largest finite double.
    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn is_overflow(self) -> bool {
        !self.value().is_finite()
    }
}

/// Upper bound `(1+√2) e^{2E[S]/λ}` on the variance of the weighted control
/// `wδ/E[w]`.
pub fn variance_upper_bound(log_e_s_scaled: f64) -> Magnitude {
    Magnitude { ln: LN_ONE_PLUS_SQRT2 + 2.0 * log_e_s_scaled }
}

/// `Var(XY) ≤ √(Var(X²) Var(Y²)) + E[X²] E[Y²]`.
pub fn var_product_bound(var_x2: f64, var_y2: f64, e_x2: f64, e_y2: f64) -> Result<f64> {
    if [var_x2, var_y2, e_x2, e_y2].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("variance product inputs must be nonnegative"));
    }
    Ok((var_x2 * var_y2).sqrt() + e_x2 * e_y2)
}

/// `λ_min(Q) λ_min(P)`, a lower bound on `E[(X−x_tgt)ᵀQ(X−x_tgt)]`.
pub fn min_expected_cost_bound(q: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    check_pd(q, "Q")?;
    if p.shape() != q.shape() {
        return Err(Error::dim(format!("Q is {:?}, P is {:?}", q.shape(), p.shape())));
    }
    let lp = lambda_min(p);
    if lp < -1e-9 {
        return Err(Error::invalid("P must be positive semi-definite"));
    }
    Ok(lambda_min(q) * lp.max(0.0))
}

/// `σ²_min` of a (possibly wide or tall) input matrix as `λ_min(BBᵀ)`, which
/// is zero whenever `B` cannot span the state space.
fn input_sigma_min_sq(b: &DMatrix<f64>) -> f64 {
    lambda_min(&(b * b.transpose())).max(0.0)
}

/// Lower bound on `λ_min(Pₜ) ≤ ‖Pₜ‖₂`:
/// `σ²_min(B_{t−1}) + Σ_{τ<t−1} σ²_min(A_{t−1}⋯A_{τ+1}) σ²_min(B_τ)`.
pub fn covariance_growth_lower_bound(model: &LtvModel, t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("no covariance bound at t = 0"));
    }
    if t > model.horizon() {
        return Err(Error::invalid(format!("step {t} beyond horizon {}", model.horizon())));
    }
    let n = model.a(0).nrows();
    let mut total = input_sigma_min_sq(model.b(t - 1));
    let mut product = DMatrix::<f64>::identity(n, n);
    for tau in (0..t - 1).rev() {
        product = &product * model.a(tau + 1);
        let s = crate::linalg::sigma_min(&product);
        total += s * s * input_sigma_min_sq(model.b(tau));
    }
    Ok(total)
}

/// `σ |λ₁(A)|^{2t}` for `t = 1 … t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthCurve {
    pub sigma: f64,
    pub spectral_radius: f64,
    pub bounds: Vec<f64>,
}

/// Geometric lower bound on the quadratic cost of an unstable LTI system.
///
/// With `σ = λ_min(Q) λ_min(BBᵀ) / |λ₁|²` each entry is at most
/// `trace(QPₜ)`; the inequality is re-checked on every step before the curve
/// is returned.
pub fn unstable_growth_curve(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, t_max: usize) -> Result<GrowthCurve> {
    let n = a.nrows();
    if !a.is_square() || b.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::dim(format!("A {:?}, B {:?}, Q {:?}", a.shape(), b.shape(), q.shape())));
    }
    check_pd(q, "Q")?;
    let bbt = b * b.transpose();
    let lb = lambda_min(&bbt);
    if !(lb > 1e-12 * lambda_max(&bbt).max(f64::MIN_POSITIVE)) {
        return Err(Error::Assumption("B must have full rank".into()));
    }
    let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    if radius <= 1.0 + 1e-12 {
        return Err(Error::Assumption(format!("spectral radius {radius} is not above 1")));
    }
    let sigma = lambda_min(q) * lb / (radius * radius);
    let mut bounds = Vec::with_capacity(t_max);
    let mut p = DMatrix::<f64>::zeros(n, n);
    for t in 1..=t_max {
        p = a * &p * a.transpose() + &bbt;
        let bound = sigma * radius.powi(2 * t as i32);
        let actual = (q * &p).trace();
        if bound > actual * (1.0 + 1e-9) {
            return Err(Error::Internal(format!(
                "growth constant {sigma} violates trace(QP) = {actual} at t = {t}"
            )));
        }
        bounds.push(bound);
    }
    Ok(GrowthCurve { sigma, spectral_radius: radius, bounds })
}

/// Tolerances and temperature for a sample-count query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityQuery {
    pub eps1: f64,
    pub eps2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub lambda: f64,
}

impl Default for ComplexityQuery {
    fn default() -> Self {
        Self { eps1: 0.01, eps2: 0.1, rho1: 0.05, rho2: 0.05, lambda: 1.0 }
    }
}

impl ComplexityQuery {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2), ("lambda", self.lambda)] {
            check_positive(name, v)?;
        }
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMode {
    Analytic,
    Empirical,
}

impl std::fmt::Display for EstimateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimateMode::Analytic => "analytic",
            EstimateMode::Empirical => "empirical",
        })
    }
}

/// Sample counts for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityReport {
    pub n1: u64,
    /// `None` when the assumption `ε₁ < E[w]` fails on the empirical route.
    pub n2: Option<SampleCount>,
    /// `ε₁/E[w]` (analytic, with `E[w] ≥ e^{−E[S]/λ}`) or `ε₁/Ê₁`.
    pub multiplier: f64,
    /// `E[S]/λ` on the analytic route.
    pub log_e_s_scaled: Option<f64>,
    pub e1_hat: Option<f64>,
    pub mode: EstimateMode,
    /// `ε₁` is below the weight-mean estimate in use.
    pub assumption_ok: bool,
}

impl ComplexityReport {
    pub fn overflow(&self) -> bool {
        self.n2.is_some_and(SampleCount::is_overflow)
    }

    /// `max(N₁, N₂)`.
    pub fn required(&self) -> Option<SampleCount> {
        let n1 = SampleCount::Exact(self.n1);
        self.n2.map(|n2| if n2 > n1 { n2 } else { n1 })
    }
}

pub fn analytic_report(query: &ComplexityQuery, expected_cost: f64, form: HoeffdingForm, log10_cap: f64) -> Result<ComplexityReport> {
    query.validate()?;
    let x = expected_cost / query.lambda;
    let n2 = chebyshev_samples_analytic(x, query.eps2, query.rho2, log10_cap)?;
    let multiplier = (query.eps1.ln() + x).exp();
    Ok(ComplexityReport {
        n1: hoeffding_samples_with(query.eps1, query.rho1, form)?,
        n2: Some(n2),
        multiplier,
        log_e_s_scaled: Some(x),
        e1_hat: None,
        mode: EstimateMode::Analytic,
        assumption_ok: query.eps1.ln() < -x,
    })
}

pub fn empirical_report(query: &ComplexityQuery, e1_hat: f64, form: HoeffdingForm) -> Result<ComplexityReport> {
    query.validate()?;
    let n2 = match chebyshev_samples_empirical(e1_hat, query.eps1, query.eps2, query.rho2) {
        Ok(n) => Some(n),
        Err(Error::Assumption(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ComplexityReport {
        n1: hoeffding_samples_with(query.eps1, query.rho1, form)?,
        n2,
        multiplier: query.eps1 / e1_hat,
        log_e_s_scaled: None,
        e1_hat: Some(e1_hat),
        mode: EstimateMode::Empirical,
        assumption_ok: n2.is_some(),
    })
}
