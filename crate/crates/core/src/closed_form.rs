//! Exact solution of the first-kind equation C·(K1 h)(u) = u^{½−H1} on (0, 1)
//! and the asymptotic-variance functional built from it.
//!
//! The solution is h0(v) = c6·v^{½−H1}·I^{H1−½}_{1−}(t^{H1−H2}(1−t)^{½−H2})(v).
//! The frequently quoted variant (weight v^{H1−½}, inner factor (1−t)^{½−H1},
//! and its constant chain) is kept for reporting only: it does not solve the
//! equation.

use crate::error::{Error, Result};
use crate::fredholm::{pair_rule, FredholmSolution, QuadratureGrid};
use crate::kernels::KernelContext;
use crate::model::DerivedConstants;
use crate::numerics::quadrature::{marked_rule, EndGrading, Mark};
use crate::numerics::special::{beta, gamma};
use serde::{Deserialize, Serialize};

const ORDER: usize = 16;
const CHECK_ORDER: usize = 24;
const END_DEPTH: usize = 40;

/// The constants c1..c6 carrying C through to the solution's normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantChain {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("C must be positive, got {c}")))
    }
}

impl ConstantChain {
    /// Chain under which h0 solves C·K1 h0 = u^{½−H1}.
    pub fn new(c: f64, constants: &DerivedConstants) -> Result<Self> {
        check_c(c)?;
        let (h1, h2, b2) = (constants.h1, constants.h2, constants.beta_h2);
        let c1 = c * (2.0 - 2.0 * h1);
        let c2 = c1 * b2 * gamma(1.5 - h1);
        let c3 = gamma(3.0 - 2.0 * h1) / (c2 * gamma(1.5 - h1));
        let c4 = c3 * gamma(1.5 - h2) / (gamma(h2 - 0.5) * gamma(2.0 - 2.0 * h2));
        let c5 = c4 / (b2 * gamma(1.5 - h1));
        let c6 = c5 / (gamma(h2 - 0.5) * gamma(1.5 - h2));
        Ok(Self { c, c1, c2, c3, c4, c5, c6 })
    }

    /// The chain as it is usually printed.
    pub fn printed(c: f64, constants: &DerivedConstants) -> Result<Self> {
        check_c(c)?;
        let (h1, h2, b2) = (constants.h1, constants.h2, constants.beta_h2);
        let c1 = c * (2.0 - 2.0 * h1);
        let c2 = c1 * b2 * gamma(1.5 - h2);
        let c3 = (1.5 - h1) * beta(h1 - 0.5, 3.0 - 2.0 * h1) / (c2 * gamma(h1 - 0.5));
        let c4 = c3 * (2.0 - 2.0 * h2) / (gamma(h2 - 0.5) * gamma(1.5 - h2));
        let c5 = c4 / (b2 * gamma(1.5 - h1));
        let c6 = c5 * gamma(h1 - 0.5) / gamma(1.5 - h1);
        Ok(Self { c, c1, c2, c3, c4, c5, c6 })
    }
}

/// Printed chain for C (see [`ConstantChain::printed`]).
pub fn constant_chain(c: f64, constants: &DerivedConstants) -> Result<ConstantChain> {
    ConstantChain::printed(c, constants)
}

fn check_unit(v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("v must lie in (0, 1), got {v}")))
    }
}

/// Γ(α)·I^α_{1−}(t^{a}(1−t)^{b})(v), α = H1 − ½, graded toward v (kernel
/// singularity, with t^a singular at distance v) and toward 1.
fn right_integral(h1: f64, a: f64, b: f64, v: f64) -> f64 {
    let alpha = h1 - 0.5;
    let len = 1.0 - v;
    let near = EndGrading::new(alpha - 1.0, crate::numerics::quadrature::depth_for(v / len) + 6);
    let far = EndGrading::new(b, END_DEPTH);
    let mut acc = 0.0;
    for nd in pair_rule(ORDER, Some(near), Some(far)).iter() {
        let off = len * nd.from_left;
        let rest = len * nd.from_right;
        let t = if nd.from_left <= 0.5 { v + off } else { 1.0 - rest };
        acc += nd.weight * off.powf(alpha - 1.0) * t.powf(a) * rest.powf(b);
    }
    acc * len
}

/// h0(v) for the equation C·(K1 h)(u) = u^{½−H1}.
pub fn h0(v: f64, constants: &DerivedConstants, c: f64) -> Result<f64> {
    check_unit(v)?;
    let chain = ConstantChain::new(c, constants)?;
    Ok(h0_with(v, constants, chain.c6))
}

fn h0_with(v: f64, constants: &DerivedConstants, c6: f64) -> f64 {
    let (h1, h2) = (constants.h1, constants.h2);
    c6 * v.powf(0.5 - h1) * right_integral(h1, h1 - h2, 0.5 - h2, v) / gamma(h1 - 0.5)
}

/// The printed form c6·v^{H1−½}·I^{H1−½}_{1−}(t^{H1−H2}(1−t)^{½−H1})(v) with
/// the printed chain.
pub fn h0_printed(v: f64, constants: &DerivedConstants, c: f64) -> Result<f64> {
    check_unit(v)?;
    let chain = ConstantChain::printed(c, constants)?;
    let (h1, h2) = (constants.h1, constants.h2);
    Ok(chain.c6 * v.powf(h1 - 0.5) * right_integral(h1, h1 - h2, 0.5 - h1, v) / gamma(h1 - 0.5))
}

/// C for which h0 is the limit of h_μ: K1 h0 = σ²γ² u^{½−H1}.
pub fn limit_constant(constants: &DerivedConstants) -> f64 {
    1.0 / (constants.sigma * constants.sigma * constants.gamma_sq())
}

/// h0 with C = 1/(σ²γ²).
pub fn h0_for_consistency(v: f64, constants: &DerivedConstants) -> Result<f64> {
    h0(v, constants, limit_constant(constants))
}

fn moment_marks(constants: &DerivedConstants) -> [Mark; 2] {
    let (h1, h2) = (constants.h1, constants.h2);
    // h0(v) ~ v^{min(0, 2H1−H2−½)+½−H1} at 0 and ~ (1−v)^{H1−H2} at 1
    let at_zero = (2.0 * h1 - h2 - 0.5).min(0.0) + 1.0 - 2.0 * h1;
    [Mark::new(0.0, at_zero, END_DEPTH), Mark::new(1.0, h1 - h2, END_DEPTH)]
}

fn h0_moment_with(constants: &DerivedConstants, c6: f64, order: usize) -> Result<f64> {
    let rule = marked_rule(0.0, 1.0, order, &moment_marks(constants))?;
    let e = 0.5 - constants.h1;
    Ok(rule.integrate(|u| h0_with(u, constants, c6) * u.powf(e)))
}

/// A quadrature value with the difference to a higher-order rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// ∫_0^1 h0(u) u^{½−H1} du for the equation C·K1 h0 = u^{½−H1}.
pub fn h0_moment(constants: &DerivedConstants, c: f64) -> Result<Estimate> {
    constants.hurst().require_solver_admissible()?;
    let c6 = ConstantChain::new(c, constants)?.c6;
    let value = h0_moment_with(constants, c6, ORDER)?;
    let check = h0_moment_with(constants, c6, CHECK_ORDER)?;
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::accuracy(format!("h0 moment is not a positive number: {value}")));
    }
    Ok(Estimate {
        value: check,
        error: (check - value).abs(),
    })
}

/// The limit functional 1/∫_0^1 h0(u) u^{½−H1} du with h0 the limit of h_μ.
pub fn asymptotic_variance(constants: &DerivedConstants) -> Result<Estimate> {
    let m = h0_moment(constants, limit_constant(constants))?;
    Ok(Estimate {
        value: 1.0 / m.value,
        error: m.error / (m.value * m.value),
    })
}

/// lim T^{2−2H2}·Var θ̂ = 1/(d²σ²γ²∫h0u^{½−H1}): the limit of the exact
/// variance 1/(d²⟨N⟩(T)), which differs from [`asymptotic_variance`] by the
/// constant factor 1/(d²σ²γ²).
pub fn scaled_variance_limit(constants: &DerivedConstants) -> Result<Estimate> {
    let a = asymptotic_variance(constants)?;
    let f = 1.0 / (constants.drift_norm.powi(2) * constants.sigma.powi(2) * constants.gamma_sq());
    Ok(Estimate {
        value: a.value * f,
        error: a.error * f,
    })
}

/// (K1 h)(u) = ∫_0^1 k1(s,u) h(s) ds for h behaving like s^{at_zero} at 0 and
/// (1−s)^{at_one} at 1.
pub(crate) fn apply_k1<F: Fn(f64) -> f64>(ctx: &KernelContext, h: F, u: f64, at_zero: f64, at_one: f64) -> f64 {
    let c = ctx.constants();
    let diag = 2.0 * c.gap() - 1.0;
    let w = c.h1 - 0.5;
    // k1(s,u) ~ s^{½−H1} at 0
    let left = pair_rule(ORDER, Some(EndGrading::new(at_zero - w, END_DEPTH)), Some(EndGrading::new(diag, END_DEPTH)));
    let right = pair_rule(ORDER, Some(EndGrading::new(diag, END_DEPTH)), Some(EndGrading::new(at_one, END_DEPTH)));
    let mut acc = 0.0;
    for nd in left.iter() {
        let gap = u * nd.from_right;
        let s = if nd.from_left <= 0.5 { u * nd.from_left } else { u - gap };
        acc += nd.weight * u * (s * u).powf(w) * ctx.k_split(s, u, gap) * h(s);
    }
    let len = 1.0 - u;
    for nd in right.iter() {
        let gap = len * nd.from_left;
        let s = if nd.from_left <= 0.5 { u + gap } else { 1.0 - len * nd.from_right };
        acc += nd.weight * len * (s * u).powf(w) * ctx.k_split(u, s, gap) * h(s);
    }
    acc
}

/// Check of the first-kind equation at the grid nodes in [0.1, 0.9].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstKindReport {
    /// (u, (K1 h0)(u)/(γ² u^{½−H1})) with h0 at C = 1/γ²
    pub ratios: Vec<(f64, f64)>,
    /// max |ratio − 1|
    pub max_relative_residual: f64,
    /// max ratio / min ratio − 1 (independent of the C convention)
    pub spread: f64,
}

pub fn verify_first_kind(ctx: &KernelContext, grid: &QuadratureGrid) -> Result<FirstKindReport> {
    use rayon::prelude::*;
    let constants = *ctx.constants();
    constants.hurst().require_solver_admissible()?;
    let g2 = constants.gamma_sq();
    let c6 = ConstantChain::new(1.0 / g2, &constants)?.c6;
    let (h1, h2) = (constants.h1, constants.h2);
    let at_zero = (2.0 * h1 - h2 - 0.5).min(0.0) + 0.5 - h1;
    let points: Vec<f64> = grid.nodes.iter().copied().filter(|&u| (0.1..=0.9).contains(&u)).collect();
    if points.is_empty() {
        return Err(Error::domain("grid has no nodes in [0.1, 0.9]"));
    }
    let ratios: Vec<(f64, f64)> = points
        .par_iter()
        .map(|&u| {
            let v = apply_k1(ctx, |s| h0_with(s, &constants, c6), u, at_zero, h1 - h2);
            (u, v / (g2 * u.powf(0.5 - h1)))
        })
        .collect();
    let max_relative_residual = ratios.iter().map(|r| (r.1 - 1.0).abs()).fold(0.0, f64::max);
    let hi = ratios.iter().map(|r| r.1).fold(f64::MIN, f64::max);
    let lo = ratios.iter().map(|r| r.1).fold(f64::MAX, f64::min);
    if !(lo > 0.0 && hi.is_finite()) {
        return Err(Error::accuracy("first-kind check produced non-positive values"));
    }
    Ok(FirstKindReport {
        ratios,
        max_relative_residual,
        spread: hi / lo - 1.0,
    })
}

/// h_μ against the closed-form limit h0 (L²(0,1) norms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitComparison {
    pub horizon: f64,
    pub mu: f64,
    /// ∫h_μ u^{½−H1}
    pub h_mu_moment: f64,
    /// ∫h0 u^{½−H1}
    pub h0_moment: f64,
    /// (∫h0u^{½−H1} − ∫h_μu^{½−H1}) / ∫h0u^{½−H1}
    pub moment_gap: f64,
    /// ‖h_μ − h0‖
    pub distance: f64,
    /// ‖h0‖
    pub h0_norm: f64,
}

pub fn compare_with_limit(sol: &FredholmSolution, constants: &DerivedConstants) -> Result<LimitComparison> {
    use rayon::prelude::*;
    let c6 = ConstantChain::new(limit_constant(constants), constants)?.c6;
    let limit = h0_moment(constants, limit_constant(constants))?.value;
    let (h1, h2) = (constants.h1, constants.h2);
    let marks = [
        Mark::new(0.0, (2.0 * h1 - h2 - 0.5).min(0.0) + 0.5 - h1, 30),
        Mark::new(1.0, h1 - h2, 30),
    ];
    let rule = marked_rule(0.0, 1.0, ORDER, &marks)?;
    let terms = rule
        .nodes
        .par_iter()
        .zip(&rule.weights)
        .map(|(&u, &w)| {
            let a = sol.h_mu(u)?;
            let b = h0_with(u, constants, c6);
            Ok((w * (a - b) * (a - b), w * b * b))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (d2, n2) = terms.iter().fold((0.0, 0.0), |acc, t| (acc.0 + t.0, acc.1 + t.1));
    let m = sol.h_mu_moment();
    Ok(LimitComparison {
        horizon: sol.horizon,
        mu: sol.mu,
        h_mu_moment: m,
        h0_moment: limit,
        moment_gap: (limit - m) / limit,
        distance: d2.sqrt(),
        h0_norm: n2.sqrt(),
    })
}
