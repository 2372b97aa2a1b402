//! Gauss–Jacobi rules, graded composite rules and adaptive singular integration.

use super::special::beta;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Gauss–Jacobi rule for ∫_a^b f(x) (x−a)^p (b−x)^q dx.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub domain: (f64, f64),
    pub endpoint_exponents: (f64, f64),
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ w_i f(x_i); the weight function is implied by the rule.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// ∫ (x−a)^p (b−x)^q dx over the rule's domain.
    pub fn weight_mass(&self) -> f64 {
        let (a, b) = self.domain;
        let (p, q) = self.endpoint_exponents;
        (b - a).powf(p + q + 1.0) * beta(p + 1.0, q + 1.0)
    }
}

/// Eigenvalues and squared first eigenvector components of a symmetric
/// tridiagonal matrix by implicit QL, tracking only the first row of the
/// eigenvector matrix (O(n²) work).
fn tridiagonal_first_components(diag: &mut [f64], off: &mut [f64], first: &mut [f64]) -> Result<()> {
    let n = diag.len();
    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > 80 {
                return Err(Error::accuracy("implicit QL did not converge"));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let fz = first[i + 1];
                first[i + 1] = s * first[i] + c * fz;
                first[i] = c * first[i] - s * fz;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Gauss–Jacobi rule for ∫_a^b f(x)(x−a)^p(b−x)^q dx, exact for polynomial f
/// of degree ≤ 2n−1.
pub fn jacobi_rule(n: usize, p: f64, q: f64, a: f64, b: f64) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::domain("jacobi_rule needs n >= 1"));
    }
    if !(p > -1.0) || !(q > -1.0) {
        return Err(Error::domain(format!(
            "non-integrable endpoint exponents p={p}, q={q} (need > -1)"
        )));
    }
    if !(b > a) {
        return Err(Error::domain(format!("empty interval ({a}, {b})")));
    }
    // Reference interval [-1,1] with weight (1-x)^alpha (1+x)^beta.
    let alpha = q;
    let beta_ = p;
    let ab = alpha + beta_;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    diag[0] = (beta_ - alpha) / (ab + 2.0);
    for (k, d) in diag.iter_mut().enumerate().skip(1) {
        let kk = k as f64;
        let t = 2.0 * kk + ab;
        *d = (beta_ * beta_ - alpha * alpha) / (t * (t + 2.0));
    }
    for k in 1..n {
        let kk = k as f64;
        let t = 2.0 * kk + ab;
        let b2 = if k == 1 {
            4.0 * (1.0 + alpha) * (1.0 + beta_) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            4.0 * kk * (kk + alpha) * (kk + beta_) * (kk + ab) / (t * t * (t + 1.0) * (t - 1.0))
        };
        off[k - 1] = b2.sqrt();
    }
    let mut first = vec![0.0; n];
    first[0] = 1.0;
    tridiagonal_first_components(&mut diag, &mut off, &mut first)?;
    let mu0 = 2f64.powf(ab + 1.0) * beta(alpha + 1.0, beta_ + 1.0);
    let half = 0.5 * (b - a);
    let scale = half.powf(p + q + 1.0);
    let mut pairs: Vec<(f64, f64)> = diag
        .iter()
        .zip(&first)
        .map(|(&t, &v)| (a + half * (t + 1.0), mu0 * v * v * scale))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|x| x.0).collect(),
        weights: pairs.iter().map(|x| x.1).collect(),
        domain: (a, b),
        endpoint_exponents: (p, q),
    })
}

/// Gauss–Legendre rule on [a, b].
pub fn legendre_rule(n: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    jacobi_rule(n, 0.0, 0.0, a, b)
}

type RuleKey = (usize, u64, u64);

fn rule_cache() -> &'static Mutex<HashMap<RuleKey, Arc<QuadratureRule>>> {
    static CACHE: OnceLock<Mutex<HashMap<RuleKey, Arc<QuadratureRule>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Memoized Gauss–Jacobi rule on [0, 1].
pub fn unit_jacobi(n: usize, p: f64, q: f64) -> Result<Arc<QuadratureRule>> {
    let key = (n, p.to_bits(), q.to_bits());
    if let Some(r) = rule_cache().lock().expect("rule cache poisoned").get(&key) {
        return Ok(r.clone());
    }
    let rule = Arc::new(jacobi_rule(n, p, q, 0.0, 1.0)?);
    rule_cache()
        .lock()
        .expect("rule cache poisoned")
        .insert(key, rule.clone());
    Ok(rule)
}

/// Nodes and weights for ∫ f(x) dx where f itself carries any endpoint
/// singularity; singular panels use product weights w_i/|x_i − x0|^e.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Endpoint behaviour for [`graded_unit_rule`]: integrand ~ |x − end|^exponent,
/// with `depth` geometric halvings toward the end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndGrading {
    pub exponent: f64,
    pub depth: usize,
}

impl EndGrading {
    pub fn new(exponent: f64, depth: usize) -> Self {
        Self { exponent, depth }
    }
}

impl CompositeRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(x);
        }
        acc
    }

    /// ∫_a^b f for a rule built on [0, 1].
    pub fn integrate_on<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let h = b - a;
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(a + h * x);
        }
        acc * h
    }

    /// ∫_a^b f for a rule built on [0, 1], mirrored so the rule's left end maps to b.
    pub fn integrate_on_mirrored<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let h = b - a;
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(b - h * x);
        }
        acc * h
    }

    /// Append this unit rule mapped affinely onto [a, b] (left end of the unit
    /// rule to a) or mirrored (left end to b).
    pub fn append_mapped(&self, out: &mut CompositeRule, a: f64, b: f64, mirrored: bool) {
        let h = b - a;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let y = if mirrored { b - h * x } else { a + h * x };
            out.nodes.push(y);
            out.weights.push(w * h);
        }
    }
}

fn push_panel(out: &mut CompositeRule, rule: &QuadratureRule, a: f64, b: f64) {
    let h = b - a;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        out.nodes.push(a + h * x);
        out.weights.push(w * h);
    }
}

/// Geometric grading toward 0 on [0, 1]: panels [2^{-k-1}, 2^{-k}],
/// innermost [0, 2^{-depth}] by a product Gauss–Jacobi rule for x^exponent.
fn left_graded(order: usize, grading: EndGrading) -> Result<CompositeRule> {
    let leg = unit_jacobi(order, 0.0, 0.0)?;
    let jac = unit_jacobi(order, grading.exponent, 0.0)?;
    let mut out = CompositeRule::default();
    let inner = 0.5f64.powi(grading.depth as i32);
    for (&x, &w) in jac.nodes.iter().zip(&jac.weights) {
        out.nodes.push(inner * x);
        out.weights.push(w * inner / x.powf(grading.exponent));
    }
    for k in (0..grading.depth).rev() {
        let hi = 0.5f64.powi(k as i32);
        push_panel(&mut out, &leg, 0.5 * hi, hi);
    }
    Ok(out)
}

fn template_cache() -> &'static Mutex<HashMap<(usize, u64, usize, u64, usize), Arc<CompositeRule>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64, usize, u64, usize), Arc<CompositeRule>>>> =
        OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Composite rule on [0, 1] for integrands with power-type behaviour at either
/// end. With both ends graded the interval is split at ½. Memoized.
pub fn graded_unit_rule(
    order: usize,
    left: Option<EndGrading>,
    right: Option<EndGrading>,
) -> Result<Arc<CompositeRule>> {
    let enc = |g: Option<EndGrading>| match g {
        Some(g) => (g.exponent.to_bits(), g.depth + 1),
        None => (0, 0),
    };
    let (le, ld) = enc(left);
    let (re, rd) = enc(right);
    let key = (order, le, ld, re, rd);
    if let Some(r) = template_cache().lock().expect("template cache poisoned").get(&key) {
        return Ok(r.clone());
    }
    let rule = match (left, right) {
        (None, None) => {
            let leg = unit_jacobi(order, 0.0, 0.0)?;
            CompositeRule {
                nodes: leg.nodes.clone(),
                weights: leg.weights.clone(),
            }
        }
        (Some(l), None) => left_graded(order, l)?,
        (None, Some(r)) => {
            let base = left_graded(order, r)?;
            let mut out = CompositeRule::default();
            for (&x, &w) in base.nodes.iter().zip(&base.weights).rev() {
                out.nodes.push(1.0 - x);
                out.weights.push(w);
            }
            out
        }
        (Some(l), Some(r)) => {
            let lhs = left_graded(order, l)?;
            let rhs = left_graded(order, r)?;
            let mut out = CompositeRule::default();
            for (&x, &w) in lhs.nodes.iter().zip(&lhs.weights) {
                out.nodes.push(0.5 * x);
                out.weights.push(0.5 * w);
            }
            for (&x, &w) in rhs.nodes.iter().zip(&rhs.weights).rev() {
                out.nodes.push(1.0 - 0.5 * x);
                out.weights.push(0.5 * w);
            }
            out
        }
    };
    let rule = Arc::new(rule);
    template_cache()
        .lock()
        .expect("template cache poisoned")
        .insert(key, rule.clone());
    Ok(rule)
}

/// A point where the integrand behaves like |x − at|^exponent (times a
/// function that is smooth on each side), refined by `depth` halvings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mark {
    pub at: f64,
    pub exponent: f64,
    pub depth: usize,
}

impl Mark {
    pub fn new(at: f64, exponent: f64, depth: usize) -> Self {
        Self { at, exponent, depth }
    }
}

/// Composite rule on [a, b] graded toward every mark inside [a, b]; the
/// interval is split at interior marks. Marks outside [a, b] are ignored.
pub fn marked_rule(a: f64, b: f64, order: usize, marks: &[Mark]) -> Result<CompositeRule> {
    if !(b > a) {
        return Ok(CompositeRule::default());
    }
    let mut inside: Vec<Mark> = marks
        .iter()
        .copied()
        .filter(|m| m.at >= a && m.at <= b)
        .collect();
    inside.sort_by(|x, y| x.at.total_cmp(&y.at));
    inside.dedup_by(|x, y| x.at == y.at);
    let mut cuts = vec![a];
    cuts.extend(inside.iter().filter(|m| m.at > a && m.at < b).map(|m| m.at));
    cuts.push(b);
    let find = |x: f64| inside.iter().find(|m| m.at == x).copied();
    let mut out = CompositeRule::default();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        // keep the innermost panel well above the local spacing of doubles
        let scale = lo.abs().max(hi.abs());
        let resolvable = ((hi - lo) / (1e5 * f64::EPSILON * scale)).log2().floor().max(1.0) as usize;
        let left = find(lo).map(|m| EndGrading::new(m.exponent, m.depth.min(resolvable)));
        let right = find(hi).map(|m| EndGrading::new(m.exponent, m.depth.min(resolvable)));
        let unit = graded_unit_rule(order, left, right)?;
        unit.append_mapped(&mut out, lo, hi, false);
    }
    Ok(out)
}

/// Halvings needed to refine a unit interval down to `scale`/16.
pub fn depth_for(scale: f64) -> usize {
    if !(scale > 0.0) {
        return 60;
    }
    let d = (1.0 / scale).log2().ceil() + 4.0;
    d.clamp(2.0, 60.0) as usize
}

/// Refinement controls for [`singular_integral`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub rtol: f64,
    pub cap: usize,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            cap: 4096,
        }
    }
}

/// Result of an adaptive integral; `converged == false` is the accuracy warning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub nodes_used: usize,
    pub converged: bool,
    pub change: f64,
}

/// ∫_a^b f(x)(x−a)^p(b−x)^q dx by Gauss–Jacobi rules of size n, 2n, 4n, …
/// until successive values agree to `refine.rtol` or the size exceeds `refine.cap`.
pub fn singular_integral<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    p: f64,
    q: f64,
    n: usize,
    refine: Refinement,
) -> Result<Integral> {
    if a == b {
        return Ok(Integral {
            value: 0.0,
            nodes_used: 0,
            converged: true,
            change: 0.0,
        });
    }
    let mut n = n.max(1);
    let mut prev = jacobi_rule(n, p, q, a, b)?.integrate(&f);
    loop {
        let next_n = 2 * n;
        if next_n > refine.cap {
            return Ok(Integral {
                value: prev,
                nodes_used: n,
                converged: false,
                change: f64::NAN,
            });
        }
        let value = jacobi_rule(next_n, p, q, a, b)?.integrate(&f);
        let change = (value - prev).abs();
        if change <= refine.rtol * value.abs() || change < 1e-300 {
            return Ok(Integral {
                value,
                nodes_used: next_n,
                converged: true,
                change,
            });
        }
        prev = value;
        n = next_n;
    }
}
