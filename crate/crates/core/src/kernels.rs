//! Deterministic kernels of the mixed model.
//!
//! Every two-variable kernel here is homogeneous, so it reduces to a profile
//! of the ratio ρ = min/max ∈ [0, 1]. The profiles are integrals over (0, 1)
//! with known endpoint exponents; they are tabulated once per Hurst pair on
//! geometric panels (fast path) and also exposed as direct graded quadratures
//! (used to build the tables and to cross-check them).

use crate::error::{Error, Result};
use crate::model::{alpha_h, beta_h, DerivedConstants};
use crate::numerics::interp::{GeometricTable, Tail};
use crate::numerics::quadrature::{
    depth_for, graded_unit_rule, marked_rule, singular_integral, EndGrading, Mark, Refinement,
};
use crate::numerics::special::beta;
use std::sync::OnceLock;

/// Default panel order of the graded rules.
pub const DEFAULT_QUAD_N: usize = 12;

/// Separation below which `k` and `k1` are evaluated at the capped distance
/// 1e-8·max(s, u) instead of on the (infinite) diagonal.
pub const DIAGONAL_CAP: f64 = 1e-8;

const CHEB_POINTS: usize = 16;

/// ∫_0^len f, with panels graded toward 0 where f ~ x^exponent.
fn toward_zero<F: FnMut(f64) -> f64>(order: usize, exponent: f64, depth: usize, len: f64, f: F) -> f64 {
    graded_unit_rule(order, Some(EndGrading::new(exponent, depth)), None)
        .expect("graded rule with exponent > -1")
        .integrate_on(0.0, len, f)
}

/// Exponents and scalars shared by all profiles.
#[derive(Debug, Clone, Copy)]
struct Shape {
    h1: f64,
    h2: f64,
    gap: f64,
    beta2: f64,
    order: usize,
}

impl Shape {
    fn near_depth(rho: f64, omr: f64) -> usize {
        // the integrand factor (ρ + (1−ρ)z)^e is singular at z = −ρ/(1−ρ)
        depth_for(2.0 * rho / omr)
    }

    /// g0(ρ) = ∫_0^1 (1−z)^{½−H1} z^{H2−3/2} (ρ + (1−ρ)z)^{H2−H1} dz
    fn g0_direct(&self, rho: f64, omr: f64) -> f64 {
        let (h1, h2, a) = (self.h1, self.h2, self.gap);
        if omr <= 0.0 {
            return beta(h2 - 0.5, 1.5 - h1);
        }
        if rho <= 0.0 {
            return beta(2.0 * h2 - h1 - 0.5, 1.5 - h1);
        }
        let depth = Self::near_depth(rho, omr);
        let left = toward_zero(self.order, h2 - 1.5, depth, 0.5, |z| {
            (1.0 - z).powf(0.5 - h1) * z.powf(h2 - 1.5) * (rho + omr * z).powf(a)
        });
        let right = toward_zero(self.order, 0.5 - h1, 2, 0.5, |x| {
            let z = 1.0 - x;
            x.powf(0.5 - h1) * z.powf(h2 - 1.5) * (rho + omr * z).powf(a)
        });
        left + right
    }

    /// G(ρ) = ∫_0^1 (1−z)^{½−H1} z^{H2−3/2} (ρ+(1−ρ)z)^{H2−H1−1} (ρ+2(1−ρ)z) dz
    fn g_direct(&self, rho: f64, omr: f64) -> f64 {
        let (h1, h2, a) = (self.h1, self.h2, self.gap);
        if omr <= 0.0 {
            return beta(h2 - 0.5, 1.5 - h1);
        }
        if rho <= 0.0 {
            return 2.0 * beta(2.0 * h2 - h1 - 0.5, 1.5 - h1);
        }
        let depth = Self::near_depth(rho, omr);
        let body = |z: f64| {
            let r = rho + omr * z;
            r.powf(a - 1.0) * (rho + 2.0 * omr * z)
        };
        let left = toward_zero(self.order, h2 - 1.5, depth, 0.5, |z| {
            (1.0 - z).powf(0.5 - h1) * z.powf(h2 - 1.5) * body(z)
        });
        let right = toward_zero(self.order, 0.5 - h1, 2, 0.5, |x| {
            let z = 1.0 - x;
            x.powf(0.5 - h1) * z.powf(h2 - 1.5) * body(z)
        });
        left + right
    }

    /// g1(ρ) = ∫_0^1 (1−z)^{½−H1} z^{H2−½} (ρ + (1−ρ)z)^{H2−H1−1} dz
    fn g1_direct(&self, rho: f64, omr: f64) -> f64 {
        let (h1, h2, a) = (self.h1, self.h2, self.gap);
        if omr <= 0.0 {
            return beta(h2 + 0.5, 1.5 - h1);
        }
        if rho <= 0.0 {
            return beta(h2 + a - 0.5, 1.5 - h1);
        }
        let depth = Self::near_depth(rho, omr);
        let left = toward_zero(self.order, h2 - 0.5, depth, 0.5, |z| {
            (1.0 - z).powf(0.5 - h1) * z.powf(h2 - 0.5) * (rho + omr * z).powf(a - 1.0)
        });
        let right = toward_zero(self.order, 0.5 - h1, 2, 0.5, |x| {
            let z = 1.0 - x;
            x.powf(0.5 - h1) * z.powf(h2 - 0.5) * (rho + omr * z).powf(a - 1.0)
        });
        left + right
    }

    /// ∫_0^1 w^{1−2H2} (1−w)^e (1−ρw)^e p(w) p(ρw) dw for a tabulated profile p.
    /// With e = H2−H1−1 and p = G this is the profile κ of k; with e = H2−H1 and
    /// p = g0 it is the profile of the covariance of X2.
    fn pair_profile(&self, rho: f64, omr: f64, e: f64, p: &GeometricTable) -> f64 {
        let h2 = self.h2;
        let left = toward_zero(self.order, 1.0 - 2.0 * h2, 56, 0.5, |w| {
            w.powf(1.0 - 2.0 * h2) * (1.0 - w).powf(e) * (1.0 - rho * w).powf(e) * p.eval(w) * p.eval(rho * w)
        });
        let depth = depth_for(2.0 * omr);
        let right = toward_zero(self.order, e, depth, 0.5, |x| {
            let w = 1.0 - x;
            w.powf(1.0 - 2.0 * h2) * x.powf(e) * (omr + rho * x).powf(e) * p.eval(w) * p.eval(rho * w)
        });
        left + right
    }
}

struct ShapeTables {
    g0: GeometricTable,
    g: GeometricTable,
}

/// A profile tabulated in ρ on (0, ½] and in 1 − ρ on (0, ½].
struct SplitTable {
    near_zero: GeometricTable,
    near_one: GeometricTable,
}

impl SplitTable {
    fn eval(&self, rho: f64, omr: f64) -> f64 {
        if omr <= 0.5 {
            self.near_one.eval(omr)
        } else {
            self.near_zero.eval(rho)
        }
    }
}

/// Kernel evaluator for one Hurst pair. Tables are built on first use and
/// shared; the context is `Sync` and cheap to query afterwards.
pub struct KernelContext {
    constants: DerivedConstants,
    quad_n: usize,
    rtol: f64,
    shape: Shape,
    shapes: OnceLock<ShapeTables>,
    kappa: OnceLock<SplitTable>,
    cov: OnceLock<SplitTable>,
}

impl std::fmt::Debug for KernelContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelContext")
            .field("h1", &self.constants.h1)
            .field("h2", &self.constants.h2)
            .field("quad_n", &self.quad_n)
            .field("rtol", &self.rtol)
            .finish()
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive and finite, got {x}")))
    }
}

fn check_ordered(t: f64, s: f64) -> Result<()> {
    check_positive("s", s)?;
    check_positive("t", t)?;
    if s > t {
        return Err(Error::domain(format!("need s <= t, got t={t}, s={s}")));
    }
    Ok(())
}

impl KernelContext {
    pub fn new(constants: DerivedConstants) -> Self {
        Self::with_quadrature(constants, DEFAULT_QUAD_N, 1e-10).expect("default quadrature is valid")
    }

    /// `quad_n` is the Gauss order used on every panel of the graded rules.
    pub fn with_quadrature(constants: DerivedConstants, quad_n: usize, rtol: f64) -> Result<Self> {
        if quad_n < 8 {
            return Err(Error::domain(format!("quad_n must be at least 8, got {quad_n}")));
        }
        if !(rtol > 0.0) {
            return Err(Error::domain("rtol must be positive"));
        }
        let shape = Shape {
            h1: constants.h1,
            h2: constants.h2,
            gap: constants.h2 - constants.h1,
            beta2: constants.beta_h2,
            order: quad_n,
        };
        Ok(Self {
            constants,
            quad_n,
            rtol,
            shape,
            shapes: OnceLock::new(),
            kappa: OnceLock::new(),
            cov: OnceLock::new(),
        })
    }

    pub fn constants(&self) -> &DerivedConstants {
        &self.constants
    }

    pub fn quad_n(&self) -> usize {
        self.quad_n
    }

    pub fn rtol(&self) -> f64 {
        self.rtol
    }

    fn shapes(&self) -> &ShapeTables {
        self.shapes.get_or_init(|| {
            let sh = self.shape;
            let edge_exp = 2.0 * sh.h2 - sh.h1 - 0.5;
            let g0 = GeometricTable::build(
                1.0,
                54,
                CHEB_POINTS,
                Tail::ToValue {
                    at_zero: sh.g0_direct(0.0, 1.0),
                    exponent: edge_exp,
                },
                |r| sh.g0_direct(r, 1.0 - r),
            );
            let g = GeometricTable::build(
                1.0,
                54,
                CHEB_POINTS,
                Tail::ToValue {
                    at_zero: sh.g_direct(0.0, 1.0),
                    exponent: edge_exp,
                },
                |r| sh.g_direct(r, 1.0 - r),
            );
            ShapeTables { g0, g }
        })
    }

    fn split_table(&self, e: f64, profile: &GeometricTable, singular_at_one: bool) -> SplitTable {
        let sh = self.shape;
        let near_zero = GeometricTable::build(
            0.5,
            50,
            CHEB_POINTS,
            Tail::ToValue {
                at_zero: sh.pair_profile(0.0, 1.0, e, profile),
                exponent: sh.h2 - 0.5,
            },
            |r| sh.pair_profile(r, 1.0 - r, e, profile),
        );
        let tail = if singular_at_one {
            // κ(ρ) ≈ G(1)²·B(a, 1−2a)·(1−ρ)^{2a−1} + const
            let g1 = profile.eval(1.0);
            Tail::Singular {
                coef: g1 * g1 * beta(sh.gap, 1.0 - 2.0 * sh.gap),
                exponent: 2.0 * sh.gap - 1.0,
            }
        } else {
            Tail::ToValue {
                at_zero: sh.pair_profile(1.0, 0.0, e, profile),
                exponent: 1.0,
            }
        };
        let near_one = GeometricTable::build(0.5, 45, CHEB_POINTS, tail, |x| {
            sh.pair_profile(1.0 - x, x, e, profile)
        });
        SplitTable { near_zero, near_one }
    }

    fn kappa(&self) -> &SplitTable {
        self.kappa.get_or_init(|| {
            let g = &self.shapes().g;
            self.split_table(self.shape.gap - 1.0, g, true)
        })
    }

    fn cov_profile(&self) -> &SplitTable {
        self.cov.get_or_init(|| {
            let g0 = &self.shapes().g0;
            self.split_table(self.shape.gap, g0, false)
        })
    }

    /// Build every table now (otherwise they are built on first use).
    pub fn warm_up(&self) {
        self.kappa();
        self.cov_profile();
    }

    /// K_{H1,H2}(t, s) = β_{H2} s^{½−H2} ∫_s^t (t−u)^{½−H1} u^{H2−H1} (u−s)^{H2−3/2} du.
    pub fn k12(&self, t: f64, s: f64) -> Result<f64> {
        check_ordered(t, s)?;
        if s == t {
            return Ok(0.0);
        }
        let sh = &self.shape;
        let rho = s / t;
        Ok(sh.beta2 * s.powf(0.5 - sh.h2) * ((t - s) * t).powf(sh.gap) * self.shapes().g0.eval(rho))
    }

    /// ∂_t K_{H1,H2}(t, s) for 0 < s < t.
    pub fn k12_dt(&self, t: f64, s: f64) -> Result<f64> {
        check_ordered(t, s)?;
        if s == t {
            return Err(Error::domain("the t-derivative is singular on the diagonal"));
        }
        Ok(self.k12_dt_gap(t, s, t - s))
    }

    fn k12_dt_gap(&self, t: f64, s: f64, gap: f64) -> f64 {
        let sh = &self.shape;
        sh.gap
            * sh.beta2
            * s.powf(0.5 - sh.h2)
            * gap.powf(sh.gap - 1.0)
            * t.powf(sh.gap)
            * self.shapes().g.eval(s / t)
    }

    /// k(s,u) = ∫_0^{s∧u} ∂_sK(s,v) ∂_uK(u,v) dv.
    pub fn k(&self, s: f64, u: f64) -> Result<f64> {
        check_positive("s", s)?;
        check_positive("u", u)?;
        let (m, big) = if s <= u { (s, u) } else { (u, s) };
        let gap = (big - m).max(DIAGONAL_CAP * big);
        Ok(self.k_split(m.min(big - gap), big, gap))
    }

    /// k1(s,u) = (su)^{H1−½} k(s,u).
    pub fn k1(&self, s: f64, u: f64) -> Result<f64> {
        let k = self.k(s, u)?;
        Ok((s * u).powf(self.shape.h1 - 0.5) * k)
    }

    /// k(m, big) with the separation big − m supplied exactly; m < big.
    pub(crate) fn k_split(&self, m: f64, big: f64, gap: f64) -> f64 {
        let sh = &self.shape;
        let c = sh.gap * sh.beta2;
        let rho = m / big;
        let omr = gap / big;
        c * c * m.powf(1.0 - 2.0 * sh.h1) * big.powf(2.0 * sh.gap - 1.0) * self.kappa().eval(rho, omr)
    }

    /// E[X2(t)X2(s)] = ∫_0^{t∧s} K(t,u) K(s,u) du for X2 = ∫ l_{H1} dB^{H2}.
    pub fn covariance_x2(&self, t: f64, s: f64) -> Result<f64> {
        if !(t >= 0.0 && s >= 0.0 && t.is_finite() && s.is_finite()) {
            return Err(Error::domain(format!("times must be nonnegative, got {t}, {s}")));
        }
        let (m, big) = if s <= t { (s, t) } else { (t, s) };
        if m == 0.0 {
            return Ok(0.0);
        }
        let sh = &self.shape;
        let rho = m / big;
        let omr = (big - m) / big;
        Ok(big.powf(2.0 + 2.0 * sh.h2 - 4.0 * sh.h1)
            * rho.powf(2.0 - 2.0 * sh.h1)
            * sh.beta2
            * sh.beta2
            * self.cov_profile().eval(rho, omr))
    }

    /// The same covariance from the two-fold form
    /// α_{H2} ∫_0^t ∫_0^s l(t,u) l(s,v) |u−v|^{2H2−2} dv du with
    /// l(t,u) = (t−u)^{½−H1} u^{½−H1}. Slow; meant for cross-checks.
    pub fn covariance_x2_double(&self, t: f64, s: f64) -> Result<f64> {
        if !(t >= 0.0 && s >= 0.0) {
            return Err(Error::domain("times must be nonnegative"));
        }
        if t == 0.0 || s == 0.0 {
            return Ok(0.0);
        }
        let (h1, h2) = (self.shape.h1, self.shape.h2);
        let e = 0.5 - h1;
        let depth = 30;
        let order = self.quad_n;
        let inner = |u: f64| -> Result<f64> {
            let marks = [Mark::new(0.0, e, depth), Mark::new(s, e, depth), Mark::new(u, 2.0 * h2 - 2.0, depth)];
            let rule = marked_rule(0.0, s, order, &marks)?;
            Ok(rule.integrate(|v| ((s - v) * v).powf(e) * (u - v).abs().powf(2.0 * h2 - 2.0)))
        };
        let marks = [Mark::new(0.0, e, depth), Mark::new(t, e, depth), Mark::new(s, 0.0, depth)];
        let outer = marked_rule(0.0, t, order, &marks)?;
        let mut acc = 0.0;
        for (&u, &w) in outer.nodes.iter().zip(&outer.weights) {
            acc += w * ((t - u) * u).powf(e) * inner(u)?;
        }
        Ok(alpha_h(h2) * acc)
    }

    /// K12 by direct graded quadrature, bypassing the tables.
    pub fn k12_direct(&self, t: f64, s: f64) -> Result<f64> {
        check_ordered(t, s)?;
        if s == t {
            return Ok(0.0);
        }
        Ok(self.k12_direct_gap(t, s, t - s))
    }

    fn k12_direct_gap(&self, t: f64, s: f64, gap: f64) -> f64 {
        let sh = &self.shape;
        sh.beta2 * s.powf(0.5 - sh.h2) * (gap * t).powf(sh.gap) * sh.g0_direct(s / t, gap / t)
    }

    /// ∂_tK12 from the representation
    /// (H2−H1)[K/(t−s) + β_{H2} s^{½−H2} (t−s)^{−1} ∫_s^t (t−r)^{½−H1} r^{H2−H1−1} (r−s)^{H2−½} dr],
    /// by direct quadrature.
    pub fn k12_dt_direct(&self, t: f64, s: f64) -> Result<f64> {
        check_ordered(t, s)?;
        if s == t {
            return Err(Error::domain("the t-derivative is singular on the diagonal"));
        }
        Ok(self.k12_dt_direct_gap(t, s, t - s))
    }

    fn k12_dt_direct_gap(&self, t: f64, s: f64, gap: f64) -> f64 {
        let sh = &self.shape;
        let k = self.k12_direct_gap(t, s, gap);
        let second = sh.beta2 * s.powf(0.5 - sh.h2) * gap.powf(sh.gap) * t.powf(sh.gap - 1.0)
            * sh.g1_direct(s / t, gap / t);
        sh.gap * (k / gap + second)
    }

    /// k(s,u) by direct quadrature of the defining v-integral with both
    /// derivative factors computed directly. Slow; for cross-checks.
    pub fn k_direct(&self, s: f64, u: f64) -> Result<f64> {
        check_positive("s", s)?;
        check_positive("u", u)?;
        if s == u {
            return Err(Error::domain("k is infinite on the diagonal"));
        }
        let (m, big) = if s < u { (s, u) } else { (u, s) };
        let sh = self.shape;
        let sep = big - m;
        let left = toward_zero(self.quad_n, 1.0 - 2.0 * sh.h2, 45, 0.5 * m, |v| {
            self.k12_dt_direct_gap(m, v, m - v) * self.k12_dt_direct_gap(big, v, big - v)
        });
        let depth = depth_for(2.0 * sep / m).max(8);
        let right = toward_zero(self.quad_n, sh.gap - 1.0, depth, 0.5 * m, |d| {
            let v = m - d;
            self.k12_dt_direct_gap(m, v, d) * self.k12_dt_direct_gap(big, v, sep + d)
        });
        Ok(left + right)
    }

    /// ‖k1‖²_{L²([0,1]²)} = (H2−H1)³β_{H2}⁴/2 ·∫_0^1 ρ^{1−2H1} κ(ρ)² dρ; finite
    /// only when H2 − H1 > ¼.
    pub fn k1_norm_sq(&self) -> Result<f64> {
        self.constants.hurst().require_solver_admissible()?;
        let sh = self.shape;
        let kap = self.kappa();
        let lo = toward_zero(self.quad_n, 1.0 - 2.0 * sh.h1, 40, 0.5, |r| {
            let v = kap.eval(r, 1.0 - r);
            r.powf(1.0 - 2.0 * sh.h1) * v * v
        });
        let hi = toward_zero(self.quad_n, 4.0 * sh.gap - 2.0, 50, 0.5, |x| {
            let r = 1.0 - x;
            let v = kap.eval(r, x);
            r.powf(1.0 - 2.0 * sh.h1) * v * v
        });
        let c = sh.gap * sh.beta2;
        Ok(c.powi(4) / (2.0 * sh.gap) * (lo + hi))
    }
}

/// K_H(t, s) = β_H s^{½−H} ∫_s^t (u−s)^{H−3/2} u^{H−½} du, 0 < s ≤ t.
pub fn kernel_kh(h: f64, t: f64, s: f64) -> Result<f64> {
    if !(h > 0.5 && h < 1.0) {
        return Err(Error::domain(format!("H must lie in (1/2, 1), got {h}")));
    }
    check_ordered(t, s)?;
    if s == t {
        return Ok(0.0);
    }
    let (rho, omr) = (s / t, (t - s) / t);
    let smooth = |z: f64| (rho + omr * z).powf(h - 0.5);
    let refine = Refinement {
        rtol: 1e-13,
        cap: 1024,
    };
    let inner = singular_integral(smooth, 0.0, 1.0, h - 1.5, 0.0, 16, refine)?;
    let value = if inner.converged {
        inner.value
    } else {
        // ρ small: the smooth factor varies on scale ρ/(1−ρ) near z = 0
        toward_zero(DEFAULT_QUAD_N, h - 1.5, Shape::near_depth(rho, omr), 1.0, |z| {
            z.powf(h - 1.5) * smooth(z)
        })
    };
    Ok(beta_h(h) * s.powf(0.5 - h) * ((t - s) * t).powf(h - 0.5) * value)
}
