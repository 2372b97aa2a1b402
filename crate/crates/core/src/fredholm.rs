//! The second-kind equation on [0, 1]:
//!
//!   ĥ(u) + λ ∫_0^1 k1(s,u) ĥ(s) ds = (uT)^{½−H1},   λ = T^{2H2−2H1}/(σ²γ²).
//!
//! With φ(u) = u^{H1−½} ĥ(u) = T^{½−H1} ψ(u) the equation becomes
//! ω ψ + λ K ψ = ω, ω(u) = u^{1−2H1}, K the operator with kernel k. That form
//! is discretized by Galerkin on piecewise polynomials (Gauss–Legendre nodes
//! on each panel of a doubly graded mesh). All integrals against k are done
//! with product rules that integrate the u^{1−2H1}, |s−u|^{2H2−2H1−1} and
//! near-diagonal behaviour exactly, so the nodal values converge at the
//! approximation rate of ψ rather than the quadrature rate of k1.
//!
//! Off-grid values use the iterated (Sloan) solution
//! ψ_S(u) = 1 − λ u^{2H1−1} (Kψ)(u), which is also what the continuous
//! residual is measured on.

use crate::error::{Error, Result};
use crate::kernels::KernelContext;
use crate::model::DerivedConstants;
use crate::numerics::linalg::solve_dense;
use crate::numerics::quadrature::{depth_for, graded_unit_rule, legendre_rule, unit_jacobi, EndGrading};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Gauss–Legendre points per panel.
pub const PANEL_POINTS: usize = 8;
const FAR_ORDER: usize = 16;
const ZERO_DEPTH: usize = 30;
const EDGE_DEPTH: usize = 20;
const DIAG_DEPTH: usize = 24;
const CHECK_POINTS: usize = 3 * PANEL_POINTS;

/// Graded mesh on (0, 1): the map φ(x) = x^γ/(x^γ + (1−x)^γ) applied to a
/// uniform partition of x into P panels, with Gauss–Legendre points in x on
/// each panel. Functions on the grid are piecewise polynomials in x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub n: usize,
    pub grading_exponent: f64,
    /// panel breakpoints φ(k/P), 0 = breaks[0] < … < breaks[P] = 1
    pub breaks: Vec<f64>,
    /// 1 − breaks[k], computed without cancellation
    pub tails: Vec<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// φ(x) and 1 − φ(x).
fn grading_map(x: f64, g: f64) -> (f64, f64) {
    let a = x.powf(g);
    let b = (1.0 - x).powf(g);
    (a / (a + b), b / (a + b))
}

/// φ'(x).
fn grading_slope(x: f64, g: f64) -> f64 {
    let y = 1.0 - x;
    let d = x.powf(g) + y.powf(g);
    g * (x * y).powf(g - 1.0) / (d * d)
}

/// Mesh with n = 8·P nodes.
pub fn build_grid(n: usize, grading_exponent: f64) -> Result<QuadratureGrid> {
    if n < PANEL_POINTS || n % PANEL_POINTS != 0 {
        return Err(Error::domain(format!(
            "grid size must be a positive multiple of {PANEL_POINTS}, got {n}"
        )));
    }
    if !(grading_exponent >= 1.0 && grading_exponent.is_finite()) {
        return Err(Error::domain(format!(
            "grading exponent must be at least 1, got {grading_exponent}"
        )));
    }
    let panels = n / PANEL_POINTS;
    let (mut breaks, mut tails): (Vec<f64>, Vec<f64>) = (0..=panels)
        .map(|k| grading_map(k as f64 / panels as f64, grading_exponent))
        .unzip();
    breaks[0] = 0.0;
    tails[0] = 1.0;
    breaks[panels] = 1.0;
    tails[panels] = 0.0;
    let unit = unit_jacobi(PANEL_POINTS, 0.0, 0.0)?;
    let h = 1.0 / panels as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in 0..panels {
        for (&t, &wt) in unit.nodes.iter().zip(&unit.weights) {
            let x = (k as f64 + t) * h;
            nodes.push(grading_map(x, grading_exponent).0);
            weights.push(h * wt * grading_slope(x, grading_exponent));
        }
    }
    Ok(QuadratureGrid {
        n,
        grading_exponent,
        breaks,
        tails,
        nodes,
        weights,
    })
}

impl QuadratureGrid {
    pub fn panels(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn panel(&self, p: usize) -> (f64, f64) {
        (self.breaks[p], self.breaks[p + 1])
    }

    /// Panel containing u ∈ [0, 1] (the left one at a breakpoint).
    pub fn panel_of(&self, u: f64) -> usize {
        let p = self.breaks.partition_point(|&b| b < u);
        p.saturating_sub(1).min(self.panels() - 1)
    }

    /// Point of panel p with local coordinate ξ ∈ [−1, 1].
    pub fn point(&self, p: usize, xi: f64) -> f64 {
        let x = (p as f64 + 0.5 * (xi + 1.0)) / self.panels() as f64;
        grading_map(x, self.grading_exponent).0
    }

    /// Local coordinate in [−1, 1] of the point at distances `from_lo`,
    /// `from_hi` from the ends of panel p.
    fn local(&self, p: usize, from_lo: f64, from_hi: f64) -> f64 {
        let g = self.grading_exponent;
        let count = self.panels() as f64;
        let s = self.breaks[p] + from_lo;
        if s <= 0.5 {
            let r = (s / (1.0 - s)).powf(1.0 / g);
            let x = r / (1.0 + r);
            2.0 * (x * count - p as f64) - 1.0
        } else {
            let t = self.tails[p + 1] + from_hi;
            let r = (t / (1.0 - t)).powf(1.0 / g);
            let y = r / (1.0 + r);
            1.0 - 2.0 * (y * count - (self.panels() - p - 1) as f64)
        }
    }

    /// Rule for ∫_{panel p} s^e f(s) ds with f a polynomial in the local
    /// coordinate: returns (local coordinate, weight) pairs.
    fn moment_rule(&self, p: usize, e: f64, points: usize) -> Vec<(f64, f64)> {
        let g = self.grading_exponent;
        let panels = self.panels();
        let h = 1.0 / panels as f64;
        let left = if p == 0 { g * (e + 1.0) - 1.0 } else { 0.0 };
        let right = if p + 1 == panels { g - 1.0 } else { 0.0 };
        let rule = unit_jacobi(points, left, right).expect("jacobi rule");
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| {
                let x = (p as f64 + t) * h;
                let y = 1.0 - x;
                let d = x.powf(g) + y.powf(g);
                // s^e φ'(x) = γ x^{γe+γ−1} y^{γ−1} D^{−e−2}, Jacobi factors removed
                let mut f = g * d.powf(-e - 2.0);
                f *= if p == 0 { h.powf(left) } else { x.powf(g * e + g - 1.0) };
                f *= if p + 1 == panels { h.powf(right) } else { y.powf(g - 1.0) };
                (2.0 * t - 1.0, w * f * h)
            })
            .collect()
    }
}

/// Lagrange basis on [−1, 1] through Gauss–Legendre points.
#[derive(Debug, Clone)]
struct Basis {
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl Basis {
    fn gauss(m: usize) -> Self {
        let rule = legendre_rule(m, -1.0, 1.0).expect("legendre rule");
        let nodes = rule.nodes.clone();
        let bary = (0..m)
            .map(|j| {
                let prod: f64 = (0..m).filter(|&k| k != j).map(|k| nodes[j] - nodes[k]).product();
                1.0 / prod
            })
            .collect();
        Self { nodes, bary }
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    /// All basis values at x ∈ [−1, 1].
    fn values(&self, x: f64, out: &mut [f64]) {
        let mut den = 0.0;
        for j in 0..self.len() {
            let d = x - self.nodes[j];
            if d == 0.0 {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[j] = 1.0;
                return;
            }
            out[j] = self.bary[j] / d;
            den += out[j];
        }
        out.iter_mut().for_each(|v| *v /= den);
    }

    fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.len() {
            let d = x - self.nodes[j];
            if d == 0.0 {
                return values[j];
            }
            let c = self.bary[j] / d;
            num += c * values[j];
            den += c;
        }
        num / den
    }
}

/// Node of a unit rule with exact distances to both ends.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairNode {
    pub(crate) from_left: f64,
    pub(crate) from_right: f64,
    pub(crate) weight: f64,
}

type PairKey = (usize, u64, usize, u64, usize);

fn pair_cache() -> &'static Mutex<HashMap<PairKey, Arc<Vec<PairNode>>>> {
    static CACHE: OnceLock<Mutex<HashMap<PairKey, Arc<Vec<PairNode>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Unit rule graded toward either end, with nodes stored as distances to
/// both ends so that points very close to an end keep full relative accuracy.
pub(crate) fn pair_rule(order: usize, left: Option<EndGrading>, right: Option<EndGrading>) -> Arc<Vec<PairNode>> {
    let enc = |g: Option<EndGrading>| match g {
        Some(g) => (g.exponent.to_bits(), g.depth + 1),
        None => (0, 0),
    };
    let (le, ld) = enc(left);
    let (re, rd) = enc(right);
    let key = (order, le, ld, re, rd);
    if let Some(r) = pair_cache().lock().expect("pair cache").get(&key) {
        return r.clone();
    }
    let half = |g: Option<EndGrading>| -> Vec<(f64, f64)> {
        let r = match g {
            Some(g) => graded_unit_rule(order, Some(g), None),
            None => graded_unit_rule(order, None, None),
        }
        .expect("graded rule");
        r.nodes.iter().copied().zip(r.weights.iter().copied()).collect()
    };
    let mut out = Vec::new();
    match (left, right) {
        (None, None) => {
            for (t, w) in half(None) {
                out.push(PairNode {
                    from_left: t,
                    from_right: 1.0 - t,
                    weight: w,
                });
            }
        }
        (Some(_), None) => {
            for (t, w) in half(left) {
                out.push(PairNode {
                    from_left: t,
                    from_right: 1.0 - t,
                    weight: w,
                });
            }
        }
        (None, Some(_)) => {
            for (t, w) in half(right) {
                out.push(PairNode {
                    from_left: 1.0 - t,
                    from_right: t,
                    weight: w,
                });
            }
        }
        (Some(_), Some(_)) => {
            for (t, w) in half(left) {
                out.push(PairNode {
                    from_left: 0.5 * t,
                    from_right: 1.0 - 0.5 * t,
                    weight: 0.5 * w,
                });
            }
            for (t, w) in half(right) {
                out.push(PairNode {
                    from_left: 1.0 - 0.5 * t,
                    from_right: 0.5 * t,
                    weight: 0.5 * w,
                });
            }
        }
    }
    let out = Arc::new(out);
    pair_cache().lock().expect("pair cache").insert(key, out.clone());
    out
}

/// Kernel of the operator being discretized.
#[derive(Debug, Clone)]
pub enum OperatorKernel {
    /// The model kernel k.
    Mixed(Arc<KernelContext>),
    /// k ≡ 0.
    Zero,
    /// Surrogate with k1 ≡ c, i.e. k(s,u) = c (su)^{½−H1}.
    Constant(f64),
}

/// Evaluation point with exact distances to the ends of its panel.
#[derive(Debug, Clone, Copy)]
struct Target {
    u: f64,
    panel: usize,
    to_lo: f64,
    to_hi: f64,
}

/// A function given by its values at Gauss points of every panel.
struct PanelFunction<'a> {
    basis: &'a Basis,
    values: &'a [f64],
}

impl PanelFunction<'_> {
    fn eval(&self, panel: usize, x: f64) -> f64 {
        let m = self.basis.len();
        self.basis.interpolate(&self.values[panel * m..(panel + 1) * m], x)
    }
}

#[derive(Debug)]
struct Core {
    grid: QuadratureGrid,
    kernel: OperatorKernel,
    h1: f64,
    basis: Basis,
}

impl Core {
    fn target(&self, u: f64) -> Target {
        let p = self.grid.panel_of(u);
        let (lo, hi) = self.grid.panel(p);
        Target {
            u,
            panel: p,
            to_lo: u - lo,
            to_hi: hi - u,
        }
    }

    /// Visit the nodes of a rule for ∫_{panel r} f(s) k(s,u) ds: the callback
    /// gets the distances of s to both ends of panel r and weight·k(s,u).
    fn visit_inner<F: FnMut(f64, f64, f64)>(&self, ctx: &KernelContext, r: usize, tgt: &Target, mut visit: F) {
        let order = ctx.quad_n();
        let h1 = self.h1;
        let gap_exp = 2.0 * (ctx.constants().h2 - h1) - 1.0;
        let (lo, hi) = self.grid.panel(r);
        let len = hi - lo;
        let at_zero = (r == 0).then(|| EndGrading::new(1.0 - 2.0 * h1, ZERO_DEPTH));
        let at_one = (r + 1 == self.grid.panels()).then(|| EndGrading::new(0.0, EDGE_DEPTH));
        let diag = Some(EndGrading::new(gap_exp, DIAG_DEPTH));
        let u = tgt.u;
        if tgt.panel == r {
            if tgt.to_lo > 0.0 {
                let piece = tgt.to_lo;
                for nd in pair_rule(order, at_zero, diag).iter() {
                    let off = piece * nd.from_left;
                    let gap = piece * nd.from_right;
                    let s = if nd.from_left <= 0.5 { lo + off } else { u - gap };
                    visit(off, tgt.to_hi + gap, nd.weight * piece * ctx.k_split(s, u, gap));
                }
            }
            if tgt.to_hi > 0.0 {
                let piece = tgt.to_hi;
                for nd in pair_rule(order, diag, at_one).iter() {
                    let gap = piece * nd.from_left;
                    let rest = piece * nd.from_right;
                    let s = if nd.from_left <= 0.5 { u + gap } else { hi - rest };
                    visit(tgt.to_lo + gap, rest, nd.weight * piece * ctx.k_split(u, s, gap));
                }
            }
            return;
        }
        let below = u < lo;
        let dist = if below {
            if tgt.panel + 1 == r {
                tgt.to_hi
            } else {
                lo - u
            }
        } else if r + 1 == tgt.panel {
            tgt.to_lo
        } else {
            u - hi
        };
        let rule = if dist < 2.0 * len {
            let g = Some(EndGrading::new(0.0, depth_for(dist / len)));
            if below {
                pair_rule(order, g, at_one)
            } else {
                pair_rule(order, at_zero, g)
            }
        } else if at_zero.is_some() || at_one.is_some() {
            pair_rule(order, at_zero, at_one)
        } else {
            pair_rule(FAR_ORDER, None, None)
        };
        for nd in rule.iter() {
            let (dl, dh) = (len * nd.from_left, len * nd.from_right);
            let s = if nd.from_left <= 0.5 { lo + dl } else { hi - dh };
            let k = if below {
                ctx.k_split(u, s, dist + dl)
            } else {
                ctx.k_split(s, u, dist + dh)
            };
            visit(dl, dh, nd.weight * len * k);
        }
    }

    /// ∫_0^1 s^e f(s) ds for f given on panels.
    fn weighted_moment(&self, f: &PanelFunction, e: f64) -> f64 {
        let points = 2 * f.basis.len() + 4;
        let mut acc = 0.0;
        for p in 0..self.grid.panels() {
            for (x, w) in self.grid.moment_rule(p, e, points) {
                acc += w * f.eval(p, x);
            }
        }
        acc
    }

    /// (K f)(u) = ∫_0^1 k(s,u) f(s) ds.
    fn apply(&self, f: &PanelFunction, tgt: &Target) -> f64 {
        match &self.kernel {
            OperatorKernel::Zero => 0.0,
            OperatorKernel::Constant(c) => {
                c * tgt.u.powf(0.5 - self.h1) * self.weighted_moment(f, 0.5 - self.h1)
            }
            OperatorKernel::Mixed(ctx) => {
                let mut acc = 0.0;
                for r in 0..self.grid.panels() {
                    self.visit_inner(ctx, r, tgt, |dl, dh, wk| {
                        acc += wk * f.eval(r, self.grid.local(r, dl, dh))
                    });
                }
                acc
            }
        }
    }

    /// Galerkin block ∫_{panel p} ∫_{panel r} ℓ_i(u) ℓ_j(s) k(s,u) ds du, p ≤ r.
    fn block(&self, ctx: &KernelContext, p: usize, r: usize) -> DMatrix<f64> {
        let q = self.basis.len();
        let (lo, hi) = self.grid.panel(p);
        let len = hi - lo;
        let order = ctx.quad_n();
        let left = if p == 0 {
            Some(EndGrading::new(1.0 - 2.0 * self.h1, ZERO_DEPTH))
        } else if r == p {
            Some(EndGrading::new(0.0, EDGE_DEPTH))
        } else {
            None
        };
        let right = if r <= p + 1 {
            Some(EndGrading::new(0.0, EDGE_DEPTH))
        } else {
            None
        };
        let outer = match (left, right) {
            (None, None) => pair_rule(FAR_ORDER, None, None),
            _ => pair_rule(order, left, right),
        };
        let mut out = DMatrix::zeros(q, q);
        let mut lu = vec![0.0; q];
        let mut ls = vec![0.0; q];
        let mut inner = vec![0.0; q];
        for nd in outer.iter() {
            let tgt = Target {
                u: if nd.from_left <= 0.5 { lo + len * nd.from_left } else { hi - len * nd.from_right },
                panel: p,
                to_lo: len * nd.from_left,
                to_hi: len * nd.from_right,
            };
            inner.iter_mut().for_each(|v| *v = 0.0);
            self.visit_inner(ctx, r, &tgt, |dl, dh, wk| {
                self.basis.values(self.grid.local(r, dl, dh), &mut ls);
                for j in 0..q {
                    inner[j] += wk * ls[j];
                }
            });
            self.basis.values(self.grid.local(p, tgt.to_lo, tgt.to_hi), &mut lu);
            let w = nd.weight * len;
            for i in 0..q {
                for j in 0..q {
                    out[(i, j)] += w * lu[i] * inner[j];
                }
            }
        }
        if p == r {
            let t = out.transpose();
            out = (out + t) * 0.5;
        }
        out
    }
}

/// Galerkin discretization of the operator on a grid.
#[derive(Debug, Clone)]
pub struct DiscretizedOperator {
    pub grid: QuadratureGrid,
    /// Nodal matrix acting on ĥ values: (I + λ·matrix)ĥ = rhs is the
    /// discrete equation. It equals S M⁻¹ A S⁻¹ with S = diag(s_i^{½−H1}),
    /// M the ω-weighted mass matrix and A the Galerkin matrix of k.
    pub matrix: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    mass: DMatrix<f64>,
    moments: DVector<f64>,
    core: Arc<Core>,
}

/// Assemble the model operator; requires H2 − H1 > ¼.
pub fn assemble(ctx: Arc<KernelContext>, grid: &QuadratureGrid) -> Result<DiscretizedOperator> {
    ctx.constants().hurst().require_solver_admissible()?;
    let h1 = ctx.constants().h1;
    assemble_kernel(OperatorKernel::Mixed(ctx), h1, grid)
}

/// Assemble any [`OperatorKernel`] (the non-model kernels serve as test seams).
pub fn assemble_kernel(kernel: OperatorKernel, h1: f64, grid: &QuadratureGrid) -> Result<DiscretizedOperator> {
    if !(h1 > 0.5 && h1 < 1.0) {
        return Err(Error::domain(format!("h1 must lie in (1/2, 1), got {h1}")));
    }
    let core = Arc::new(Core {
        grid: grid.clone(),
        kernel,
        h1,
        basis: Basis::gauss(PANEL_POINTS),
    });
    let q = PANEL_POINTS;
    let n = grid.n;
    let panels = grid.panels();
    let w_exp = 1.0 - 2.0 * h1;

    // ω-weighted mass blocks and moments ∫ωℓ_i
    let mut mass = DMatrix::zeros(n, n);
    let mut moments = DVector::zeros(n);
    let mut vals = vec![0.0; q];
    for p in 0..panels {
        for (x, w) in grid.moment_rule(p, w_exp, 2 * q + 4) {
            core.basis.values(x, &mut vals);
            for i in 0..q {
                moments[p * q + i] += w * vals[i];
                for j in 0..q {
                    mass[(p * q + i, p * q + j)] += w * vals[i] * vals[j];
                }
            }
        }
    }

    let stiffness = match &core.kernel {
        OperatorKernel::Zero => DMatrix::zeros(n, n),
        OperatorKernel::Constant(c) => {
            let mut beta = DVector::<f64>::zeros(n);
            let e = 0.5 - h1;
            for p in 0..panels {
                for (x, w) in grid.moment_rule(p, e, 2 * q + 4) {
                    core.basis.values(x, &mut vals);
                    for i in 0..q {
                        beta[p * q + i] += w * vals[i];
                    }
                }
            }
            &beta * beta.transpose() * *c
        }
        OperatorKernel::Mixed(ctx) => {
            ctx.warm_up();
            let pairs: Vec<(usize, usize)> = (0..panels)
                .flat_map(|p| (p..panels).map(move |r| (p, r)))
                .collect();
            let blocks: Vec<DMatrix<f64>> = pairs.par_iter().map(|&(p, r)| core.block(ctx, p, r)).collect();
            let mut a = DMatrix::zeros(n, n);
            for (&(p, r), b) in pairs.iter().zip(&blocks) {
                for i in 0..q {
                    for j in 0..q {
                        a[(p * q + i, r * q + j)] = b[(i, j)];
                        a[(r * q + j, p * q + i)] = b[(i, j)];
                    }
                }
            }
            a
        }
    };
    if stiffness.iter().any(|v| !v.is_finite()) {
        return Err(Error::accuracy("non-finite entry in the assembled operator"));
    }

    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("weighted mass matrix is not positive definite".into()))?;
    let m_inv_a = chol.solve(&stiffness);
    let scale: Vec<f64> = grid.nodes.iter().map(|s| s.powf(0.5 - h1)).collect();
    let matrix = DMatrix::from_fn(n, n, |i, j| scale[i] * m_inv_a[(i, j)] / scale[j]);
    Ok(DiscretizedOperator {
        grid: grid.clone(),
        matrix,
        stiffness,
        mass,
        moments,
        core,
    })
}

impl DiscretizedOperator {
    /// Galerkin matrix A_ij = ∫∫ ℓ_i(u) ℓ_j(s) k(s,u) ds du.
    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    /// ω-weighted mass matrix.
    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    /// Gram matrix D of the nodal representation: D·matrix is symmetric.
    pub fn gram(&self) -> DMatrix<f64> {
        let e = 0.5 - self.core.h1;
        let s: Vec<f64> = self.grid.nodes.iter().map(|x| x.powf(e)).collect();
        DMatrix::from_fn(self.grid.n, self.grid.n, |i, j| self.mass[(i, j)] / (s[i] * s[j]))
    }

    /// L⁻¹ A L⁻ᵀ with M = L Lᵀ: symmetric and similar to `matrix`.
    pub fn symmetrized(&self) -> Result<DMatrix<f64>> {
        let chol = self
            .mass
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Factorization("weighted mass matrix is not positive definite".into()))?;
        let l = chol.l();
        let x = l
            .solve_lower_triangular(&self.stiffness)
            .ok_or_else(|| Error::Factorization("triangular solve".into()))?;
        let y = l
            .solve_lower_triangular(&x.transpose())
            .ok_or_else(|| Error::Factorization("triangular solve".into()))?;
        Ok((&y + y.transpose()) * 0.5)
    }

    /// fᵀ(D·matrix)f for nodal f: the discrete ⟨K f, f⟩.
    pub fn quadratic_form(&self, f: &DVector<f64>) -> f64 {
        let e = 0.5 - self.core.h1;
        let g = DVector::from_fn(self.grid.n, |i, _| f[i] / self.grid.nodes[i].powf(e));
        g.dot(&(&self.stiffness * &g))
    }

    pub fn h1(&self) -> f64 {
        self.core.h1
    }
}

/// Eigenvalues of the symmetrized operator, sorted descending.
pub fn spectrum_report(op: &DiscretizedOperator) -> Result<Vec<f64>> {
    let sym = op.symmetrized()?;
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Frobenius norm of the symmetrized operator (the Hilbert–Schmidt norm of
/// the discretized k1).
pub fn frobenius_norm(op: &DiscretizedOperator) -> Result<f64> {
    Ok(op.symmetrized()?.norm())
}

/// Options for [`solve_second_kind_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Solutions whose continuous residual exceeds this carry a warning.
    pub residual_tol: f64,
    /// Measure the continuous residual (costs about as much as assembly).
    pub check_residual: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-5,
            check_residual: true,
        }
    }
}

/// Solution of the equation for one horizon T.
#[derive(Debug, Clone)]
pub struct FredholmSolution {
    pub grid: QuadratureGrid,
    /// iterated solution ĥ at the grid nodes
    pub h_hat: Vec<f64>,
    /// solution of the nodal linear system
    pub h_hat_nodal: Vec<f64>,
    pub horizon: f64,
    pub lambda: f64,
    /// μ = T^{2H2−2H1}
    pub mu: f64,
    /// sup of |ĥ + λK1ĥ − rhs| over 3n off-grid points (NaN if not measured)
    pub residual_sup: f64,
    /// ‖(I+λ·matrix)ĥ − rhs‖∞/‖rhs‖∞ of the linear solve
    pub linear_residual: f64,
    pub qv_n: f64,
    pub condition: f64,
    pub warning: Option<String>,
    /// ∫_0^1 u^{1−2H1} ψ(u) du
    weighted_integral: f64,
    psi: Vec<f64>,
    h1: f64,
    core: Arc<Core>,
}

/// Solve with default options.
pub fn solve_second_kind(op: &DiscretizedOperator, horizon: f64, constants: &DerivedConstants) -> Result<FredholmSolution> {
    solve_second_kind_with(op, horizon, constants, SolverOptions::default())
}

pub fn solve_second_kind_with(
    op: &DiscretizedOperator,
    horizon: f64,
    constants: &DerivedConstants,
    options: SolverOptions,
) -> Result<FredholmSolution> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    if (constants.h1 - op.core.h1).abs() > 0.0 {
        return Err(Error::domain("operator and constants belong to different Hurst pairs"));
    }
    if let OperatorKernel::Mixed(ctx) = &op.core.kernel {
        if ctx.constants().h2 != constants.h2 {
            return Err(Error::domain("operator and constants belong to different Hurst pairs"));
        }
    }
    let h1 = constants.h1;
    let n = op.grid.n;
    let lambda = constants.lambda(horizon);
    let mu = constants.mu(horizon);
    let t_scale = horizon.powf(0.5 - h1);
    let rhs = DVector::from_fn(n, |i, _| (op.grid.nodes[i] * horizon).powf(0.5 - h1));
    let system = DMatrix::identity(n, n) + &op.matrix * lambda;
    let sol = solve_dense(&system, &rhs)?;
    let psi: Vec<f64> = (0..n)
        .map(|i| sol.x[i] / (op.grid.nodes[i] * horizon).powf(0.5 - h1))
        .collect();
    let weighted_integral = op.moments.dot(&DVector::from_column_slice(&psi));
    let sg2 = constants.sigma * constants.sigma * constants.gamma_sq();
    let qv_n = sg2 * horizon.powf(2.0 - 2.0 * h1) * weighted_integral;
    if !(qv_n > 0.0) {
        return Err(Error::Solver(format!("nonpositive quadratic variation {qv_n}")));
    }
    let mut out = FredholmSolution {
        grid: op.grid.clone(),
        h_hat: Vec::new(),
        h_hat_nodal: sol.x.iter().copied().collect(),
        horizon,
        lambda,
        mu,
        residual_sup: f64::NAN,
        linear_residual: sol.relative_residual,
        qv_n,
        condition: sol.condition,
        warning: None,
        weighted_integral,
        psi,
        h1,
        core: op.core.clone(),
    };
    let nodes = out.grid.nodes.clone();
    let psi_nodes = out.psi_many(&nodes)?;
    out.h_hat = nodes
        .iter()
        .zip(&psi_nodes)
        .map(|(&u, &p)| u.powf(0.5 - h1) * t_scale * p)
        .collect();
    if options.check_residual {
        out.residual_sup = out.continuous_residual()?;
        if !(out.residual_sup <= options.residual_tol) {
            out.warning = Some(format!(
                "continuous residual {:.3e} exceeds tolerance {:.1e}",
                out.residual_sup, options.residual_tol
            ));
        }
    }
    Ok(out)
}

impl FredholmSolution {
    fn galerkin(&self) -> PanelFunction<'_> {
        PanelFunction {
            basis: &self.core.basis,
            values: &self.psi,
        }
    }

    fn check_unit(u: f64) -> Result<()> {
        if u > 0.0 && u <= 1.0 {
            Ok(())
        } else {
            Err(Error::domain(format!("point must lie in (0, 1], got {u}")))
        }
    }

    /// ψ(u) = T^{H1−½} u^{H1−½} ĥ(u) from the iterated solution.
    pub fn psi(&self, u: f64) -> Result<f64> {
        Self::check_unit(u)?;
        let tgt = self.core.target(u);
        let ku = self.core.apply(&self.galerkin(), &tgt);
        Ok(1.0 - self.lambda * u.powf(2.0 * self.h1 - 1.0) * ku)
    }

    pub fn psi_many(&self, us: &[f64]) -> Result<Vec<f64>> {
        us.par_iter().map(|&u| self.psi(u)).collect()
    }

    /// ĥ(u) on (0, 1].
    pub fn h_hat_at(&self, u: f64) -> Result<f64> {
        Ok((u * self.horizon).powf(0.5 - self.h1) * self.psi(u)?)
    }

    /// h_T(t) = ĥ(t/T)·t^{H1−½} on (0, T].
    pub fn h_t(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t <= self.horizon * (1.0 + 1e-14)) {
            return Err(Error::domain(format!("t must lie in (0, {}], got {t}", self.horizon)));
        }
        self.psi((t / self.horizon).min(1.0))
    }

    pub fn h_t_many(&self, ts: &[f64]) -> Result<Vec<f64>> {
        ts.par_iter().map(|&t| self.h_t(t)).collect()
    }

    /// h_μ(u) = μ·h_T(uT)·(uT)^{½−H1}·T^{H1−½}... = μ u^{½−H1} ψ(u), the
    /// solution of (σ²γ²/μ)·h + K1 h = σ²γ² u^{½−H1}.
    pub fn h_mu(&self, u: f64) -> Result<f64> {
        Ok(self.mu * u.powf(0.5 - self.h1) * self.psi(u)?)
    }

    /// ∫_0^1 h_μ(u) u^{½−H1} du.
    pub fn h_mu_moment(&self) -> f64 {
        self.mu * self.weighted_integral
    }

    /// ∫_0^T h_T(t) t^{1−2H1} dt.
    pub fn h_t_moment(&self) -> f64 {
        self.horizon.powf(2.0 - 2.0 * self.h1) * self.weighted_integral
    }

    /// sup over 3n off-grid points of |ĥ + λ∫k1(s,·)ĥ(s)ds − (·T)^{½−H1}|,
    /// with ĥ the iterated solution.
    fn continuous_residual(&self) -> Result<f64> {
        let basis = Basis::gauss(CHECK_POINTS);
        let grid = &self.grid;
        let points: Vec<f64> = (0..grid.panels())
            .flat_map(|p| {
                basis.nodes.iter().map(move |&x| grid.point(p, x)).collect::<Vec<_>>()
            })
            .collect();
        self.residual_at(&points)
    }

    /// Sup of the weighted residual `|u^{½-H1}(ψ + λ u^{2H1-1}Kψ - 1)|` over
    /// `points` in `(0, 1]`, with Kψ computed from the interpolant of ψ on
    /// the dense check basis.
    pub fn residual_at(&self, points: &[f64]) -> Result<f64> {
        if let Some(&u) = points.iter().find(|&&u| !(u > 0.0 && u <= 1.0)) {
            return Err(Error::domain(format!("residual point {u} outside (0, 1]")));
        }
        let basis = Basis::gauss(CHECK_POINTS);
        let grid = &self.grid;
        let dense: Vec<f64> = (0..grid.panels())
            .flat_map(|p| {
                basis.nodes.iter().map(move |&x| grid.point(p, x)).collect::<Vec<_>>()
            })
            .collect();
        let psi_dense = self.psi_many(&dense)?;
        let f = PanelFunction {
            basis: &basis,
            values: &psi_dense,
        };
        let psi = self.psi_many(points)?;
        let t_scale = self.horizon.powf(0.5 - self.h1);
        let res: Vec<f64> = points
            .par_iter()
            .zip(&psi)
            .map(|(&u, &p)| {
                let tgt = self.core.target(u);
                let ku = self.core.apply(&f, &tgt);
                let r = p + self.lambda * u.powf(2.0 * self.h1 - 1.0) * ku - 1.0;
                (u.powf(0.5 - self.h1) * t_scale * r).abs()
            })
            .collect();
        Ok(res.into_iter().fold(0.0, f64::max))
    }

    /// Collocation nodes of the solver grid, mapped to `(0, 1]`.
    pub fn nodes(&self) -> Vec<f64> {
        let basis = &self.core.basis;
        (0..self.grid.panels())
            .flat_map(|p| basis.nodes.iter().map(move |&x| self.grid.point(p, x)).collect::<Vec<_>>())
            .collect()
    }

    /// Weighted-L² distance ‖ĥ_a − ĥ_b‖/‖ĥ_b‖ with ĥ compared on `other`'s
    /// grid (weights of that grid).
    pub fn relative_difference(&self, other: &FredholmSolution) -> Result<f64> {
        let mine = other
            .grid
            .nodes
            .par_iter()
            .map(|&u| self.h_hat_at(u))
            .collect::<Result<Vec<f64>>>()?;
        let mut num = 0.0;
        let mut den = 0.0;
        for ((a, b), w) in mine.iter().zip(&other.h_hat).zip(&other.grid.weights) {
            num += w * (a - b) * (a - b);
            den += w * b * b;
        }
        Ok((num / den).sqrt())
    }
}

/// ⟨N⟩(T) = σ²γ²∫_0^T h_T(t) t^{1−2H1} dt.
pub fn quadratic_variation_n(sol: &FredholmSolution, constants: &DerivedConstants) -> Result<f64> {
    let v = constants.sigma * constants.sigma * constants.gamma_sq() * sol.h_t_moment();
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Solver(format!("nonpositive quadratic variation {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HurstPair, ModelParams};

    fn setup(h1: f64, h2: f64) -> (DerivedConstants, Arc<KernelContext>) {
        let c = DerivedConstants::new(&ModelParams::standard(HurstPair::new(h1, h2).unwrap()));
        (c, Arc::new(KernelContext::new(c)))
    }

    #[test]
    fn grid_basics() {
        let g = build_grid(8, 1.0).unwrap();
        assert_eq!(g.nodes.len(), 8);
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let g = build_grid(64, 2.0).unwrap();
        assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(g.nodes[0] > 0.0 && *g.nodes.last().unwrap() < 1.0);
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // graded: first panel O(1/P²)
        assert!(g.breaks[1] < 2.0 / 64.0);
        assert!(build_grid(4, 2.0).is_err());
        assert!(build_grid(12, 2.0).is_err());
        assert!(build_grid(64, 0.5).is_err());
        let g = build_grid(256, 2.0).unwrap();
        let v: f64 = g.nodes.iter().zip(&g.weights).map(|(s, w)| w * s.powf(-0.4)).sum();
        assert!((v - 1.0 / 0.6).abs() < 1e-4, "{v}");
        assert_eq!(g.panel_of(0.0), 0);
        assert_eq!(g.panel_of(1.0), g.panels() - 1);
    }

    #[test]
    fn zero_kernel_gives_rhs() {
        let (c, _) = setup(0.6, 0.9);
        let grid = build_grid(32, 2.0).unwrap();
        let op = assemble_kernel(OperatorKernel::Zero, 0.6, &grid).unwrap();
        assert!(op.matrix.iter().all(|&v| v == 0.0));
        let sol = solve_second_kind(&op, 2.0, &c).unwrap();
        for (i, &u) in grid.nodes.iter().enumerate() {
            assert!((sol.h_hat[i] - (2.0 * u).powf(-0.1)).abs() < 1e-14);
        }
        assert_eq!(sol.h_t(1.3).unwrap(), 1.0);
        let want = c.epsilon_h1 * 2f64.powf(0.8);
        assert!(((sol.qv_n - want) / want).abs() < 1e-13);
        assert_eq!(spectrum_report(&op).unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
    }

    #[test]
    fn constant_kernel_matches_rank_one_formula() {
        let (c, _) = setup(0.6, 0.9);
        let grid = build_grid(1024, 2.0).unwrap();
        let op = assemble_kernel(OperatorKernel::Constant(0.5), 0.6, &grid).unwrap();
        // λ = 1 at T = γ^{2/(2H2−2H1)}
        let horizon = c.gamma_sq().powf(1.0 / 0.6);
        let sol = solve_second_kind(&op, horizon, &c).unwrap();
        assert!((sol.lambda - 1.0).abs() < 1e-12);
        // ĥ(u) = (uT)^{½−H1} − λc∫rhs/(1+λc), ∫_0^1 (uT)^{−0.1} du = T^{−0.1}/0.9
        let int_rhs = horizon.powf(-0.1) / 0.9;
        let shift = 0.5 * int_rhs / 1.5;
        for &u in &[1e-4, 0.013, 0.3, 0.77, 1.0] {
            let got = sol.h_hat_at(u).unwrap();
            let want = (u * horizon).powf(-0.1) - shift;
            assert!((got - want).abs() < 1e-10, "u={u}: {got} vs {want}");
        }
    }

    #[test]
    fn inadmissible_pair_rejected() {
        let (_, ctx) = setup(0.6, 0.8);
        let grid = build_grid(16, 2.0).unwrap();
        assert!(assemble(ctx, &grid).unwrap_err().is_domain());
    }

    #[test]
    fn model_operator_is_symmetric_and_positive() {
        let (c, ctx) = setup(0.6, 0.9);
        let grid = build_grid(64, 2.0).unwrap();
        let op = assemble(ctx, &grid).unwrap();
        let dm = op.gram() * &op.matrix;
        let scale = dm.amax();
        assert!((&dm - dm.transpose()).amax() <= 1e-8 * scale);
        let ev = spectrum_report(&op).unwrap();
        assert!(*ev.last().unwrap() >= -1e-8);
        assert!(ev.windows(2).take(19).all(|w| w[0] > w[1]));
        let sol = solve_second_kind(&op, 1.0, &c).unwrap();
        assert!(sol.qv_n > 0.0);
        assert!(sol.warning.is_none(), "{:?}", sol.warning);
        // nodal Galerkin values and iterated values agree closely at the nodes
        for (a, b) in sol.h_hat.iter().zip(&sol.h_hat_nodal) {
            assert!((a - b).abs() < 1e-4 * b.abs());
        }
    }

    #[test]
    fn model_solution_diagnostics() {
        use rand::{Rng, SeedableRng};
        let (c, ctx) = setup(0.6, 0.9);
        let grid = build_grid(128, 2.0).unwrap();
        let op = assemble(ctx.clone(), &grid).unwrap();
        let ev = spectrum_report(&op).unwrap();
        assert!(*ev.last().unwrap() >= -1e-8);
        assert!(ev.windows(2).take(19).all(|w| w[0] > w[1]));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let f = DVector::from_fn(grid.n, |_, _| rng.random_range(-1.0..1.0));
            assert!(op.quadratic_form(&f) >= -1e-8 * f.norm_squared());
        }
        let sol = solve_second_kind(&op, 1.0, &c).unwrap();
        assert!(sol.residual_sup < 1e-6, "{}", sol.residual_sup);
        // grid images: h_T(u_i T)·(u_i T)^{½−H1} = ĥ_i
        for i in [0, 37, 127] {
            let t = grid.nodes[i] * 1.0;
            let v = sol.h_t(t).unwrap() * t.powf(0.5 - c.h1);
            assert!((v - sol.h_hat[i]).abs() < 1e-13 * v.abs());
        }
        let reference = solve_second_kind(&assemble(ctx, &build_grid(512, 2.0).unwrap()).unwrap(), 1.0, &c).unwrap();
        assert!(sol.relative_difference(&reference).unwrap() < 1e-3);
        for &u in &[0.0137, 0.333, 0.9071] {
            let (a, b) = (sol.h_hat_at(u).unwrap(), reference.h_hat_at(u).unwrap());
            assert!(((a - b) / b).abs() < 1e-3);
        }
        let later = solve_second_kind(&op, 2.0, &c).unwrap();
        assert!(later.qv_n > sol.qv_n);
        assert!((quadratic_variation_n(&sol, &c).unwrap() - sol.qv_n).abs() < 1e-14);
        assert!(sol.h_t(1.5).is_err() && sol.h_t(0.0).is_err());
    }

    #[test]
    fn self_convergence_decreases() {
        let (c, ctx) = setup(0.6, 0.9);
        let sols: Vec<_> = [64, 128, 256, 512]
            .iter()
            .map(|&n| {
                let op = assemble(ctx.clone(), &build_grid(n, 2.0).unwrap()).unwrap();
                solve_second_kind_with(&op, 1.0, &c, SolverOptions { check_residual: false, ..Default::default() }).unwrap()
            })
            .collect();
        let d: Vec<f64> = sols.windows(2).map(|w| w[0].relative_difference(&w[1]).unwrap()).collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
    }

    #[test]
    fn frobenius_norm_approaches_kernel_norm() {
        // ‖k1 − P k1 P‖² decays like h^{4H2−4H1−1}; the deficits of successive
        // grids shrink by that factor and the extrapolated limit is the L² norm.
        let (_, ctx) = setup(0.6, 0.9);
        let target = ctx.k1_norm_sq().unwrap();
        let sq: Vec<f64> = [64, 128, 256]
            .iter()
            .map(|&n| frobenius_norm(&assemble(ctx.clone(), &build_grid(n, 2.0).unwrap()).unwrap()).unwrap().powi(2))
            .collect();
        assert!(sq[0] < sq[1] && sq[1] < sq[2] && sq[2] < target);
        let rate = 2f64.powf(-(4.0 * 0.3 - 1.0));
        let ratio = (target - sq[2]) / (target - sq[1]);
        assert!((ratio - rate).abs() < 0.01 * rate, "{ratio} vs {rate}");
        let limit = sq[2] + (sq[2] - sq[1]) * rate / (1.0 - rate);
        assert!(((limit.sqrt() - target.sqrt()) / target.sqrt()).abs() < 0.01);
    }
}
