//! Riemann–Liouville fractional integrals and derivatives on [0, 1].
//!
//! Integrands are passed as a smooth part plus declared endpoint exponents, so
//! the singular weight is absorbed by a Gauss–Jacobi rule.

use super::quadrature::{singular_integral, Integral, Refinement};
use super::special::gamma;
use crate::error::{Error, Result};

fn check_order(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("fractional order must lie in (0,1), got {alpha}")))
    }
}

/// A function on (0, 1) of the form g(t)·t^left·(1−t)^right with g smooth.
pub struct Declared<'a> {
    pub smooth: &'a dyn Fn(f64) -> f64,
    pub left: f64,
    pub right: f64,
}

impl<'a> Declared<'a> {
    pub fn smooth(f: &'a dyn Fn(f64) -> f64) -> Self {
        Self {
            smooth: f,
            left: 0.0,
            right: 0.0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut v = (self.smooth)(t);
        if self.left != 0.0 {
            v *= t.powf(self.left);
        }
        if self.right != 0.0 {
            v *= (1.0 - t).powf(self.right);
        }
        v
    }
}

/// Function argument for the fractional derivative: exact power or general.
pub enum FracFunction<'a> {
    /// coef·t^exponent (left-sided) or coef·(1−t)^exponent (right-sided).
    Power { coef: f64, exponent: f64 },
    General(Declared<'a>),
}

fn accept(i: Integral) -> Result<f64> {
    if i.converged {
        Ok(i.value)
    } else {
        Err(Error::accuracy(format!(
            "fractional integral did not converge with {} nodes",
            i.nodes_used
        )))
    }
}

/// (I^α_{1−} f)(v) = Γ(α)^{-1} ∫_v^1 f(t)(t−v)^{α−1} dt.
pub fn frac_integral_right(f: &Declared, alpha: f64, v: f64, refine: Refinement) -> Result<f64> {
    check_order(alpha)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain(format!("v must lie in [0,1], got {v}")));
    }
    if v >= 1.0 {
        return Ok(0.0);
    }
    // The t^left factor is smooth on (v,1) unless v = 0, where it merges with the kernel.
    let (p, smooth): (f64, Box<dyn Fn(f64) -> f64>) = if v == 0.0 {
        (alpha - 1.0 + f.left, Box::new(|t: f64| (f.smooth)(t)))
    } else {
        (alpha - 1.0, Box::new(|t: f64| (f.smooth)(t) * t.powf(f.left)))
    };
    let i = singular_integral(smooth, v, 1.0, p, f.right, 16, refine)?;
    Ok(accept(i)? / gamma(alpha))
}

/// (I^α_{0+} f)(x) = Γ(α)^{-1} ∫_0^x f(t)(x−t)^{α−1} dt.
pub fn frac_integral_left(f: &Declared, alpha: f64, x: f64, refine: Refinement) -> Result<f64> {
    check_order(alpha)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("x must lie in [0,1], got {x}")));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let (q, smooth): (f64, Box<dyn Fn(f64) -> f64>) = if x == 1.0 {
        (alpha - 1.0 + f.right, Box::new(|t: f64| (f.smooth)(t)))
    } else {
        (alpha - 1.0, Box::new(|t: f64| (f.smooth)(t) * (1.0 - t).powf(f.right)))
    };
    let i = singular_integral(smooth, 0.0, x, f.left, q, 16, refine)?;
    Ok(accept(i)? / gamma(alpha))
}

/// Central finite-difference weights for the first derivative on the symmetric
/// stencil {−m/2, …, m/2}·h (m odd), by Fornberg's recursion.
fn central_weights(points: usize) -> Vec<f64> {
    let half = (points / 2) as i64;
    let xs: Vec<f64> = (-half..=half).map(|k| k as f64).collect();
    let n = xs.len();
    // c[j][k]: weight of point j for derivative order k (k = 0, 1)
    let mut c = vec![[0.0f64; 2]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    for i in 1..n {
        let mut c2 = 1.0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                let prev = c[i - 1];
                c[i][1] = c1 * (prev[0] - xs[i - 1] * prev[1]) / c2;
                c[i][0] = -c1 * xs[i - 1] * prev[0] / c2;
            }
            let old = c[j];
            c[j][1] = (xs[i] * old[1] - old[0]) / c3;
            c[j][0] = xs[i] * old[0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[1]).collect()
}

/// Options for numerically differentiated fractional integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeOptions {
    /// odd number of stencil points
    pub stencil: usize,
    /// step as a fraction of the distance to the nearer endpoint
    pub relative_step: f64,
    pub refine: Refinement,
}

impl Default for DerivativeOptions {
    fn default() -> Self {
        Self {
            stencil: 5,
            relative_step: 0.02,
            refine: Refinement {
                rtol: 1e-13,
                cap: 4096,
            },
        }
    }
}

fn stencil_step(x: f64, opts: &DerivativeOptions) -> Result<f64> {
    if opts.stencil < 3 || opts.stencil % 2 == 0 {
        return Err(Error::domain("stencil must be odd and at least 3"));
    }
    let room = x.min(1.0 - x);
    if room <= 0.0 {
        return Err(Error::domain(format!("derivative point {x} must be interior")));
    }
    Ok(opts.relative_step * room / (opts.stencil / 2) as f64)
}

/// (𝒟^α_{0+} f)(x) = d/dx (I^{1−α}_{0+} f)(x).
pub fn frac_derivative_left(
    f: &FracFunction,
    alpha: f64,
    x: f64,
    opts: DerivativeOptions,
) -> Result<f64> {
    check_order(alpha)?;
    match f {
        FracFunction::Power { coef, exponent } => {
            if x <= 0.0 {
                return Err(Error::domain("power-rule derivative needs x > 0"));
            }
            Ok(coef * gamma(exponent + 1.0) / gamma(exponent + 1.0 - alpha) * x.powf(exponent - alpha))
        }
        FracFunction::General(g) => {
            let h = stencil_step(x, &opts)?;
            let w = central_weights(opts.stencil);
            let half = (opts.stencil / 2) as i64;
            let mut acc = 0.0;
            for (k, wk) in (-half..=half).zip(&w) {
                if *wk == 0.0 {
                    continue;
                }
                acc += wk * frac_integral_left(g, 1.0 - alpha, x + k as f64 * h, opts.refine)?;
            }
            Ok(acc / h)
        }
    }
}

/// (𝒟^α_{1−} f)(x) = −d/dx (I^{1−α}_{1−} f)(x).
pub fn frac_derivative_right(
    f: &FracFunction,
    alpha: f64,
    x: f64,
    opts: DerivativeOptions,
) -> Result<f64> {
    check_order(alpha)?;
    match f {
        FracFunction::Power { coef, exponent } => {
            if x >= 1.0 {
                return Err(Error::domain("power-rule derivative needs x < 1"));
            }
            Ok(coef * gamma(exponent + 1.0) / gamma(exponent + 1.0 - alpha)
                * (1.0 - x).powf(exponent - alpha))
        }
        FracFunction::General(g) => {
            let h = stencil_step(x, &opts)?;
            let w = central_weights(opts.stencil);
            let half = (opts.stencil / 2) as i64;
            let mut acc = 0.0;
            for (k, wk) in (-half..=half).zip(&w) {
                if *wk == 0.0 {
                    continue;
                }
                acc += wk * frac_integral_right(g, 1.0 - alpha, x + k as f64 * h, opts.refine)?;
            }
            Ok(-acc / h)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_five_point() {
        let w = central_weights(5);
        let want = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn right_integral_of_constant() {
        let one = |_: f64| 1.0;
        let f = Declared::smooth(&one);
        let v = frac_integral_right(&f, 0.5, 0.0, Refinement::default()).unwrap();
        assert!((v - 2.0 / std::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert_eq!(frac_integral_right(&f, 0.3, 1.0, Refinement::default()).unwrap(), 0.0);
        assert!(frac_integral_right(&f, 1.2, 0.3, Refinement::default()).is_err());
    }

    #[test]
    fn right_integral_of_power_of_complement() {
        // I^α_{1−}(1−t)^β = Γ(β+1)/Γ(α+β+1) (1−v)^{α+β}
        let one = |_: f64| 1.0;
        let (alpha, b, v) = (0.3, 0.2, 0.4);
        let f = Declared {
            smooth: &one,
            left: 0.0,
            right: b,
        };
        let got = frac_integral_right(&f, alpha, v, Refinement::default()).unwrap();
        let want = gamma(b + 1.0) / gamma(alpha + b + 1.0) * (1.0 - v).powf(alpha + b);
        assert!(((got - want) / want).abs() < 1e-10);
    }

    #[test]
    fn power_rule_examples() {
        let d = frac_derivative_left(
            &FracFunction::Power { coef: 1.0, exponent: 0.8 },
            0.9,
            0.3,
            DerivativeOptions::default(),
        )
        .unwrap();
        let want = gamma(1.8) / gamma(0.9) * 0.3f64.powf(-0.1);
        assert!(((d - want) / want).abs() < 1e-14);
        let d = frac_derivative_left(
            &FracFunction::Power { coef: 1.0, exponent: 0.4 },
            0.4,
            0.7,
            DerivativeOptions::default(),
        )
        .unwrap();
        assert!((d - gamma(1.4)).abs() < 1e-14);
    }

    #[test]
    fn numeric_derivative_matches_power_rule() {
        let (alpha, b, x) = (0.3, 0.7, 0.5);
        let one = |_: f64| 1.0;
        let general = FracFunction::General(Declared {
            smooth: &one,
            left: b,
            right: 0.0,
        });
        let num = frac_derivative_left(&general, alpha, x, DerivativeOptions::default()).unwrap();
        let exact = frac_derivative_left(
            &FracFunction::Power { coef: 1.0, exponent: b },
            alpha,
            x,
            DerivativeOptions::default(),
        )
        .unwrap();
        assert!(((num - exact) / exact).abs() < 1e-6, "{num} vs {exact}");
    }
}
