//! Piecewise Chebyshev interpolation on geometrically graded panels.
//!
//! Used to tabulate one-variable kernel profiles whose only non-analytic
//! behaviour sits at x = 0: panels [2^{-k-1}, 2^{-k}]·top resolve power laws
//! uniformly, and below the last panel a declared tail model takes over.

use rayon::prelude::*;
use std::f64::consts::PI;

/// Behaviour below the smallest tabulated panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    /// f(x) ≈ f(0) + (f(edge) − f(0))·(x/edge)^exponent
    ToValue { at_zero: f64, exponent: f64 },
    /// f(x) ≈ coef·x^exponent + (f(edge) − coef·edge^exponent)
    Singular { coef: f64, exponent: f64 },
}

#[derive(Debug, Clone)]
pub struct GeometricTable {
    top: f64,
    levels: usize,
    points: usize,
    cheb: Vec<f64>,
    bary: Vec<f64>,
    values: Vec<f64>,
    edge: f64,
    edge_value: f64,
    tail: Tail,
}

fn chebyshev(points: usize) -> (Vec<f64>, Vec<f64>) {
    let m = points as f64;
    let nodes = (0..points)
        .map(|j| ((2 * j + 1) as f64 * PI / (2.0 * m)).cos())
        .collect();
    let bary = (0..points)
        .map(|j| {
            let s = ((2 * j + 1) as f64 * PI / (2.0 * m)).sin();
            if j % 2 == 0 {
                s
            } else {
                -s
            }
        })
        .collect();
    (nodes, bary)
}

impl GeometricTable {
    /// Tabulate f on (0, top] with `levels` panels and `points` Chebyshev
    /// points per panel. `f` must be accurate at every sampled point.
    pub fn build<F>(top: f64, levels: usize, points: usize, tail: Tail, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let (cheb, bary) = chebyshev(points);
        let mut samples = Vec::with_capacity(levels * points + 1);
        for k in 0..levels {
            let hi = top * 0.5f64.powi(k as i32);
            let lo = 0.5 * hi;
            for &t in &cheb {
                samples.push(0.5 * (lo + hi) + 0.5 * (hi - lo) * t);
            }
        }
        let edge = top * 0.5f64.powi(levels as i32);
        samples.push(edge);
        let mut values: Vec<f64> = samples.par_iter().map(|&x| f(x)).collect();
        let edge_value = values.pop().expect("edge sample");
        Self {
            top,
            levels,
            points,
            cheb,
            bary,
            values,
            edge,
            edge_value,
            tail,
        }
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn top(&self) -> f64 {
        self.top
    }

    /// Interpolated value; x must lie in [0, top].
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.edge {
            return match self.tail {
                Tail::ToValue { at_zero, exponent } => {
                    at_zero + (self.edge_value - at_zero) * (x / self.edge).powf(exponent)
                }
                Tail::Singular { coef, exponent } => {
                    coef * x.powf(exponent) + (self.edge_value - coef * self.edge.powf(exponent))
                }
            };
        }
        let ratio = self.top / x;
        let mut k = if ratio <= 1.0 { 0 } else { ratio.log2().floor() as usize };
        if k >= self.levels {
            k = self.levels - 1;
        }
        let mut hi = self.top * 0.5f64.powi(k as i32);
        if x > hi && k > 0 {
            k -= 1;
            hi *= 2.0;
        }
        let lo = 0.5 * hi;
        let t = (2.0 * x - lo - hi) / (hi - lo);
        let vals = &self.values[k * self.points..(k + 1) * self.points];
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.points {
            let d = t - self.cheb[j];
            if d == 0.0 {
                return vals[j];
            }
            let c = self.bary[j] / d;
            num += c * vals[j];
            den += c;
        }
        num / den
    }
}
