//! Exact Gaussian simulation of the observed processes and the linear
//! transform between the raw observation Z(t) = θt + σB^{H1}(t) + B^{H2}(t)
//! and Y(t) = ∫_0^t (t−s)^{½−H1} s^{½−H1} dZ(s).
//!
//! Under θ = 0, Y = σX1 + X2 with X1 the fundamental martingale of B^{H1}
//! (variance ε t^{2−2H1}) and X2 = ∫ l dB^{H2}; this noise part is called X.

use crate::error::{Error, Result};
use crate::kernels::KernelContext;
use crate::model::DerivedConstants;
use crate::numerics::special::beta;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

/// Smallest number of grid points in (0, t] accepted by the transforms.
pub const MIN_TRANSFORM_POINTS: usize = 32;
const JITTER_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathLabel {
    Z,
    Y,
    X,
    X1,
    X2,
    Fbm,
}

/// A path on a grid starting at 0 with value 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub label: PathLabel,
}

impl SamplePath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, label: PathLabel) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::domain("a path needs matching times and values, at least two points"));
        }
        if times[0] != 0.0 || values[0] != 0.0 {
            return Err(Error::domain("paths start at time 0 with value 0"));
        }
        check_increasing(&times[1..])?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("path values must be finite"));
        }
        Ok(Self { times, values, label })
    }

    /// Prepend (0, 0) to values observed at positive times.
    fn from_positive(times: &[f64], values: Vec<f64>, label: PathLabel) -> Self {
        let mut t = Vec::with_capacity(times.len() + 1);
        t.push(0.0);
        t.extend_from_slice(times);
        let mut v = Vec::with_capacity(values.len() + 1);
        v.push(0.0);
        v.extend(values);
        Self { times: t, values: v, label }
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty path")
    }

    /// Piecewise-linear interpolant.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.horizon()) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon())));
        }
        let k = self.times.partition_point(|&x| x < t);
        if k < self.times.len() && self.times[k] == t {
            return Ok(self.values[k]);
        }
        let (a, b) = (self.times[k - 1], self.times[k]);
        let w = (t - a) / (b - a);
        Ok(self.values[k - 1] * (1.0 - w) + self.values[k] * w)
    }
}

fn check_increasing(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::domain("empty time grid"));
    }
    if !(times[0] > 0.0) {
        return Err(Error::domain(format!("first grid time must be positive, got {}", times[0])));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::domain("grid times must be finite and strictly increasing"));
    }
    Ok(())
}

/// n points T·(i/n)^exponent, i = 1..n.
pub fn graded_times(n: usize, horizon: f64, exponent: f64) -> Result<Vec<f64>> {
    if n == 0 || !(horizon > 0.0) || !(exponent >= 1.0) {
        return Err(Error::domain("graded grid needs n ≥ 1, T > 0 and exponent ≥ 1"));
    }
    Ok((1..=n).map(|i| horizon * (i as f64 / n as f64).powf(exponent)).collect())
}

/// Generator for replicate `index` of a study seeded with `master`.
pub fn replicate_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// E[B^H(t)B^H(s)].
pub fn fbm_covariance(h: f64, t: f64, s: f64) -> f64 {
    0.5 * (t.powf(2.0 * h) + s.powf(2.0 * h) - (t - s).abs().powf(2.0 * h))
}

/// E[X(t)X(s)] = σ²ε(t∧s)^{2−2H1} + E[X2(t)X2(s)].
pub fn covariance_x(ctx: &KernelContext, t: f64, s: f64) -> Result<f64> {
    if !(t >= 0.0 && s >= 0.0) {
        return Err(Error::domain(format!("times must be nonnegative, got {t}, {s}")));
    }
    let c = ctx.constants();
    let m = t.min(s);
    Ok(c.sigma * c.sigma * c.epsilon_h1 * m.powf(2.0 - 2.0 * c.h1) + ctx.covariance_x2(t, s)?)
}

/// Covariance of a Gaussian process on a grid with its Cholesky factor and a
/// deterministic mean.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub times: Vec<f64>,
    pub matrix: DMatrix<f64>,
    pub drift: Vec<f64>,
    pub chol: DMatrix<f64>,
    /// diagonal jitter that was needed for the factorization
    pub jitter: f64,
}

fn factorize(matrix: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = matrix.nrows();
    let trace = matrix.trace();
    let mut jitter = 0.0;
    for attempt in 0..=JITTER_ATTEMPTS {
        let m = if jitter > 0.0 {
            matrix + DMatrix::identity(n, n) * jitter
        } else {
            matrix.clone()
        };
        if let Some(ch) = m.cholesky() {
            return Ok((ch.l(), jitter));
        }
        if attempt < JITTER_ATTEMPTS {
            jitter = if jitter == 0.0 { 1e-12 * trace / n as f64 } else { jitter * 10.0 };
        }
    }
    Err(Error::Factorization(format!(
        "covariance matrix of size {n} is not positive definite after jitter {jitter:.3e}"
    )))
}

impl CovarianceModel {
    fn build<F: Fn(f64, f64) -> Result<f64> + Sync>(times: &[f64], cov: F, drift: Vec<f64>) -> Result<Self> {
        use rayon::prelude::*;
        check_increasing(times)?;
        let n = times.len();
        let rows = (0..n)
            .into_par_iter()
            .map(|i| (0..=i).map(|j| cov(times[i], times[j])).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut matrix = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
        let (chol, jitter) = factorize(&matrix)?;
        Ok(Self {
            times: times.to_vec(),
            matrix,
            drift,
            chol,
            jitter,
        })
    }

    /// The noise X = σX1 + X2 (zero mean).
    pub fn for_x(ctx: &KernelContext, times: &[f64]) -> Result<Self> {
        Self::build(times, |t, s| covariance_x(ctx, t, s), vec![0.0; times.len()])
    }

    /// Y = θ𝓑t^{2−2H1} + X.
    pub fn for_y(ctx: &KernelContext, times: &[f64], theta: f64) -> Result<Self> {
        let c = *ctx.constants();
        let drift = times.iter().map(|t| theta * c.script_b * t.powf(2.0 - 2.0 * c.h1)).collect();
        Self::build(times, |t, s| covariance_x(ctx, t, s), drift)
    }

    /// Fractional Brownian motion B^H.
    pub fn for_fbm(h: f64, times: &[f64]) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::domain(format!("Hurst index must lie in (0,1), got {h}")));
        }
        Self::build(times, |t, s| Ok(fbm_covariance(h, t, s)), vec![0.0; times.len()])
    }

    /// Values at `times` (without the point 0).
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.times.len();
        let g = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let x = &self.chol * g;
        x.iter().zip(&self.drift).map(|(a, b)| a + b).collect()
    }

    pub fn sample_path<R: rand::Rng + ?Sized>(&self, rng: &mut R, label: PathLabel) -> SamplePath {
        SamplePath::from_positive(&self.times, self.sample(rng), label)
    }

    /// ‖LLᵀ − C‖_F/‖C‖_F.
    pub fn factorization_error(&self) -> f64 {
        (&self.chol * self.chol.transpose() - &self.matrix).norm() / self.matrix.norm()
    }
}

pub fn simulate_x(ctx: &KernelContext, times: &[f64], seed: u64) -> Result<SamplePath> {
    Ok(CovarianceModel::for_x(ctx, times)?.sample_path(&mut replicate_rng(seed, 0), PathLabel::X))
}

pub fn simulate_y(ctx: &KernelContext, times: &[f64], seed: u64, theta: f64) -> Result<SamplePath> {
    Ok(CovarianceModel::for_y(ctx, times, theta)?.sample_path(&mut replicate_rng(seed, 0), PathLabel::Y))
}

pub fn simulate_fbm(h: f64, times: &[f64], seed: u64) -> Result<SamplePath> {
    Ok(CovarianceModel::for_fbm(h, times)?.sample_path(&mut replicate_rng(seed, 0), PathLabel::Fbm))
}

/// Factors for the raw observation Z = θt + σB^{H1} + B^{H2} on one grid.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub rough: CovarianceModel,
    pub smooth: CovarianceModel,
    pub sigma: f64,
    pub theta: f64,
}

impl ObservationModel {
    pub fn new(constants: &DerivedConstants, times: &[f64], theta: f64) -> Result<Self> {
        Ok(Self {
            rough: CovarianceModel::for_fbm(constants.h1, times)?,
            smooth: CovarianceModel::for_fbm(constants.h2, times)?,
            sigma: constants.sigma,
            theta,
        })
    }

    pub fn sample_path<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> SamplePath {
        let a = self.rough.sample(rng);
        let b = self.smooth.sample(rng);
        let v = self
            .rough
            .times
            .iter()
            .zip(a.iter().zip(&b))
            .map(|(t, (x, y))| self.theta * t + self.sigma * x + y)
            .collect();
        SamplePath::from_positive(&self.rough.times, v, PathLabel::Z)
    }
}

pub fn simulate_z(constants: &DerivedConstants, times: &[f64], seed: u64, theta: f64) -> Result<SamplePath> {
    Ok(ObservationModel::new(constants, times, theta)?.sample_path(&mut replicate_rng(seed, 0)))
}

/// ∫_0^x r^{a−1}(1−r)^{a−1} dr / B(a,a) between x = lo/t and x = hi/t, given
/// the exact distances of lo and hi to t.
fn symmetric_beta_mass(a: f64, t: f64, lo: f64, hi: f64, lo_gap: f64, hi_gap: f64) -> f64 {
    let cdf = |s: f64, gap: f64| -> (f64, bool) {
        // (value, is_complement): I_x or I_{1−x}
        if s <= gap {
            (beta_reg(a, a, s / t), false)
        } else {
            (beta_reg(a, a, gap / t), true)
        }
    };
    let (fl, cl) = cdf(lo, lo_gap);
    let (fh, ch) = cdf(hi, hi_gap);
    match (cl, ch) {
        (false, false) => fh - fl,
        (true, true) => fl - fh,
        (false, true) => 1.0 - fh - fl,
        (true, false) => fh - (1.0 - fl),
    }
}

/// Linear map from the increments of a path on `times` (starting at 0) to
/// Y(t) = ∫_0^t (t−s)^{½−H1}s^{½−H1} dZ(s) for the piecewise-linear
/// interpolant of Z, at each output time. Row j holds, for each segment k, the
/// exact integral of the kernel over the segment divided by its length.
#[derive(Debug, Clone)]
pub struct ForwardTransform {
    pub outputs: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl ForwardTransform {
    pub fn new(times: &[f64], outputs: &[f64], h1: f64) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::domain("transform grid must start at 0"));
        }
        check_increasing(&times[1..])?;
        let a = 1.5 - h1;
        let scale_b = beta(a, a);
        let last = *times.last().expect("nonempty");
        let mut weights = Vec::with_capacity(outputs.len());
        for &t in outputs {
            if !(t > 0.0 && t <= last) {
                return Err(Error::domain(format!("output time {t} outside (0, {last}]")));
            }
            let inside = times.partition_point(|&x| x < t);
            if inside < MIN_TRANSFORM_POINTS {
                return Err(Error::accuracy(format!(
                    "only {inside} grid points in (0, {t}]; at least {MIN_TRANSFORM_POINTS} needed"
                )));
            }
            let norm = t.powf(2.0 - 2.0 * h1) * scale_b;
            let mut row = Vec::with_capacity(inside);
            for k in 0..inside {
                let lo = times[k];
                let hi = times[k + 1].min(t);
                let mass = symmetric_beta_mass(a, t, lo, hi, t - lo, t - hi);
                row.push(norm * mass / (times[k + 1] - times[k]));
            }
            weights.push(row);
        }
        Ok(Self {
            outputs: outputs.to_vec(),
            weights,
        })
    }

    /// Y at the output times from the values of Z on the transform grid.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| row.iter().enumerate().map(|(k, w)| w * (values[k + 1] - values[k])).sum())
            .collect()
    }
}

/// Y(t) = ∫_0^t (t−s)^{½−H1}s^{½−H1} dZ(s) at every grid time of Z
/// (exact for the piecewise-linear interpolant).
pub fn molchan_transform(z: &SamplePath, constants: &DerivedConstants) -> Result<SamplePath> {
    let outputs: Vec<f64> = z.times[1..].iter().copied().filter(|&t| z.times.partition_point(|&x| x < t) >= MIN_TRANSFORM_POINTS).collect();
    if outputs.is_empty() {
        return Err(Error::accuracy(format!("path has fewer than {MIN_TRANSFORM_POINTS} points")));
    }
    let tf = ForwardTransform::new(&z.times, &outputs, constants.h1)?;
    let y = tf.apply(&z.values);
    // early times with too few points are filled by the same exact formula
    let early: Vec<f64> = z.times[1..].iter().copied().filter(|t| *t < outputs[0]).collect();
    let mut values = vec![0.0];
    for &t in &early {
        values.push(forward_unchecked(z, t, constants.h1));
    }
    values.extend(y);
    SamplePath::new(z.times.clone(), values, PathLabel::Y)
}

fn forward_unchecked(z: &SamplePath, t: f64, h1: f64) -> f64 {
    let a = 1.5 - h1;
    let norm = t.powf(2.0 - 2.0 * h1) * beta(a, a);
    let inside = z.times.partition_point(|&x| x < t);
    (0..inside)
        .map(|k| {
            let (lo, hi) = (z.times[k], z.times[k + 1].min(t));
            let mass = symmetric_beta_mass(a, t, lo, hi, t - lo, t - hi);
            norm * mass * (z.values[k + 1] - z.values[k]) / (z.times[k + 1] - z.times[k])
        })
        .sum()
}

/// Z(t) = B(H1−½, 3/2−H1)^{-1} ∫_0^t u^{H1−½} dΦ(u) with
/// Φ(u) = ∫_0^u (u−s)^{H1−3/2} Y(s) ds, on the grid of Y.
///
/// Φ is exact for the piecewise-linear interpolant of Y; the outer integral
/// is a Stieltjes sum with u at segment midpoints.
pub fn inverse_transform(y: &SamplePath, constants: &DerivedConstants) -> Result<SamplePath> {
    let h1 = constants.h1;
    let n = y.times.len();
    if n - 1 < MIN_TRANSFORM_POINTS {
        return Err(Error::accuracy(format!("path has fewer than {MIN_TRANSFORM_POINTS} points")));
    }
    let p = h1 - 1.5;
    let norm = beta(h1 - 0.5, 1.5 - h1);
    let (ts, ys) = (&y.times, &y.values);
    use rayon::prelude::*;
    let phi: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let t = ts[j];
            let mut acc = 0.0;
            for k in 0..j {
                let (a, b) = (ts[k], ts[k + 1]);
                let slope = (ys[k + 1] - ys[k]) / (b - a);
                let (ra, rb) = (t - a, t - b);
                // ∫_{rb}^{ra} r^p (Y(b) − slope·(r − rb)) dr
                let i0 = (ra.powf(p + 1.0) - rb.powf(p + 1.0)) / (p + 1.0);
                let i1 = (ra.powf(p + 2.0) - rb.powf(p + 2.0)) / (p + 2.0);
                acc += (ys[k + 1] + slope * rb) * i0 - slope * i1;
            }
            acc / norm
        })
        .collect();
    let mut values = Vec::with_capacity(n);
    values.push(0.0);
    let mut z = 0.0;
    for k in 1..n {
        let mid = 0.5 * (ts[k - 1] + ts[k]);
        z += mid.powf(h1 - 0.5) * (phi[k] - phi[k - 1]);
        values.push(z);
    }
    SamplePath::new(ts.clone(), values, PathLabel::Z)
}
