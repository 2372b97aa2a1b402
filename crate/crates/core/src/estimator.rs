//! Likelihood, maximum likelihood estimate and error-distribution checks.
//!
//! With N(T) = ∫_0^T h_T dY and ⟨N⟩(T) its variance under θ = 0, the log
//! likelihood is θ·d·N − ½θ²d²⟨N⟩, maximized at θ̂ = N/(d⟨N⟩).

use crate::error::{Error, Result};
use crate::fredholm::FredholmSolution;
use crate::gaussian_sim::SamplePath;
use crate::model::DerivedConstants;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Fewest increments accepted for the stochastic integral.
pub const MIN_PATH_POINTS: usize = 128;
/// Refinement warning threshold as a fraction of ⟨N⟩^{1/2}.
pub const REFINEMENT_TOL: f64 = 0.01;

/// h_T at the segment midpoints of a path grid, plus the same for the grid
/// with every other point removed (for the refinement report).
#[derive(Debug, Clone)]
pub struct StieltjesWeights {
    pub times: Vec<f64>,
    fine: Vec<f64>,
    coarse_index: Vec<usize>,
    coarse: Vec<f64>,
    qv_n: f64,
}

fn midpoints(times: &[f64]) -> Vec<f64> {
    times.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

impl StieltjesWeights {
    pub fn new(sol: &FredholmSolution, times: &[f64]) -> Result<Self> {
        Self::from_fn(times, sol.horizon, sol.qv_n, |ts| sol.h_t_many(ts))
    }

    /// Weights from a tabulated h_T.
    pub fn from_table(table: &TabulatedH, times: &[f64], qv_n: f64) -> Result<Self> {
        Self::from_fn(times, table.horizon(), qv_n, |ts| Ok(ts.iter().map(|&t| table.eval(t)).collect()))
    }

    fn from_fn<F: Fn(&[f64]) -> Result<Vec<f64>>>(times: &[f64], horizon: f64, qv_n: f64, h: F) -> Result<Self> {
        if times.len() < MIN_PATH_POINTS + 1 {
            return Err(Error::domain(format!(
                "path needs at least {MIN_PATH_POINTS} increments, got {}",
                times.len().saturating_sub(1)
            )));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("path grid must start at 0 and increase strictly"));
        }
        let last = *times.last().expect("nonempty");
        if (last - horizon).abs() > 1e-12 * horizon {
            return Err(Error::domain(format!(
                "path horizon {last} differs from solution horizon {horizon}"
            )));
        }
        let fine = h(&midpoints(times))?;
        let mut coarse_index: Vec<usize> = (0..times.len()).step_by(2).collect();
        if *coarse_index.last().expect("nonempty") != times.len() - 1 {
            coarse_index.push(times.len() - 1);
        }
        let coarse_times: Vec<f64> = coarse_index.iter().map(|&i| times[i]).collect();
        let coarse = h(&midpoints(&coarse_times))?;
        Ok(Self {
            times: times.to_vec(),
            fine,
            coarse_index,
            coarse,
            qv_n,
        })
    }

    /// Midpoint weights h_T((t_i + t_{i+1})/2).
    pub fn weights(&self) -> &[f64] {
        &self.fine
    }

    fn check(&self, path: &SamplePath) -> Result<()> {
        if path.times.len() != self.times.len() || path.times.iter().zip(&self.times).any(|(a, b)| a != b) {
            return Err(Error::domain("path grid differs from the grid the weights were built for"));
        }
        Ok(())
    }

    /// Σ h_T(t_i*)(X(t_{i+1}) − X(t_i)) without the refinement report.
    pub fn sum(&self, values: &[f64]) -> f64 {
        self.fine.iter().zip(values.windows(2)).map(|(h, w)| h * (w[1] - w[0])).sum()
    }

    pub fn integrate(&self, path: &SamplePath) -> Result<StochasticIntegral> {
        self.check(path)?;
        let value = self.sum(&path.values);
        let half_resolution: f64 = self
            .coarse
            .iter()
            .zip(self.coarse_index.windows(2))
            .map(|(h, w)| h * (path.values[w[1]] - path.values[w[0]]))
            .sum();
        let refinement = (value - half_resolution).abs();
        let warning = (refinement > REFINEMENT_TOL * self.qv_n.sqrt()).then(|| {
            format!(
                "coarse grid: half-resolution difference {refinement:.3e} exceeds {REFINEMENT_TOL} of sqrt(qv) {:.3e}",
                self.qv_n.sqrt()
            )
        });
        Ok(StochasticIntegral {
            value,
            half_resolution,
            refinement,
            warning,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticIntegral {
    pub value: f64,
    pub half_resolution: f64,
    pub refinement: f64,
    pub warning: Option<String>,
}

/// N(T) = ∫_0^T h_T dX by midpoint Stieltjes sum.
pub fn stochastic_integral_n(sol: &FredholmSolution, path: &SamplePath) -> Result<StochasticIntegral> {
    StieltjesWeights::new(sol, &path.times)?.integrate(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub theta_hat: f64,
    pub n_t: f64,
    pub qv_n: f64,
    pub drift_norm: f64,
    /// 1/(d²⟨N⟩)
    pub variance_pred: f64,
    /// 1/∫_0^T h_T(s)s^{1−2H1}ds
    pub variance_pred_paper: f64,
    pub refinement: Option<f64>,
    pub warning: Option<String>,
}

impl EstimatorResult {
    /// Assemble from N, ⟨N⟩, the drift normalization and ∫h_T s^{1−2H1}ds.
    pub fn from_parts(n_t: f64, qv_n: f64, drift_norm: f64, h_moment: f64) -> Result<Self> {
        if !(qv_n > 0.0 && drift_norm > 0.0 && h_moment > 0.0) || !n_t.is_finite() {
            return Err(Error::domain("estimator needs finite N and positive qv, drift norm and moment"));
        }
        Ok(Self {
            theta_hat: n_t / (drift_norm * qv_n),
            n_t,
            qv_n,
            drift_norm,
            variance_pred: 1.0 / (drift_norm * drift_norm * qv_n),
            variance_pred_paper: 1.0 / h_moment,
            refinement: None,
            warning: None,
        })
    }

    /// θ·d·N − ½θ²d²⟨N⟩.
    pub fn log_likelihood(&self, theta: f64) -> f64 {
        log_likelihood(self.n_t, self.qv_n, self.drift_norm, theta)
    }
}

pub fn log_likelihood(n_t: f64, qv_n: f64, drift_norm: f64, theta: f64) -> f64 {
    theta * drift_norm * n_t - 0.5 * theta * theta * drift_norm * drift_norm * qv_n
}

/// The estimate from an observed Y path on [0, T].
pub fn mle(sol: &FredholmSolution, y: &SamplePath, constants: &DerivedConstants) -> Result<EstimatorResult> {
    if (y.horizon() - sol.horizon).abs() > 1e-12 * sol.horizon {
        return Err(Error::domain(format!(
            "path horizon {} differs from solution horizon {}",
            y.horizon(),
            sol.horizon
        )));
    }
    let n = stochastic_integral_n(sol, y)?;
    let mut out = EstimatorResult::from_parts(n.value, sol.qv_n, constants.drift_norm, sol.h_t_moment())?;
    out.refinement = Some(n.refinement);
    out.warning = n.warning;
    Ok(out)
}

/// h_T tabulated at increasing times in (0, T]: linear between entries and
/// constant before the first one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedH {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedH {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::domain("h table needs matching columns with at least two rows"));
        }
        if !(times[0] > 0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("h table times must be positive and strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("h table values must be finite"));
        }
        Ok(Self { times, values })
    }

    /// h_T at `points` times graded toward 0 with exponent 2.
    pub fn from_solution(sol: &FredholmSolution, points: usize) -> Result<Self> {
        let times: Vec<f64> = (1..=points)
            .map(|i| sol.horizon * (i as f64 / points as f64).powi(2))
            .collect();
        let values = sol.h_t_many(&times)?;
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty table")
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x < t);
        if k == 0 {
            return self.values[0];
        }
        if k == self.times.len() {
            return self.values[k - 1];
        }
        let (a, b) = (self.times[k - 1], self.times[k]);
        let w = (t - a) / (b - a);
        self.values[k - 1] * (1.0 - w) + self.values[k] * w
    }

    /// ∫_0^T h(t) t^{1−2H1} dt, exact for the interpolant.
    pub fn moment(&self, h1: f64) -> f64 {
        let q = 1.0 - 2.0 * h1;
        let p1 = |x: f64| x.powf(q + 1.0) / (q + 1.0);
        let p2 = |x: f64| x.powf(q + 2.0) / (q + 2.0);
        let mut acc = self.values[0] * p1(self.times[0]);
        for k in 1..self.times.len() {
            let (a, b) = (self.times[k - 1], self.times[k]);
            let slope = (self.values[k] - self.values[k - 1]) / (b - a);
            acc += (self.values[k - 1] - slope * a) * (p1(b) - p1(a)) + slope * (p2(b) - p2(a));
        }
        acc
    }
}

/// The estimate from a tabulated h_T; ⟨N⟩ = σ²γ²∫h_T t^{1−2H1}dt on the table.
pub fn mle_tabulated(table: &TabulatedH, y: &SamplePath, constants: &DerivedConstants) -> Result<EstimatorResult> {
    let moment = table.moment(constants.h1);
    let qv_n = constants.sigma * constants.sigma * constants.gamma_sq() * moment;
    let n = StieltjesWeights::from_table(table, &y.times, qv_n)?.integrate(y)?;
    let mut out = EstimatorResult::from_parts(n.value, qv_n, constants.drift_norm, moment)?;
    out.refinement = Some(n.refinement);
    out.warning = n.warning;
    Ok(out)
}

/// Kolmogorov–Smirnov test of a sample against the standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_standard_normal(sample: &[f64]) -> Result<KsTest> {
    if sample.is_empty() || sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("KS test needs a nonempty finite sample"));
    }
    let normal = Normal::standard();
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let statistic = xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = normal.cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    });
    Ok(KsTest {
        statistic,
        p_value: kolmogorov_survival((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * statistic),
    })
}

/// P(K > x) for the Kolmogorov distribution.
fn kolmogorov_survival(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
