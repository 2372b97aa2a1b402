//! Experiment orchestration: Monte Carlo studies of the estimator, the exact
//! variance law over growing horizons, and report export.

use crate::closed_form::{h0_moment, limit_constant, scaled_variance_limit};
use crate::error::{Error, Result};
use crate::estimator::{ks_standard_normal, StieltjesWeights};
use crate::fredholm::{assemble, build_grid, solve_second_kind, DiscretizedOperator, FredholmSolution};
use crate::gaussian_sim::{graded_times, replicate_rng, CovarianceModel, PathLabel, SamplePath};
use crate::kernels::KernelContext;
use crate::model::{derive_constants, DerivedConstants, ModelParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Grading exponent of the simulated path grids near 0.
pub const PATH_GRADING: f64 = 2.0;
/// Grading exponent of the solver grid.
pub const SOLVER_GRADING: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub grid_n: usize,
    pub path_points: usize,
    pub replicates: usize,
    pub master_seed: u64,
    pub t_sequence: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params: ModelParams {
                hurst: crate::model::HurstPair::new(0.6, 0.9).expect("valid default pair"),
                sigma: 1.0,
                theta: 1.0,
                horizon: 1.0,
            },
            grid_n: 256,
            path_points: 512,
            replicates: 1000,
            master_seed: 20240101,
            t_sequence: vec![1.0, 5.0, 25.0, 125.0],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<DerivedConstants> {
        if self.replicates < 1 {
            return Err(Error::domain("replicates must be at least 1"));
        }
        if self.path_points < 128 {
            return Err(Error::domain(format!("path_points must be at least 128, got {}", self.path_points)));
        }
        if self.grid_n == 0 || self.grid_n % 8 != 0 {
            return Err(Error::domain(format!("grid_n must be a positive multiple of 8, got {}", self.grid_n)));
        }
        if self.t_sequence.is_empty()
            || self.t_sequence.iter().any(|t| !(*t > 0.0 && t.is_finite()))
            || self.t_sequence.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::domain("t_sequence must be positive and strictly increasing"));
        }
        self.params.hurst.require_solver_admissible()?;
        derive_constants(&self.params)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::domain(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Monte Carlo summary at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: f64,
    pub mean_hat: f64,
    pub se_mean: f64,
    pub var_hat: f64,
    pub var_pred: f64,
    pub var_pred_paper: f64,
    pub ks_stat: f64,
    pub ks_pvalue: f64,
    /// T^{2−2H2}·var_hat
    pub scaled_var: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub theta_true: f64,
    pub mean_hat: f64,
    pub se_mean: f64,
    pub var_hat: f64,
    pub var_pred: f64,
    pub var_pred_paper: f64,
    pub ks_stat: f64,
    pub ks_pvalue: f64,
    pub per_t_scaled_var: Vec<(f64, f64)>,
    /// lim T^{2−2H2}·Var θ̂ from the closed-form limit solution
    pub asymptotic_var_closed_form: f64,
    /// estimates at the primary horizon, in replicate order
    pub theta_hats: Vec<f64>,
    pub per_horizon: Vec<HorizonSummary>,
}

/// Shared state for one Hurst pair: kernel context and assembled operator.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub constants: DerivedConstants,
    pub context: Arc<KernelContext>,
    pub operator: DiscretizedOperator,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let constants = config.validate()?;
        let context = Arc::new(KernelContext::new(constants));
        let operator = assemble(context.clone(), &build_grid(config.grid_n, SOLVER_GRADING)?)?;
        Ok(Self {
            config,
            constants,
            context,
            operator,
        })
    }

    pub fn solve(&self, horizon: f64) -> Result<FredholmSolution> {
        solve_second_kind(&self.operator, horizon, &self.constants)
    }

    /// θ̂ for replicates 0..R at one horizon, in replicate order.
    pub fn simulate_estimates(&self, horizon: f64, seed: u64) -> Result<(FredholmSolution, Vec<f64>, Option<String>)> {
        let sol = self.solve(horizon)?;
        let mut times = vec![0.0];
        times.extend(graded_times(self.config.path_points, horizon, PATH_GRADING)?);
        let weights = StieltjesWeights::new(&sol, &times)?;
        let model = CovarianceModel::for_y(&self.context, &times[1..], self.config.params.theta)?;
        let scale = self.constants.drift_norm * sol.qv_n;
        let estimates = (0..self.config.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = replicate_rng(seed, r);
                let mut values = Vec::with_capacity(times.len());
                values.push(0.0);
                values.extend(model.sample(&mut rng));
                let estimate = weights.sum(&values) / scale;
                if estimate.is_finite() {
                    Ok(estimate)
                } else {
                    Err(Error::Replicate {
                        replicate: r,
                        seed,
                        source: Box::new(Error::Solver("non-finite estimate".into())),
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        // refinement report on the first replicate
        let mut values = vec![0.0];
        values.extend(model.sample(&mut replicate_rng(seed, 0)));
        let path = SamplePath::new(times, values, PathLabel::Y)?;
        let warning = weights.integrate(&path)?.warning;
        Ok((sol, estimates, warning))
    }

    fn summarize(&self, horizon: f64, sol: &FredholmSolution, estimates: &[f64], warning: Option<String>) -> Result<HorizonSummary> {
        let theta = self.config.params.theta;
        let r = estimates.len() as f64;
        let mean_hat = estimates.iter().sum::<f64>() / r;
        let var_hat = if estimates.len() > 1 {
            estimates.iter().map(|x| (x - mean_hat).powi(2)).sum::<f64>() / (r - 1.0)
        } else {
            0.0
        };
        let d = self.constants.drift_norm;
        let var_pred = 1.0 / (d * d * sol.qv_n);
        let standardized: Vec<f64> = estimates.iter().map(|x| (x - theta) / var_pred.sqrt()).collect();
        let ks = ks_standard_normal(&standardized)?;
        Ok(HorizonSummary {
            horizon,
            mean_hat,
            se_mean: (var_hat / r).sqrt(),
            var_hat,
            var_pred,
            var_pred_paper: 1.0 / sol.h_t_moment(),
            ks_stat: ks.statistic,
            ks_pvalue: ks.p_value,
            scaled_var: horizon.powf(2.0 - 2.0 * self.constants.h2) * var_hat,
            warning: warning.or_else(|| sol.warning.clone()),
        })
    }

    /// Monte Carlo at the configured horizon and at every horizon of the
    /// sequence; replicate k at horizon index j uses stream k of seed
    /// master_seed + j + 1 (the primary horizon uses master_seed itself).
    pub fn run_mc(&self) -> Result<MCReport> {
        let primary_horizon = self.config.params.horizon;
        let (sol, theta_hats, warning) = self.simulate_estimates(primary_horizon, self.config.master_seed)?;
        let primary = self.summarize(primary_horizon, &sol, &theta_hats, warning)?;
        let mut per_horizon = Vec::with_capacity(self.config.t_sequence.len());
        for (j, &t) in self.config.t_sequence.iter().enumerate() {
            if t == primary_horizon {
                per_horizon.push(primary.clone());
                continue;
            }
            let seed = self.config.master_seed.wrapping_add(j as u64 + 1);
            let (sol, est, warning) = self.simulate_estimates(t, seed)?;
            per_horizon.push(self.summarize(t, &sol, &est, warning)?);
        }
        Ok(MCReport {
            theta_true: self.config.params.theta,
            mean_hat: primary.mean_hat,
            se_mean: primary.se_mean,
            var_hat: primary.var_hat,
            var_pred: primary.var_pred,
            var_pred_paper: primary.var_pred_paper,
            ks_stat: primary.ks_stat,
            ks_pvalue: primary.ks_pvalue,
            per_t_scaled_var: per_horizon.iter().map(|s| (s.horizon, s.scaled_var)).collect(),
            asymptotic_var_closed_form: scaled_variance_limit(&self.constants)?.value,
            theta_hats,
            per_horizon,
        })
    }

    /// Exact variance 1/(d²⟨N⟩(T)) over the horizon sequence; no simulation.
    pub fn run_asymptotics(&self) -> Result<AsymptoticsReport> {
        if self.config.t_sequence.len() < 3 {
            return Err(Error::domain("asymptotics need at least three horizons"));
        }
        let c = &self.constants;
        let limit_moment = h0_moment(c, limit_constant(c))?.value;
        let rows: Vec<AsymptoticsRow> = self
            .config
            .t_sequence
            .iter()
            .map(|&t| match self.solve(t) {
                Ok(sol) => {
                    let var_exact = 1.0 / (c.drift_norm * c.drift_norm * sol.qv_n);
                    AsymptoticsRow {
                        horizon: t,
                        var_exact,
                        scaled_var: t.powf(2.0 - 2.0 * c.h2) * var_exact,
                        qv_n: sol.qv_n,
                        lambda: sol.lambda,
                        residual_sup: sol.residual_sup,
                        h_mu_moment: sol.h_mu_moment(),
                        moment_gap: (sol.h_mu_moment() - limit_moment).abs() / limit_moment,
                        variance_ratio_paper: var_exact * sol.h_t_moment(),
                        error: sol.warning.clone(),
                    }
                }
                Err(e) => AsymptoticsRow::failed(t, e.to_string()),
            })
            .collect();
        let ok: Vec<&AsymptoticsRow> = rows.iter().filter(|r| r.var_exact.is_finite()).collect();
        let slope = log_log_slope(
            &ok.iter().map(|r| r.horizon).collect::<Vec<_>>(),
            &ok.iter().map(|r| r.var_exact).collect::<Vec<_>>(),
        );
        let last_ratio = match ok.as_slice() {
            [.., a, b] => (b.scaled_var / a.scaled_var - 1.0).abs(),
            _ => f64::NAN,
        };
        Ok(AsymptoticsReport {
            rows,
            slope,
            slope_target: -(2.0 - 2.0 * c.h2),
            last_ratio,
            h0_moment: limit_moment,
            asymptotic_var_closed_form: scaled_variance_limit(c)?.value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsRow {
    pub horizon: f64,
    pub var_exact: f64,
    pub scaled_var: f64,
    pub qv_n: f64,
    pub lambda: f64,
    pub residual_sup: f64,
    /// ∫h_μ u^{½−H1}du
    pub h_mu_moment: f64,
    /// relative gap to ∫h0 u^{½−H1}du
    pub moment_gap: f64,
    /// var_exact·∫h_T s^{1−2H1}ds
    pub variance_ratio_paper: f64,
    pub error: Option<String>,
}

impl AsymptoticsRow {
    fn failed(horizon: f64, error: String) -> Self {
        Self {
            horizon,
            var_exact: f64::NAN,
            scaled_var: f64::NAN,
            qv_n: f64::NAN,
            lambda: f64::NAN,
            residual_sup: f64::NAN,
            h_mu_moment: f64::NAN,
            moment_gap: f64::NAN,
            variance_ratio_paper: f64::NAN,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub rows: Vec<AsymptoticsRow>,
    /// least-squares slope of ln var_exact against ln T
    pub slope: f64,
    pub slope_target: f64,
    /// |last/previous − 1| of the scaled variances
    pub last_ratio: f64,
    pub h0_moment: f64,
    pub asymptotic_var_closed_form: f64,
}

pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn run_mc(config: &ExperimentConfig) -> Result<MCReport> {
    Experiment::new(config.clone())?.run_mc()
}

pub fn run_asymptotics(config: &ExperimentConfig) -> Result<AsymptoticsReport> {
    Experiment::new(config.clone())?.run_asymptotics()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Serialize)]
struct Envelope<'a, R> {
    version: String,
    config: &'a ExperimentConfig,
    report: R,
}

fn write_json<R: Serialize>(path: &Path, config: &ExperimentConfig, report: &R) -> Result<()> {
    let env = Envelope {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        report,
    };
    let text = serde_json::to_string_pretty(&env).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub const MC_COLUMNS: [&str; 8] = [
    "theta_true",
    "mean_hat",
    "se_mean",
    "var_hat",
    "var_pred",
    "var_pred_paper",
    "ks_stat",
    "ks_pvalue",
];

pub const ASYMPTOTICS_COLUMNS: [&str; 6] = ["T", "var_exact", "scaled_var", "qv_N", "lambda", "residual_sup"];

/// Write mc_summary.csv or mc_report.json into `dir`; returns the file path.
pub fn export_mc(report: &MCReport, config: &ExperimentConfig, dir: &Path, format: ReportFormat) -> Result<PathBuf> {
    if report.theta_hats.is_empty() {
        return Err(Error::domain("refusing to export a report without replicates"));
    }
    std::fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Csv => {
            let path = dir.join("mc_summary.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
            w.write_record(MC_COLUMNS).map_err(csv_error)?;
            let r = report;
            let row = [r.theta_true, r.mean_hat, r.se_mean, r.var_hat, r.var_pred, r.var_pred_paper, r.ks_stat, r.ks_pvalue];
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
            w.flush()?;
            Ok(path)
        }
        ReportFormat::Json => {
            let path = dir.join("mc_report.json");
            write_json(&path, config, report)?;
            Ok(path)
        }
    }
}

/// Write asymptotics.csv or asymptotics.json into `dir`.
pub fn export_asymptotics(
    report: &AsymptoticsReport,
    config: &ExperimentConfig,
    dir: &Path,
    format: ReportFormat,
) -> Result<PathBuf> {
    if report.rows.is_empty() {
        return Err(Error::domain("refusing to export an empty table"));
    }
    std::fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Csv => {
            let path = dir.join("asymptotics.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
            w.write_record(ASYMPTOTICS_COLUMNS).map_err(csv_error)?;
            for r in &report.rows {
                let row = [r.horizon, r.var_exact, r.scaled_var, r.qv_n, r.lambda, r.residual_sup];
                w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
            }
            w.flush()?;
            Ok(path)
        }
        ReportFormat::Json => {
            let path = dir.join("asymptotics.json");
            write_json(&path, config, report)?;
            Ok(path)
        }
    }
}

/// Read back the report part of an exported JSON file.
pub fn read_json_report<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<R> {
    #[derive(Deserialize)]
    struct Inner<R> {
        report: R,
    }
    let text = std::fs::read_to_string(path)?;
    let inner: Inner<R> = serde_json::from_str(&text).map_err(|e| Error::Io(e.to_string()))?;
    Ok(inner.report)
}
