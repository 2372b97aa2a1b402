use clap::{Args, Parser, Subcommand, ValueEnum};
use mixfbm::closed_form::{h0, h0_moment, limit_constant, scaled_variance_limit, verify_first_kind};
use mixfbm::estimator::{mle, mle_tabulated, TabulatedH};
use mixfbm::fredholm::{assemble, build_grid, solve_second_kind};
use mixfbm::gaussian_sim::{
    graded_times, inverse_transform, molchan_transform, simulate_fbm, simulate_x, simulate_y, simulate_z, PathLabel,
    SamplePath,
};
use mixfbm::harness::{export_asymptotics, export_mc, ExperimentConfig, Experiment, ReportFormat, SOLVER_GRADING};
use mixfbm::kernels::KernelContext;
use mixfbm::model::{derive_constants, DerivedConstants, HurstPair, ModelParams};
use mixfbm::Error;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "mixfbm", version, about = "Drift estimation for theta*t + sigma*B^H1 + B^H2")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override values from --config.
#[derive(Args, Clone)]
struct Global {
    /// Hurst index of the rough component
    #[arg(long, global = true)]
    h1: Option<f64>,
    /// Hurst index of the smooth component
    #[arg(long, global = true)]
    h2: Option<f64>,
    /// Scale of the rough component
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Drift used for simulation
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Observation horizon T
    #[arg(long = "t-horizon", global = true)]
    t_horizon: Option<f64>,
    /// Solver grid size (multiple of 8)
    #[arg(long = "grid-n", global = true)]
    grid_n: Option<usize>,
    /// Points per simulated path
    #[arg(long = "path-points", global = true)]
    path_points: Option<usize>,
    /// Monte Carlo replicates
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON experiment configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the derived constants
    Constants,
    /// Evaluate the kernels at one pair of times
    Kernel {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        s: f64,
    },
    /// Solve the second-kind equation and write h_T as CSV (time, h)
    Solve {
        /// number of tabulated points
        #[arg(long, default_value_t = 1024)]
        points: usize,
    },
    /// Closed-form limit solution and its first-kind check
    ClosedForm {
        /// number of points of the h0 table written with --out
        #[arg(long, default_value_t = 99)]
        points: usize,
    },
    /// Simulate a path and write it as CSV (time, value)
    Simulate {
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long = "n-points", default_value_t = 1024)]
        n_points: usize,
        /// Hurst index for --which fbm (defaults to h1)
        #[arg(long)]
        hurst: Option<f64>,
    },
    /// Forward (Z to Y) or inverse (Y to Z) transform of a CSV path
    Transform {
        #[arg(long, value_enum)]
        direction: Direction,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Estimate the drift from a Y path
    Estimate {
        /// tabulated h_T (CSV time, h); solved internally when omitted
        #[arg(long = "h-file")]
        h_file: Option<PathBuf>,
        #[arg(long = "path-file")]
        path_file: PathBuf,
    },
    /// Monte Carlo study of the estimator
    Mc,
    /// Exact variance over the horizon sequence
    Asymptotics,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    #[value(name = "X")]
    X,
    #[value(name = "Y")]
    Y,
    #[value(name = "Z")]
    Z,
    #[value(name = "fbm")]
    Fbm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Forward,
    Inverse,
}

fn config(g: &Global) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let p = &mut cfg.params;
    let hurst = HurstPair::new(g.h1.unwrap_or(p.hurst.h1()), g.h2.unwrap_or(p.hurst.h2()))?;
    *p = ModelParams::new(
        hurst,
        g.sigma.unwrap_or(p.sigma),
        g.theta.unwrap_or(p.theta),
        g.t_horizon.unwrap_or(p.horizon),
    )?;
    if let Some(v) = g.grid_n {
        cfg.grid_n = v;
    }
    if let Some(v) = g.path_points {
        cfg.path_points = v;
    }
    if let Some(v) = g.replicates {
        cfg.replicates = v;
    }
    if let Some(v) = g.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = &g.out {
        cfg.output_dir = v.clone();
    }
    Ok(cfg)
}

fn print(value: serde_json::Value) {
    // a closed pipe (e.g. `| head`) is not an error for a report
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&value).expect("serializable"));
}

fn io(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

fn write_pairs(path: &Path, header: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for (x, y) in xs.iter().zip(ys) {
        w.write_record([x.to_string(), y.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn read_pairs(path: &Path) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        let field = |i: usize| -> Result<f64, Error> {
            rec.get(i)
                .ok_or_else(|| Error::domain(format!("{}: expected two columns", path.display())))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::domain(format!("{}: {e}", path.display())))
        };
        xs.push(field(0)?);
        ys.push(field(1)?);
    }
    Ok((xs, ys))
}

fn read_path(path: &Path, label: PathLabel) -> Result<SamplePath, Error> {
    let (t, v) = read_pairs(path)?;
    SamplePath::new(t, v, label)
}

fn write_path(path: &Path, p: &SamplePath) -> Result<(), Error> {
    write_pairs(path, ["time", "value"], &p.times, &p.values)
}

fn out_file(g: &Global, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn solve_for(cfg: &ExperimentConfig, c: &DerivedConstants) -> Result<mixfbm::fredholm::FredholmSolution, Error> {
    cfg.params.hurst.require_solver_admissible()?;
    let ctx = Arc::new(KernelContext::new(*c));
    let op = assemble(ctx, &build_grid(cfg.grid_n, SOLVER_GRADING)?)?;
    solve_second_kind(&op, cfg.params.horizon, c)
}

fn run(cli: Cli) -> Result<(), Error> {
    let g = &cli.global;
    let cfg = config(g)?;
    let c = derive_constants(&cfg.params)?;
    match cli.command {
        Command::Constants => print(json!({
            "constants": c,
            "gamma_sq": c.gamma_sq(),
            "lambda": c.lambda(cfg.params.horizon),
            "mu": c.mu(cfg.params.horizon),
            "solver_admissible": cfg.params.hurst.solver_admissible(),
        })),
        Command::Kernel { t, s } => {
            let ctx = KernelContext::new(c);
            let (big, small) = if t >= s { (t, s) } else { (s, t) };
            let mut out = json!({
                "t": t,
                "s": s,
                "covariance_x2": ctx.covariance_x2(t, s)?,
                "covariance_x": mixfbm::gaussian_sim::covariance_x(&ctx, t, s)?,
            });
            if small > 0.0 && small < big {
                out["k12"] = json!(ctx.k12(big, small)?);
                out["k12_dt"] = json!(ctx.k12_dt(big, small)?);
            }
            if t > 0.0 && s > 0.0 && t <= 1.0 && s <= 1.0 && t != s {
                out["k"] = json!(ctx.k(s, t)?);
                out["k1"] = json!(ctx.k1(s, t)?);
            }
            print(out);
        }
        Command::Solve { points } => {
            let sol = solve_for(&cfg, &c)?;
            let table = TabulatedH::from_solution(&sol, points.max(2))?;
            let path = out_file(g, "h.csv");
            write_pairs(&path, ["time", "h"], table.times(), table.values())?;
            print(json!({
                "horizon": sol.horizon,
                "lambda": sol.lambda,
                "mu": sol.mu,
                "qv_N": sol.qv_n,
                "h_moment": sol.h_t_moment(),
                "residual_sup": sol.residual_sup,
                "linear_residual": sol.linear_residual,
                "condition": sol.condition,
                "warning": sol.warning,
                "out": path,
            }));
        }
        Command::ClosedForm { points } => {
            let limit = limit_constant(&c);
            let moment = h0_moment(&c, limit)?;
            let mut out = json!({
                "limit_constant": limit,
                "h0_moment": moment,
                "scaled_variance_limit": scaled_variance_limit(&c)?,
            });
            if cfg.params.hurst.solver_admissible() {
                let ctx = KernelContext::new(c);
                let report = verify_first_kind(&ctx, &build_grid(cfg.grid_n, SOLVER_GRADING)?)?;
                out["first_kind_spread"] = json!(report.spread);
                out["first_kind_residual"] = json!(report.max_relative_residual);
            }
            if let Some(path) = &g.out {
                let vs: Vec<f64> = (1..=points).map(|i| i as f64 / (points + 1) as f64).collect();
                let hs = vs.iter().map(|&v| h0(v, &c, limit)).collect::<Result<Vec<f64>, Error>>()?;
                write_pairs(path, ["u", "h0"], &vs, &hs)?;
                out["out"] = json!(path);
            }
            print(out);
        }
        Command::Simulate { which, n_points, hurst } => {
            let times = graded_times(n_points, cfg.params.horizon, 1.0)?;
            let seed = cfg.master_seed;
            let path = match which {
                Which::X => simulate_x(&KernelContext::new(c), &times, seed)?,
                Which::Y => simulate_y(&KernelContext::new(c), &times, seed, cfg.params.theta)?,
                Which::Z => simulate_z(&c, &times, seed, cfg.params.theta)?,
                Which::Fbm => simulate_fbm(hurst.unwrap_or(c.h1), &times, seed)?,
            };
            let out = out_file(g, "path.csv");
            write_path(&out, &path)?;
            print(json!({ "points": path.times.len(), "label": path.label, "out": out }));
        }
        Command::Transform { direction, input } => {
            let result = match direction {
                Direction::Forward => molchan_transform(&read_path(&input, PathLabel::Z)?, &c)?,
                Direction::Inverse => inverse_transform(&read_path(&input, PathLabel::Y)?, &c)?,
            };
            let out = out_file(g, "transformed.csv");
            write_path(&out, &result)?;
            print(json!({ "points": result.times.len(), "label": result.label, "out": out }));
        }
        Command::Estimate { h_file, path_file } => {
            let y = read_path(&path_file, PathLabel::Y)?;
            let result = match h_file {
                Some(h) => {
                    let (t, v) = read_pairs(&h)?;
                    mle_tabulated(&TabulatedH::new(t, v)?, &y, &c)?
                }
                None => {
                    let mut cfg = cfg.clone();
                    cfg.params.horizon = y.horizon();
                    mle(&solve_for(&cfg, &c)?, &y, &c)?
                }
            };
            let value = json!({
                "theta_hat": result.theta_hat,
                "n_T": result.n_t,
                "qv_N": result.qv_n,
                "variance_pred": result.variance_pred,
                "variance_pred_paper": result.variance_pred_paper,
                "refinement": result.refinement,
                "warning": result.warning,
            });
            if let Some(out) = &g.out {
                std::fs::write(out, serde_json::to_string_pretty(&value).map_err(io)?)?;
            }
            print(value);
        }
        Command::Mc => {
            let exp = Experiment::new(cfg.clone())?;
            let report = exp.run_mc()?;
            let dir = &cfg.output_dir;
            let csv = export_mc(&report, &cfg, dir, ReportFormat::Csv)?;
            let json_path = export_mc(&report, &cfg, dir, ReportFormat::Json)?;
            print(json!({
                "theta_true": report.theta_true,
                "mean_hat": report.mean_hat,
                "se_mean": report.se_mean,
                "var_hat": report.var_hat,
                "var_pred": report.var_pred,
                "var_pred_paper": report.var_pred_paper,
                "ks_pvalue": report.ks_pvalue,
                "per_t_scaled_var": report.per_t_scaled_var,
                "asymptotic_var_closed_form": report.asymptotic_var_closed_form,
                "files": [csv, json_path],
            }));
        }
        Command::Asymptotics => {
            let report = Experiment::new(cfg.clone())?.run_asymptotics()?;
            let dir = &cfg.output_dir;
            let csv = export_asymptotics(&report, &cfg, dir, ReportFormat::Csv)?;
            let json_path = export_asymptotics(&report, &cfg, dir, ReportFormat::Json)?;
            print(json!({
                "slope": report.slope,
                "slope_target": report.slope_target,
                "last_ratio": report.last_ratio,
                "h0_moment": report.h0_moment,
                "asymptotic_var_closed_form": report.asymptotic_var_closed_form,
                "rows": report.rows,
                "files": [csv, json_path],
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                ref e if e.is_domain() => 2,
                Error::Io(_) => 1,
                _ => 3,
            })
        }
    }
}
