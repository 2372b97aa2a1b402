use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use mixfbm::closed_form::compare_with_limit;
use mixfbm::estimator::{log_likelihood, EstimatorResult};
use mixfbm::fredholm::{assemble, build_grid, quadratic_variation_n, solve_second_kind, DiscretizedOperator};
use mixfbm::gaussian_sim::{fbm_covariance, replicate_rng, simulate_fbm, CovarianceModel, ForwardTransform};
use mixfbm::harness::{export_mc, Experiment, ExperimentConfig, ReportFormat};
use mixfbm::kernels::KernelContext;
use mixfbm::model::{alpha_h, beta_h, derive_constants, DerivedConstants, HurstPair, ModelParams};
use mixfbm::numerics::{
    beta_fn, frac_derivative_left, frac_derivative_right, frac_integral_right, jacobi_rule, marked_rule,
    singular_integral, Declared, DerivativeOptions, FracFunction, Mark, Refinement,
};

fn constants(h1: f64, h2: f64, sigma: f64) -> DerivedConstants {
    let params = ModelParams::new(HurstPair::new(h1, h2).unwrap(), sigma, 1.0, 1.0).unwrap();
    derive_constants(&params).unwrap()
}

fn hurst_pair() -> impl Strategy<Value = (f64, f64)> {
    (0.52f64..0.70).prop_flat_map(|h1| (Just(h1), (h1 + 0.26)..0.99))
}

fn context() -> &'static Arc<KernelContext> {
    static CTX: OnceLock<Arc<KernelContext>> = OnceLock::new();
    CTX.get_or_init(|| Arc::new(KernelContext::new(constants(0.6, 0.9, 1.0))))
}

fn operator() -> &'static DiscretizedOperator {
    static OP: OnceLock<DiscretizedOperator> = OnceLock::new();
    OP.get_or_init(|| assemble(context().clone(), &build_grid(64, 2.0).unwrap()).unwrap())
}

// no lib.rs next to this file, so failing cases are not persisted
fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn tight() -> Refinement {
    Refinement { rtol: 1e-13, cap: 4096 }
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn jacobi_weights_are_positive_with_exact_mass(
        n in 1usize..48,
        p in -0.9f64..2.0,
        q in -0.9f64..2.0,
        a in -2.0f64..2.0,
        len in 0.1f64..3.0,
    ) {
        let rule = jacobi_rule(n, p, q, a, a + len).unwrap();
        prop_assert!(rule.weights.iter().all(|&w| w > 0.0));
        let exact = len.powf(p + q + 1.0) * beta_fn(p + 1.0, q + 1.0).unwrap();
        prop_assert!((rule.weight_mass() - exact).abs() <= 1e-12 * exact, "{} vs {}", rule.weight_mass(), exact);
    }

    #[test]
    fn model_constants_are_consistent((h1, h2) in hurst_pair(), sigma in 0.2f64..3.0) {
        let c = constants(h1, h2, sigma);
        let beta_ratio = c.beta_h1 * c.beta_h1 * beta_fn(h1 - 0.5, 2.0 - 2.0 * h1).unwrap() / alpha_h(h1);
        prop_assert!((beta_ratio - 1.0).abs() < 1e-12);
        prop_assert!((beta_h(h2) - c.beta_h2).abs() < 1e-15);
        let lhs = c.delta_paper * c.gamma_h1;
        let rhs = c.drift_norm * c.gamma_sq() * c.sigma;
        prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs);
        prop_assert!((c.epsilon_h1 * (2.0 - 2.0 * h1) - c.gamma_sq()).abs() < 1e-14);
    }

    #[test]
    fn likelihood_is_maximized_at_the_estimate(
        n_t in -50.0f64..50.0,
        qv in 1e-3f64..1e3,
        d in 0.1f64..5.0,
        step in 1e-3f64..1.0,
        k in 0.1f64..10.0,
    ) {
        let est = EstimatorResult::from_parts(n_t, qv, d, 1.0).unwrap();
        let top = est.log_likelihood(est.theta_hat);
        prop_assert!(top >= est.log_likelihood(est.theta_hat + step));
        prop_assert!(top >= est.log_likelihood(est.theta_hat - step));
        let identity = 0.5 * est.theta_hat * est.theta_hat * d * d * qv;
        prop_assert!((top - identity).abs() <= 1e-10 * (1.0 + identity.abs()));
        prop_assert!((top - 0.5 * n_t * n_t / qv).abs() <= 1e-10 * (1.0 + top.abs()));
        // rescaling the normalization rescales the maximizer and leaves the maximum alone
        let scaled = EstimatorResult::from_parts(n_t, qv, k * d, 1.0).unwrap();
        prop_assert!((scaled.theta_hat * k - est.theta_hat).abs() <= 1e-12 * (1.0 + est.theta_hat.abs()));
        let peak = log_likelihood(n_t, qv, k * d, scaled.theta_hat);
        prop_assert!((peak - top).abs() <= 1e-10 * (1.0 + top.abs()));
    }

    #[test]
    fn replicate_streams_are_deterministic(master in any::<u64>(), index in 0u64..10_000) {
        let a: Vec<u64> = (0..8).map({ let mut r = replicate_rng(master, index); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..8).map({ let mut r = replicate_rng(master, index); move |_| r.random() }).collect();
        let c: Vec<u64> = (0..8).map({ let mut r = replicate_rng(master, index + 1); move |_| r.random() }).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
    }
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn kernels_scale_and_stay_nonnegative(
        t in 0.05f64..1.0,
        ratio in 0.02f64..0.98,
        a in 0.2f64..5.0,
    ) {
        let ctx = context();
        let c = ctx.constants();
        let (h1, h2) = (c.h1, c.h2);
        let s = t * ratio;
        let e12 = 0.5 + h2 - 2.0 * h1;
        let ek = 2.0 * h2 - 4.0 * h1;
        let ek1 = 2.0 * h2 - 2.0 * h1 - 1.0;
        let pairs = [
            (ctx.k12(a * t, a * s).unwrap(), a.powf(e12) * ctx.k12(t, s).unwrap()),
            (ctx.k12_dt(a * t, a * s).unwrap(), a.powf(e12 - 1.0) * ctx.k12_dt(t, s).unwrap()),
            (ctx.k(a * s, a * t).unwrap(), a.powf(ek) * ctx.k(s, t).unwrap()),
            (ctx.k1(a * s, a * t).unwrap(), a.powf(ek1) * ctx.k1(s, t).unwrap()),
        ];
        for (lhs, rhs) in pairs {
            prop_assert!(lhs >= 0.0 && rhs >= 0.0);
            prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs(), "{} vs {}", lhs, rhs);
        }
        prop_assert!(ctx.k(t, s).unwrap() >= 0.0 && ctx.k1(t, s).unwrap() >= 0.0);
    }

    #[test]
    fn smooth_covariance_gram_is_positive(points in prop::collection::vec(0.01f64..2.0, 2..10)) {
        let ctx = context();
        let n = points.len();
        let gram = DMatrix::from_fn(n, n, |i, j| ctx.covariance_x2(points[i], points[j]).unwrap());
        let eig = gram.clone().symmetric_eigen().eigenvalues;
        let top = eig.iter().cloned().fold(0.0, f64::max);
        let low = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(low >= -1e-10 * top, "min eigenvalue {} (max {})", low, top);
    }

    #[test]
    fn discrete_operator_is_positive(values in prop::collection::vec(-1.0f64..1.0, 64)) {
        let op = operator();
        let f = DVector::from_vec(values);
        let form = op.quadratic_form(&f);
        prop_assert!(form >= -1e-12 * f.norm_squared(), "quadratic form {}", form);
    }
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn right_derivative_inverts_right_integral(
        alpha in 0.1f64..0.9,
        rate in -1.0f64..1.0,
        x in 0.1f64..0.9,
    ) {
        let f = move |t: f64| (rate * t).exp();
        // (I^α_{1−} f)(t) = (1−t)^α Γ(α)^{-1} ∫_0^1 f(t + (1−t)r) r^{α−1} dr
        let smooth = move |t: f64| {
            let inner = singular_integral(|r| f(t + (1.0 - t) * r), 0.0, 1.0, alpha - 1.0, 0.0, 16, tight()).unwrap();
            inner.value / mixfbm::numerics::gamma_fn(alpha).unwrap()
        };
        let declared = Declared { smooth: &smooth, left: 0.0, right: alpha };
        let back = frac_derivative_right(&FracFunction::General(declared), alpha, x, DerivativeOptions::default()).unwrap();
        prop_assert!((back - f(x)).abs() <= 1e-6 * f(x).abs(), "{} vs {}", back, f(x));
        // the integral used above agrees with the direct one
        let direct = frac_integral_right(&Declared::smooth(&f), alpha, x, tight()).unwrap();
        let packed = smooth(x) * (1.0 - x).powf(alpha);
        prop_assert!((direct - packed).abs() <= 1e-10 * direct.abs());
    }

    #[test]
    fn fractional_integration_by_parts(
        alpha in 0.15f64..0.85,
        left_rate in -1.0f64..1.0,
        right_rate in -1.0f64..1.0,
    ) {
        // f vanishes at 0 and g at 1, so both fractional derivatives are integrable;
        // the zeros are declared as endpoint exponents to avoid cancellation
        let f_smooth = move |t: f64| (left_rate * t).exp();
        let g_smooth = move |t: f64| (right_rate * t).exp();
        let f = |t: f64| t * f_smooth(t);
        let g = |t: f64| (1.0 - t) * g_smooth(t);
        let f_declared = || Declared { smooth: &f_smooth, left: 1.0, right: 0.0 };
        let g_declared = || Declared { smooth: &g_smooth, left: 0.0, right: 1.0 };
        let opts = DerivativeOptions::default();
        let marks = [Mark::new(0.0, 1.0 - alpha, 24), Mark::new(1.0, 1.0 - alpha, 24)];
        let rule = marked_rule(0.0, 1.0, 10, &marks).unwrap();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let df = frac_derivative_left(&FracFunction::General(f_declared()), alpha, u, opts).unwrap();
            let dg = frac_derivative_right(&FracFunction::General(g_declared()), alpha, u, opts).unwrap();
            lhs += w * df * g(u);
            rhs += w * f(u) * dg;
        }
        prop_assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1e-3), "{} vs {}", lhs, rhs);
    }
}

#[test]
fn residual_between_nodes_is_bounded_by_residual_at_nodes() {
    for horizon in [1.0, 5.0, 25.0] {
        let sol = solve_second_kind(operator(), horizon, context().constants()).unwrap();
        let at_nodes = sol.residual_at(&sol.nodes()).unwrap();
        eprintln!("T={horizon}: nodes {at_nodes:.3e}, off-grid {:.3e}", sol.residual_sup);
        assert!(sol.residual_sup <= 10.0 * at_nodes, "off-grid {} vs nodes {}", sol.residual_sup, at_nodes);
    }
}

#[test]
fn limit_distance_and_quadratic_variation_are_consistent() {
    let c = *context().constants();
    for horizon in [1.0, 5.0, 25.0, 125.0] {
        let sol = solve_second_kind(operator(), horizon, &c).unwrap();
        let cmp = compare_with_limit(&sol, &c).unwrap();
        assert!(cmp.distance <= cmp.h0_norm, "T={horizon}: {} > {}", cmp.distance, cmp.h0_norm);
        let via_mu = c.sigma * c.sigma * c.gamma_sq() * horizon.powf(2.0 - 2.0 * c.h2) * sol.h_mu_moment();
        let qv = quadratic_variation_n(&sol, &c).unwrap();
        assert!((qv - sol.qv_n).abs() <= 1e-12 * qv);
        assert!((via_mu - qv).abs() <= 1e-10 * qv, "T={horizon}: {via_mu} vs {qv}");
    }
}

#[test]
fn transform_of_rough_noise_has_martingale_variance() {
    for h1 in [0.55, 0.6, 0.7] {
        let c = constants(h1, 0.95, 1.0);
        let horizon = 2.0;
        let n = 1024;
        let times: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        let tf = ForwardTransform::new(&times, &[horizon], h1).unwrap();
        let coef: Vec<f64> = (0..=n)
            .map(|j| {
                let mut e = vec![0.0; n + 1];
                e[j] = 1.0;
                tf.apply(&e)[0]
            })
            .collect();
        let mut var = 0.0;
        for i in 1..=n {
            for j in 1..=n {
                var += coef[i] * coef[j] * fbm_covariance(h1, times[i], times[j]);
            }
        }
        let exact = c.epsilon_h1 * horizon.powf(2.0 - 2.0 * h1);
        assert!((var - exact).abs() <= 1e-2 * exact, "H1={h1}: {var} vs {exact}");
    }
}

#[test]
fn simulated_fbm_matches_its_covariance() {
    let h = 0.7;
    let times: Vec<f64> = (1..=64).map(|k| k as f64 / 64.0).collect();
    let model = CovarianceModel::for_fbm(h, &times).unwrap();
    let reps = 4000;
    let picks = [(15usize, 15usize), (15, 63), (31, 47), (63, 63)];
    let mut acc = [0.0f64; 4];
    for r in 0..reps {
        let x = model.sample(&mut replicate_rng(77, r));
        for (a, &(i, j)) in acc.iter_mut().zip(&picks) {
            *a += x[i] * x[j];
        }
    }
    for (a, &(i, j)) in acc.iter().zip(&picks) {
        let est = a / reps as f64;
        let exact = fbm_covariance(h, times[i], times[j]);
        let scale = (fbm_covariance(h, times[i], times[i]) * fbm_covariance(h, times[j], times[j])).sqrt();
        assert!((est - exact).abs() <= 0.05 * scale, "({i},{j}): {est} vs {exact}");
    }
    let path = simulate_fbm(h, &times, 5).unwrap();
    assert_eq!(path.values[0], 0.0);
    assert_eq!(path, simulate_fbm(h, &times, 5).unwrap());
}

fn small_config(theta: f64) -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.params.theta = theta;
    config.grid_n = 64;
    config.path_points = 128;
    config.replicates = 64;
    config.t_sequence = vec![1.0, 5.0];
    config
}

#[test]
fn drift_shift_moves_every_estimate_by_the_same_amount() {
    let base = Experiment::new(small_config(1.0)).unwrap();
    let shifted = Experiment::new(small_config(3.5)).unwrap();
    let (_, a, _) = base.simulate_estimates(1.0, 11).unwrap();
    let (_, b, _) = shifted.simulate_estimates(1.0, 11).unwrap();
    let factor = (b[0] - a[0]) / 2.5;
    eprintln!("shift factor {factor:.6}");
    for (x, y) in a.iter().zip(&b) {
        assert!(((y - x) / 2.5 - factor).abs() <= 1e-10);
    }
    assert!((factor - 1.0).abs() <= 1e-2, "shift factor {factor}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let dir = tempfile_dir();
    let run = |threads: usize, sub: &str| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let config = small_config(1.0);
            let report = Experiment::new(config.clone()).unwrap().run_mc().unwrap();
            let out = dir.join(sub);
            let path = export_mc(&report, &config, &out, ReportFormat::Json).unwrap();
            (report.theta_hats.clone(), std::fs::read_to_string(path).unwrap())
        })
    };
    let (a, ja) = run(1, "one");
    let (b, jb) = run(4, "four");
    assert_eq!(a, b);
    assert_eq!(ja, jb);
    std::fs::remove_dir_all(&dir).ok();
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("mixfbm-props-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
