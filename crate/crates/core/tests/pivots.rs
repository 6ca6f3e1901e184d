use inferactive::pivots::*;
use inferactive::randomization::RandomizationSpec;
use inferactive::sampler::{langevin_run, ConditionalProblem, LangevinConfig};
use inferactive::special::{norm_cdf, norm_log_sf, norm_quantile};
use inferactive::stats::{ks_two_sample, mean, stream_rng};
use inferactive::Error;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gauss(g: f64) -> RandomizationSpec {
    RandomizationSpec::gaussian(g).unwrap()
}

fn normal_data(n: usize, mu: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| mu + rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draws from N(mu, 1) until the √n-scale mean passes τ.
fn selected_data(n: usize, mu: f64, tau: f64, seed: u64) -> Vec<f64> {
    (0..)
        .map(|k| normal_data(n, mu, seed * 1000 + k))
        .find(|y| y.iter().sum::<f64>() / (n as f64).sqrt() > tau)
        .unwrap()
}

fn sqrt_n_mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / (y.len() as f64).sqrt()
}

#[test]
fn tg_examples() {
    assert!((tg_pivot(1.0, 0.0, 0.0).unwrap() - 0.682_689_492_137_085_9).abs() < 1e-12);
    assert!((tg_pivot(0.3, 0.3, -1e12).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(tg_pivot(2.0, 0.0, 2.0).unwrap(), 0.0);
    assert!(tg_pivot(1.0, 0.0, 2.0).is_err());
}

#[test]
fn tg_deep_truncation_is_stable() {
    // P(Z < τ+δ | Z > τ) ≈ 1 − exp(−τδ) for large τ.
    let (tau, d) = (40.0, 0.01);
    let p = tg_pivot(tau + d, 0.0, tau).unwrap();
    let exact = -(norm_log_sf(tau + d) - norm_log_sf(tau)).exp_m1();
    assert!((p - exact).abs() < 1e-12);
    assert!((p - (1.0 - (-tau * d).exp())).abs() < 0.01);
}

#[test]
fn plugin_closed_form() {
    let p = plugin_randomized_pivot(0.0, 0.0, 0.0, &gauss(1.0), PluginMethod::Grid).unwrap();
    assert!((p.value - 0.25).abs() < 0.002, "{}", p.value);
    let q = plugin_randomized_pivot(
        0.0,
        0.0,
        0.0,
        &gauss(1.0),
        PluginMethod::Mcmc {
            steps: 50_000,
            seed: 1,
        },
    )
    .unwrap();
    let se = q.mc_se.unwrap();
    assert!((q.value - 0.25).abs() < 3.0 * se, "{} ± {se}", q.value);
}

#[test]
fn plugin_limits() {
    let g = gauss(1.0);
    assert_eq!(
        plugin_randomized_pivot(f64::INFINITY, 0.0, 1.0, &g, PluginMethod::Grid)
            .unwrap()
            .value,
        1.0
    );
    assert!(
        plugin_randomized_pivot(40.0, 0.0, 1.0, &g, PluginMethod::Grid)
            .unwrap()
            .value
            > 1.0 - 1e-12
    );
    let tiny = gauss(1e-6);
    for &(t, m, tau) in &[
        (1.0, 0.0, 0.5),
        (2.5, 1.0, 2.0),
        (0.01, 0.0, 0.0),
        (3.0, -1.0, 1.0),
    ] {
        let a = plugin_randomized_pivot(t, m, tau, &tiny, PluginMethod::Grid)
            .unwrap()
            .value;
        let b = tg_pivot(t, m, tau).unwrap();
        assert!((a - b).abs() < 1e-4, "t={t} m={m} τ={tau}: {a} vs {b}");
    }
}

#[test]
fn plugin_grid_and_mcmc_agree() {
    let g = gauss(0.7);
    for (i, &(t, m, tau)) in [(1.5, 0.0, 2.0), (-0.5, 0.5, 1.0), (2.2, 1.0, 0.0)]
        .iter()
        .enumerate()
    {
        let a = plugin_randomized_pivot(t, m, tau, &g, PluginMethod::Grid)
            .unwrap()
            .value;
        let b = plugin_randomized_pivot(
            t,
            m,
            tau,
            &g,
            PluginMethod::Mcmc {
                steps: 60_000,
                seed: i as u64,
            },
        )
        .unwrap();
        assert!(
            (a - b.value).abs() < 3.0 * b.mc_se.unwrap() + 1e-3,
            "{a} vs {} ± {:?}",
            b.value,
            b.mc_se
        );
    }
}

#[test]
fn plugin_laplace_randomization() {
    let g = RandomizationSpec::new(inferactive::randomization::Family::Laplace, 1.0, 1).unwrap();
    let a = plugin_randomized_pivot(1.0, 0.0, 1.0, &g, PluginMethod::Grid)
        .unwrap()
        .value;
    // Direct quadrature of φ(x)·P(ω > τ − x) with a fine Riemann sum.
    let (mut num, mut den) = (0.0, 0.0);
    let h = 1e-4;
    let mut x: f64 = -15.0;
    while x < 15.0 {
        let w = (-0.5 * x * x).exp() * g.sf(1.0 - x);
        den += w;
        if x < 1.0 {
            num += w;
        }
        x += h;
    }
    assert!((a - num / den).abs() < 1e-4, "{a} vs {}", num / den);
}

#[test]
fn plugin_underflow_errors() {
    let err =
        plugin_randomized_pivot(0.0, -1e3, 1e3, &gauss(1e-3), PluginMethod::Grid).unwrap_err();
    assert!(
        matches!(err, Error::Degenerate(_) | Error::Numerical { .. }),
        "{err}"
    );
}

#[test]
fn boot_nonrand_without_truncation_is_centered() {
    let mut y = normal_data(200, 0.0, 3);
    let ybar = mean(&y);
    for v in &mut y {
        *v -= ybar;
    }
    let half: Vec<f64> = y[..100].to_vec();
    let y: Vec<f64> = half
        .iter()
        .copied()
        .chain(half.iter().map(|v| -v))
        .collect();
    let t = sqrt_n_mean(&y);
    let mut rng = stream_rng(4, 0);
    let p = boot_pivot_nonrand(&y, t, -1e12, 4000, &mut rng).unwrap();
    assert!(
        (p.value - 0.5).abs() < 3.0 * p.mc_se.unwrap() + 0.01,
        "{:?}",
        p
    );
}

#[test]
fn boot_nonrand_degenerate_data() {
    let y = vec![1.0; 10];
    let mut rng = stream_rng(5, 0);
    let p = boot_pivot_nonrand(&y, 0.0, -1.0, 1000, &mut rng).unwrap();
    assert_eq!(p.value, 1.0);
    assert!(p.warning.is_some());
    assert!(boot_pivot_nonrand(&y, 0.0, 0.0, 1000, &mut rng).is_err());
    assert!(boot_pivot_nonrand(&y, 0.0, -1.0, 999, &mut rng).is_err());
}

#[test]
fn boot_nonrand_matches_tg_at_moderate_n() {
    let (n, tau) = (500, 0.0);
    let mut diffs = Vec::new();
    for rep in 0..100 {
        let y = selected_data(n, 0.0, tau, rep);
        let t = sqrt_n_mean(&y);
        let mut rng = stream_rng(rep, 1);
        let b = boot_pivot_nonrand(&y, 0.0, tau, 20_000, &mut rng).unwrap();
        diffs.push((b.value - tg_pivot(t, 0.0, tau).unwrap()).abs());
    }
    let worst = diffs.iter().copied().fold(0.0, f64::max);
    assert!(
        mean(&diffs) < 0.01 && worst < 0.04,
        "mean {} max {worst}",
        mean(&diffs)
    );
}

#[test]
fn weighted_boot_with_flat_weights_is_the_bootstrap_cdf() {
    let y = normal_data(80, 0.2, 6);
    let t = sqrt_n_mean(&y);
    let m = 0.5;
    let w = weighted_boot_pivot(&y, m, 0.0, &gauss(1e6), 4000, &mut stream_rng(7, 0)).unwrap();
    let u = boot_pivot_nonrand(&y, m, t - 1e9, 4000, &mut stream_rng(7, 0)).unwrap();
    assert!(
        (w.value - u.value).abs() < 1e-4,
        "{} vs {}",
        w.value,
        u.value
    );
}

#[test]
fn weighted_boot_single_atom() {
    let y = vec![2.0; 30];
    let p = weighted_boot_pivot(&y, 0.0, 1.0, &gauss(1.0), 1000, &mut stream_rng(8, 0)).unwrap();
    assert!(p.value == 0.0 || p.value == 1.0);
    assert!(p.warning.is_some());
}

#[test]
fn wild_boot_without_truncation_matches_unconditional() {
    let y = normal_data(40, 0.3, 9);
    let target = WildBootstrap::new(&y, 0.0, -1e6, &gauss(1.0)).unwrap();
    let config = LangevinConfig {
        steps: 120_000,
        metropolis: true,
        ..Default::default()
    };
    let mut ws = Vec::new();
    langevin_run(
        &target,
        &target.initial_state(),
        &config,
        &mut stream_rng(10, 0),
        |x| ws.push(target.statistic(x)),
    )
    .unwrap();
    let free = wild_boot_unconditional(&y, 0.0, 50_000, &mut stream_rng(11, 0));
    let ks = ks_two_sample(&ws, &free);
    assert!(ks < 0.03, "KS {ks}");
}

#[test]
fn wild_and_weighted_boot_agree_with_plugin() {
    let (n, tau) = (500, 1.0);
    let g = gauss(1.0);
    for rep in 0..3 {
        let y = selected_data(n, 0.0, tau - 1.0, 100 + rep);
        let t = sqrt_n_mean(&y);
        let m = 0.2;
        let plug = plugin_randomized_pivot(t, m, tau, &g, PluginMethod::Grid)
            .unwrap()
            .value;
        let wild = wild_boot_pivot(&y, m, tau, &g, 50_000, &mut stream_rng(rep, 2)).unwrap();
        let weighted =
            weighted_boot_pivot(&y, m, tau, &g, 20_000, &mut stream_rng(rep, 3)).unwrap();
        assert!(
            (wild.value - plug).abs() < 0.03,
            "wild {} plugin {plug}",
            wild.value
        );
        assert!(
            (weighted.value - wild.value).abs() < 0.03,
            "weighted {} wild {}",
            weighted.value,
            wild.value
        );
    }
}

#[test]
fn wild_boot_degenerate_data() {
    let y = vec![0.5; 20];
    let m = 0.5 * (20f64).sqrt();
    assert!(matches!(
        WildBootstrap::new(&y, m, 0.0, &gauss(1.0)),
        Err(Error::Degenerate(_))
    ));
    assert!(wild_boot_pivot(&y, m, 0.0, &gauss(1.0), 1000, &mut stream_rng(0, 0)).is_err());
}

fn bisect_decreasing<F: Fn(f64) -> f64>(f: F, level: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn inversion_of_tg_matches_bisection() {
    let (t, tau, alpha) = (3.0, 0.0, 0.1);
    let ci = invert_pivot(
        |m| tg_pivot(t, m, tau).map(PivotEstimate::exact),
        t,
        1.0,
        alpha,
    )
    .unwrap();
    let f = |m: f64| tg_pivot(t, m, tau).unwrap();
    let lower = bisect_decreasing(f, 0.95, -20.0, 20.0);
    let upper = bisect_decreasing(f, 0.05, -20.0, 20.0);
    assert!((ci.lower - lower).abs() < 1e-3, "{} vs {lower}", ci.lower);
    assert!((ci.upper - upper).abs() < 1e-3, "{} vs {upper}", ci.upper);
    assert!((ci.level - 0.9).abs() < 1e-15);
    assert_eq!(ci.grid_points, 401);
}

#[test]
fn inversion_without_truncation_is_the_z_interval() {
    let t = 1.7;
    let ci = invert_pivot(
        |m| tg_pivot(t, m, -1e12).map(PivotEstimate::exact),
        t,
        1.0,
        0.1,
    )
    .unwrap();
    let z = norm_quantile(0.95);
    assert!((ci.lower - (t - z)).abs() < 1e-3, "{}", ci.lower);
    assert!((ci.upper - (t + z)).abs() < 1e-3, "{}", ci.upper);
}

#[test]
fn inversion_at_full_alpha_is_the_median() {
    let t = 1.2;
    let ci = invert_pivot(
        |m| tg_pivot(t, m, 0.0).map(PivotEstimate::exact),
        t,
        1.0,
        1.0,
    )
    .unwrap();
    assert!((ci.upper - ci.lower).abs() < 1e-12);
    let median = bisect_decreasing(|m| tg_pivot(t, m, 0.0).unwrap(), 0.5, -20.0, 20.0);
    assert!((ci.lower - median).abs() < 1e-3);
}

#[test]
fn inversion_open_endpoint() {
    // Near the threshold the TG pivot stays above α/2 for all very negative m.
    let t = 0.05;
    let ci = invert_pivot(
        |m| tg_pivot(t, m, 0.0).map(PivotEstimate::exact),
        t,
        1.0,
        0.1,
    )
    .unwrap();
    assert_eq!(ci.lower, f64::NEG_INFINITY);
    assert!(ci.upper.is_finite());
}

#[test]
fn inversion_rejects_increasing_pivot() {
    let err = invert_pivot(|m| Ok(PivotEstimate::exact(norm_cdf(m))), 0.0, 1.0, 0.1).unwrap_err();
    assert!(matches!(err, Error::NonMonotonePivot { .. }), "{err}");
    assert!(invert_pivot(|m| Ok(PivotEstimate::exact(norm_cdf(-m))), 0.0, 1.0, 0.0).is_err());
}

#[test]
fn tilt_identity_and_extreme() {
    let chain: Vec<f64> = normal_data(5000, 1.0, 12);
    let r = tilt_reweight(&chain, 1.0, 1.0, 1.0).unwrap();
    assert!(r
        .weights
        .iter()
        .all(|w| (w * chain.len() as f64 - 1.0).abs() < 1e-12));
    assert!((r.ess - chain.len() as f64).abs() < 1e-6);
    assert!(matches!(
        tilt_reweight(&chain, 1.0, 11.0, 1.0),
        Err(Error::LowEffectiveSampleSize { .. })
    ));
}

#[test]
fn tilted_chain_matches_grid_pivot() {
    let (t, m0, tau) = (1.3, 0.5, 1.0);
    let g = gauss(1.0);
    let problem = ConditionalProblem::simple_threshold(t, m0, tau, Some(g)).unwrap();
    let chain = sample_data_coordinate(&problem, 100_000, 13, 0).unwrap();
    for m in [m0 - 0.5, m0, m0 + 0.5] {
        let r = tilt_reweight(&chain, m0, m, 1.0).unwrap();
        let tilted = r.fraction_below(&chain, t).value;
        let grid = plugin_randomized_pivot(t, m, tau, &g, PluginMethod::Grid)
            .unwrap()
            .value;
        assert!((tilted - grid).abs() < 0.02, "m={m}: {tilted} vs {grid}");
    }
}

fn mle_log_lik(mu: f64, ybar: f64, n: usize, tau: f64, gamma: f64) -> f64 {
    let sn = (n as f64).sqrt();
    -0.5 * n as f64 * (ybar - mu).powi(2)
        - norm_log_sf((tau - sn * mu) / (1.0 + gamma * gamma).sqrt())
}

fn mle_score(mu: f64, ybar: f64, n: usize, tau: f64, gamma: f64) -> f64 {
    let sn = (n as f64).sqrt();
    let s = (1.0 + gamma * gamma).sqrt();
    let z = (tau - sn * mu) / s;
    sn * (ybar - mu) - inferactive::special::norm_hazard(z) / s
}

#[test]
fn mle_near_certain_selection() {
    let n = 100;
    let ybar = 0.25;
    let tau = 10.0 * ybar - 20.0;
    let mu = selective_mle(ybar, n, tau, 1.0).unwrap();
    assert!((mu - ybar).abs() < 1e-6);
    let mu = selective_mle(ybar, n, 5.0, 1e8).unwrap();
    assert!((mu - ybar).abs() < 1e-6);
}

#[test]
fn mle_matches_grid_argmax() {
    for &(ybar, n, tau, gamma) in &[
        (0.2, 100, 2.0, 1.0),
        (0.05, 400, 1.5, 0.5),
        (-0.1, 50, 0.0, 2.0),
    ] {
        let mu = selective_mle(ybar, n, tau, gamma).unwrap();
        assert!(mle_score(mu, ybar, n, tau, gamma).abs() < 1e-10);
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        let mut x = ybar - 20.0 / (n as f64).sqrt();
        while x < ybar + 1.0 / (n as f64).sqrt() {
            let v = mle_log_lik(x, ybar, n, tau, gamma);
            if v > best {
                best = v;
                arg = x;
            }
            x += 1e-4;
        }
        assert!((mu - arg).abs() < 1e-4, "{mu} vs {arg}");
    }
}

#[test]
fn mle_error_shrinks_with_n() {
    let (mu, tau, gamma) = (0.1, 1.0, 1.0);
    let mut errs = Vec::new();
    for (k, &n) in [100usize, 400, 1600].iter().enumerate() {
        let mut rng = stream_rng(14, k as u64);
        let sn = (n as f64).sqrt();
        let mut total = 0.0;
        let mut reps = 0;
        while reps < 500 {
            let ybar = mu + rng.sample::<f64, _>(StandardNormal) / sn;
            let w = gamma * rng.sample::<f64, _>(StandardNormal);
            if sn * ybar + w <= tau {
                continue;
            }
            total += (selective_mle(ybar, n, tau, gamma).unwrap() - mu).abs();
            reps += 1;
        }
        errs.push(total / 500.0);
    }
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn posterior_without_truncation_is_conjugate() {
    let (ybar, n) = (0.3, 25);
    let post = bayes_posterior_simple(
        ybar,
        n,
        -1e12,
        1.0,
        (0.0, 1.0),
        100_000,
        &mut stream_rng(15, 0),
    )
    .unwrap();
    let var = 1.0 / (n as f64 + 1.0);
    let m = n as f64 * ybar * var;
    assert!(
        (post.mean() - m).abs() < 0.02 * m.abs().max(var.sqrt()),
        "{} vs {m}",
        post.mean()
    );
    assert!(
        (post.variance() / var - 1.0).abs() < 0.02,
        "{} vs {var}",
        post.variance()
    );
}

#[test]
fn posterior_mode_with_flat_prior_is_the_mle() {
    let (ybar, n, tau, gamma) = (0.15, 100, 2.0, 1.0);
    let post = bayes_posterior_simple(
        ybar,
        n,
        tau,
        gamma,
        (0.0, 100.0),
        2000,
        &mut stream_rng(16, 0),
    )
    .unwrap();
    let mle = selective_mle(ybar, n, tau, gamma).unwrap();
    assert!((post.map - mle).abs() < 0.01, "{} vs {mle}", post.map);
}

#[test]
fn posterior_with_sharp_prior_is_the_prior() {
    let post = bayes_posterior_simple(
        0.5,
        100,
        3.0,
        1.0,
        (-0.2, 1e-4),
        20_000,
        &mut stream_rng(17, 0),
    )
    .unwrap();
    assert!((post.mean() + 0.2).abs() < 1e-3);
    assert!(post.variance().sqrt() < 2e-4);
}

#[test]
fn conditional_mc_discrete_toy() {
    let sample = |rng: &mut inferactive::stats::SessionRng| rng.gen_range(1..=20) as f64;
    let mc = conditional_mc_pvalue(
        sample,
        |t: &f64| *t > 10.0,
        |t: &f64| *t,
        16.0,
        20_000,
        10_000_000,
        &mut stream_rng(18, 0),
    )
    .unwrap();
    assert!((mc.p_value - 0.5).abs() < 3.0 * mc.se, "{mc:?}");
    assert!((mc.naive - mc.selection_probability * mc.p_value).abs() < 3.0 * mc.naive_se);

    let support: Vec<(u32, Ratio<i64>)> = (1..=20).map(|t| (t, Ratio::new(1, 20))).collect();
    let exact = exact_conditional_pvalue(&support, |t| *t > 10, |t| *t as f64, 16.0).unwrap();
    assert_eq!(exact.p_value, Ratio::new(1, 2));
    assert_eq!(exact.selection_probability, Ratio::new(1, 2));
    assert_eq!(exact.naive, exact.selection_probability * exact.p_value);

    let report = mc.report("T");
    assert_eq!(report.method, Method::McConditional);
    assert!((report.pvalue - two_sided(report.pivot)).abs() < 1e-15);
}

#[test]
fn conditional_mc_trivial_predicate_and_budget() {
    let sample = |rng: &mut inferactive::stats::SessionRng| rng.gen::<f64>();
    let mc = conditional_mc_pvalue(
        sample,
        |_: &f64| true,
        |u: &f64| *u,
        0.9,
        10_000,
        20_000,
        &mut stream_rng(19, 0),
    )
    .unwrap();
    assert_eq!(mc.accepted, mc.proposals);
    assert_eq!(mc.p_value, mc.naive);
    assert!((mc.p_value - 0.1).abs() < 3.0 * mc.se);
    let err = conditional_mc_pvalue(
        sample,
        |u: &f64| *u > 2.0,
        |u: &f64| *u,
        0.5,
        1,
        1000,
        &mut stream_rng(19, 1),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        Error::BudgetExhausted {
            proposals: 1000,
            ..
        }
    ));
}

#[test]
fn method_names_round_trip() {
    for m in [
        "tg",
        "plugin-randomized",
        "boot-nonrand",
        "boot-wild",
        "boot-weighted",
        "mc-conditional",
    ] {
        assert_eq!(m.parse::<Method>().unwrap().name(), m);
    }
    assert!("bogus".parse::<Method>().is_err());
}

proptest! {
    #[test]
    fn tg_monotone(t in -3.0f64..3.0, dt in 0.0f64..1.0, m in -3.0f64..3.0, dm in 0.0f64..1.0, tau in -3.0f64..3.0) {
        let t = t.max(tau);
        let a = tg_pivot(t, m, tau).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(tg_pivot(t + dt, m, tau).unwrap() >= a - 1e-12);
        prop_assert!(tg_pivot(t, m + dm, tau).unwrap() <= a + 1e-12);
    }

    #[test]
    fn plugin_monotone(t in -3.0f64..4.0, dt in 0.0f64..1.0, m in -2.0f64..2.0, dm in 0.0f64..1.0, tau in -2.0f64..3.0, g in 0.2f64..3.0) {
        let g = gauss(g);
        let p = |t: f64, m: f64| plugin_randomized_pivot(t, m, tau, &g, PluginMethod::Grid).unwrap().value;
        let a = p(t, m);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(p(t + dt, m) >= a - 1e-9);
        prop_assert!(p(t, m + dm) <= a + 1e-9);
    }

    #[test]
    fn two_sided_in_unit_interval(p in 0.0f64..=1.0) {
        let v = two_sided(p);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - two_sided(1.0 - p)).abs() < 1e-15);
    }
}
