mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trendwatch::regression::{fit_linear_log, fit_negbin, fit_poisson, fit_window, Model};
use trendwatch::stats::normal_sf;
use trendwatch::timeseries::Window;

fn window(v: &[f64]) -> Window {
    Window::from_values(v.to_vec()).unwrap()
}

fn counts(rng: &mut ChaCha8Rng, n: usize, a: f64, b: f64, c: f64) -> Vec<f64> {
    (1..=n).map(|i| nb_draw(rng, (a + b * i as f64).exp(), c)).collect()
}

#[test]
fn linear_log_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let n = [7, 14, 21, 28][rng.random_range(0..4)];
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..500.0f64).round()).collect();
        let fit = fit_linear_log(&window(&ys)).unwrap();
        let (a, b) = ols_oracle(&log_oracle(&ys));
        assert!((fit.beta_hat - b).abs() < 1e-10, "{} vs {b}", fit.beta_hat);
        assert!((fit.alpha_hat - a).abs() < 1e-9);
    }
}

#[test]
fn linear_log_standard_error_matches_residual_formula() {
    let ys = [12.0, 15.0, 11.0, 19.0, 25.0, 22.0, 31.0, 30.0];
    let fit = fit_linear_log(&window(&ys)).unwrap();
    let l = log_oracle(&ys);
    let (a, b) = ols_oracle(&l);
    let n = ys.len() as f64;
    let rss: f64 = l.iter().enumerate().map(|(i, v)| (v - a - b * (i + 1) as f64).powi(2)).sum();
    let xbar = (n + 1.0) / 2.0;
    let sxx: f64 = (1..=ys.len()).map(|i| (i as f64 - xbar).powi(2)).sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    assert!((fit.se_beta - se).abs() < 1e-12);
    assert!((fit.p_one_sided - normal_sf(b / se)).abs() < 1e-14);
}

#[test]
fn poisson_and_negbin_match_bfgs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..80 {
        let n = [7, 14, 21, 28][k % 4];
        let a = rng.random_range(2.0..5.0);
        let b = rng.random_range(-0.08..0.08);
        let y = counts(&mut rng, n, a, b, 0.2);
        if y.iter().filter(|&&v| v > 0.0).count() < 2 {
            continue;
        }
        let p = fit_poisson(&window(&y)).unwrap();
        assert!(p.converged);
        assert!((p.beta_hat - count_mle_oracle(&y, 0.0)).abs() < 1e-5);

        let nb = fit_negbin(&window(&y)).unwrap();
        let c = dispersion_oracle(&y, &p.fitted_means());
        assert!((nb.dispersion_c - c).abs() < 1e-9 * (1.0 + c));
        assert!(nb.converged);
        assert!((nb.beta_hat - count_mle_oracle(&y, c)).abs() < 1e-5, "{} {c}", nb.beta_hat);
    }
}

#[test]
fn score_vanishes_at_converged_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let y = counts(&mut rng, 21, 3.5, 0.03, 0.1);
        for model in [Model::Poisson, Model::Negbin] {
            let f = fit_window(&window(&y), model).unwrap();
            assert!(f.converged);
            let mid = 11.0;
            let (_, g) = count_nll(&y, f.dispersion_c, [f.alpha_hat + f.beta_hat * mid, f.beta_hat]);
            assert!(g[0].hypot(g[1]) < 1e-8, "{model:?}: score {g:?}");
        }
    }
}

#[test]
fn one_positive_day_does_not_converge() {
    let y = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 9.0];
    assert!(!fit_poisson(&window(&y)).unwrap().converged);
}

#[test]
fn count_models_reject_fractional_values() {
    let y = [1.0, 2.5, 3.0, 4.0];
    assert!(fit_poisson(&window(&y)).is_err());
    assert!(fit_linear_log(&window(&y)).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reversing_the_window_negates_beta(ys in prop::collection::vec(1.0f64..1e4, 5..40)) {
        let mut rev = ys.clone();
        rev.reverse();
        let a = fit_linear_log(&window(&ys)).unwrap();
        let b = fit_linear_log(&window(&rev)).unwrap();
        prop_assert_eq!(a.beta_hat, -b.beta_hat);
    }

    #[test]
    fn scaling_leaves_slope_unchanged(ys in prop::collection::vec(1.0f64..1e4, 5..40), k in 0.01f64..100.0) {
        let scaled: Vec<f64> = ys.iter().map(|v| v * k).collect();
        let a = fit_linear_log(&window(&ys)).unwrap();
        let b = fit_linear_log(&window(&scaled)).unwrap();
        prop_assert!((a.beta_hat - b.beta_hat).abs() < 1e-10);
    }

    #[test]
    fn p_values_lie_in_unit_interval(ys in prop::collection::vec(0u32..300, 7..29)) {
        let y: Vec<f64> = ys.iter().map(|&v| v as f64).collect();
        for m in [Model::LinearLog, Model::Poisson, Model::Negbin] {
            if let Ok(f) = fit_window(&window(&y), m) {
                prop_assert!((0.0..=1.0).contains(&f.p_one_sided));
                prop_assert!(f.se_beta >= 0.0);
                prop_assert!(f.dispersion_c >= 0.0);
            }
        }
    }

    #[test]
    fn exact_exponential_growth_is_recovered(a in 1.0f64..6.0, b in -0.2f64..0.2, n in 5usize..30) {
        let y: Vec<f64> = (1..=n).map(|i| (a + b * i as f64).exp()).collect();
        let f = fit_linear_log(&window(&y)).unwrap();
        prop_assert!((f.beta_hat - b).abs() < 1e-9);
    }
}
