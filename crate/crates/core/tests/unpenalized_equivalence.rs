mod common;

use common::{dataset, oracle_model};
use countreg::data::{CountDataset, DesignMatrix};
use countreg::engine::{fit_count_sgl, FitControls};
use countreg::glm::{fit_glm_sgl, glm_loglik, glm_working, GlmFamily};
use countreg::models::{sample_counts, CoefficientMatrix, ModelKind};
use countreg::penalty::{EpsilonPolicy, GroupStructure, PenaltyConfig};
use countreg::ridge::solve_weighted_ridge;
use countreg_testkit::{count_mle, dense_solve, poisson_newton_mle, random_design};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn dm_data(seed: u64, n: usize, p: usize, taxa: usize) -> CountDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_design(&mut rng, n, p, 1.0);
    let b = Array2::from_shape_fn((p + 1, taxa), |(j, _)| if j == 0 { rng.random_range(0.0..1.0) } else { rng.random_range(-0.6..0.6) });
    let design = DesignMatrix::new(x.clone(), (1..=p).map(|j| format!("x{j}")).collect()).unwrap();
    let totals: Vec<u64> = (0..n).map(|_| rng.random_range(20..80)).collect();
    let cm = CoefficientMatrix::new(b, ModelKind::DirichletMultinomial, taxa).unwrap();
    let y = sample_counts(ModelKind::DirichletMultinomial, &cm, &design, &totals, seed).unwrap();
    CountDataset::new(design, y).unwrap()
}

/// Controls for comparisons against an optimizer: MM converges linearly, so
/// the default relative tolerance stops a few 1e-4 short of the maximum.
fn tight() -> FitControls {
    FitControls {
        tol: 1e-11,
        max_iter: 50_000,
        ..FitControls::default()
    }
}

fn unpenalized(kind: ModelKind, data: &CountDataset) -> PenaltyConfig {
    PenaltyConfig::new(0.0, 0.5, GroupStructure::row_groups(data.p(), kind.d_e(data.taxa())), EpsilonPolicy::default()).unwrap()
}

#[test]
fn dm_unpenalized_fit_reaches_the_likelihood_maximum() {
    let kind = ModelKind::DirichletMultinomial;
    for seed in 0..3 {
        let data = dm_data(100 + seed, 50, 2, 3);
        let fit = fit_count_sgl(kind, &data, &unpenalized(kind, &data), &tight()).unwrap();
        assert!(fit.converged, "seed {seed} after {} iterations", fit.iterations);
        let (_, best) = count_mle(oracle_model(kind), data.x.values(), data.y.values(), 5, seed);
        assert!((fit.loglik_final - best).abs() <= 1e-4, "seed {seed}: engine {} vs optimizer {best}", fit.loglik_final);
    }
}

#[test]
fn other_models_reach_their_unpenalized_maximum() {
    for kind in [ModelKind::Multinomial, ModelKind::NegativeMultinomial, ModelKind::GeneralizedDirichletMultinomial] {
        let data = dm_data(7, 40, 1, 3);
        let fit = fit_count_sgl(kind, &data, &unpenalized(kind, &data), &tight()).unwrap();
        assert!(fit.converged, "{kind} after {} iterations", fit.iterations);
        let (_, best) = count_mle(oracle_model(kind), data.x.values(), data.y.values(), 3, 1);
        assert!((fit.loglik_final - best).abs() <= 1e-4, "{kind}: engine {} vs optimizer {best}", fit.loglik_final);
    }
}

#[test]
fn null_fit_intercepts_match_intercept_only_optimum() {
    let kind = ModelKind::DirichletMultinomial;
    let data = dm_data(5, 60, 3, 3);
    let config = PenaltyConfig::new(1e6, 0.5, GroupStructure::row_groups(3, 3), EpsilonPolicy::default()).unwrap();
    let fit = fit_count_sgl(kind, &data, &config, &FitControls::default()).unwrap();
    assert!(fit.is_null());
    let ones = Array2::ones((data.n(), 1));
    let (b0, l0) = count_mle(oracle_model(kind), &ones, data.y.values(), 3, 2);
    for d in 0..3 {
        assert!((fit.b_hat.b[[0, d]] - b0[[0, d]]).abs() < 1e-4, "{} vs {}", fit.b_hat.b[[0, d]], b0[[0, d]]);
    }
    assert!((fit.loglik_final - l0).abs() < 1e-6);
}

fn poisson_data(seed: u64, n: usize, beta: &Array1<f64>) -> (DesignMatrix, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_design(&mut rng, n, beta.len() - 1, 1.0);
    let y = x
        .dot(beta)
        .mapv(|e| Poisson::new(e.exp()).unwrap().sample(&mut rng));
    let names = (1..beta.len()).map(|j| format!("x{j}")).collect();
    (DesignMatrix::new(x, names).unwrap(), y)
}

#[test]
fn poisson_unpenalized_matches_newton() {
    let truth = array![1.0, 0.5, -0.3, 0.2];
    let (x, y) = poisson_data(3, 50, &truth);
    let config = PenaltyConfig::new(0.0, 0.5, GroupStructure::singletons(3), EpsilonPolicy::default()).unwrap();
    let fit = fit_glm_sgl(&x, &y, GlmFamily::PoissonLog, &config, &FitControls::default()).unwrap();
    let oracle = poisson_newton_mle(x.values(), &y);
    for (a, b) in fit.beta.iter().zip(oracle.iter()) {
        assert!((a - b).abs() < 1e-6, "{} vs {}", fit.beta, oracle);
    }
}

#[test]
fn irls_step_is_a_newton_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, y) = poisson_data(4, 30, &array![0.5, 0.3, -0.2]);
    let beta_t: Array1<f64> = (0..3).map(|_| rng.random_range(-0.3..0.3)).collect();
    let wk = glm_working(GlmFamily::PoissonLog, &x, &y, &beta_t).unwrap();
    let step = solve_weighted_ridge(x.values().view(), wk.gamma.view(), wk.z.view(), Array1::zeros(3).view()).unwrap();
    let xv = x.values();
    let mu = xv.dot(&beta_t).mapv(f64::exp);
    let grad = xv.t().dot(&(&y - &mu));
    let hess = xv.t().dot(&(xv * &mu.view().insert_axis(ndarray::Axis(1))));
    let newton = &beta_t + &dense_solve(&hess, &grad);
    for (a, b) in step.iter().zip(newton.iter()) {
        assert!((a - b).abs() < 1e-10, "{step} vs {newton}");
    }
}

#[test]
fn penalized_poisson_shrinks_irrelevant_coefficients_and_descends() {
    let truth = array![1.0, 0.5, 0.0, 0.0];
    let (x, y) = poisson_data(8, 200, &truth);
    for policy in [EpsilonPolicy::default(), EpsilonPolicy::perturb_default()] {
        let config = PenaltyConfig::new(15.0, 1.0, GroupStructure::singletons(3), policy).unwrap();
        let fit = fit_glm_sgl(&x, &y, GlmFamily::PoissonLog, &config, &FitControls::default()).unwrap();
        let drops: Vec<usize> = fit.drop_events.iter().map(|e| e.iteration).collect();
        for t in 1..fit.objective_trace.len() {
            if !drops.contains(&t) {
                assert!(fit.objective_trace[t] <= fit.objective_trace[t - 1] + 1e-8);
            }
        }
        assert!(fit.beta[1].abs() > 0.2, "{}", fit.beta);
        assert!(fit.beta[2].abs() < 0.05 && fit.beta[3].abs() < 0.05, "{}", fit.beta);
    }
}

#[test]
fn huge_penalty_gives_null_glm() {
    let (x, y) = poisson_data(9, 80, &array![0.7, 0.4, -0.4]);
    let config = PenaltyConfig::new(1e6, 0.5, GroupStructure::singletons(2), EpsilonPolicy::default()).unwrap();
    let fit = fit_glm_sgl(&x, &y, GlmFamily::PoissonLog, &config, &FitControls::default()).unwrap();
    assert!(fit.active_set.is_empty());
    assert!(fit.beta.iter().skip(1).all(|v| v.abs() < 1e-6));
}

#[test]
fn logistic_unpenalized_matches_likelihood_stationarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let xv = random_design(&mut rng, 120, 2, 1.0);
    let y: Array1<f64> = xv
        .rows()
        .into_iter()
        .map(|r| {
            let p = 1.0 / (1.0 + (-(0.3 + 0.8 * r[1] - 0.5 * r[2])).exp());
            if rng.random_bool(p) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let x = DesignMatrix::new(xv.clone(), vec!["a".into(), "b".into()]).unwrap();
    let config = PenaltyConfig::new(0.0, 0.5, GroupStructure::singletons(2), EpsilonPolicy::default()).unwrap();
    let fit = fit_glm_sgl(&x, &y, GlmFamily::BinomialLogit, &config, &FitControls::default()).unwrap();
    let grad = countreg_testkit::fd_gradient(|b| glm_loglik(GlmFamily::BinomialLogit, &x, &y, &Array1::from_vec(b.to_vec())), fit.beta.as_slice().unwrap(), 1e-6);
    assert!(grad.iter().all(|g| g.abs() < 1e-5), "{grad:?}");
}

#[test]
fn dm_dataset_helper_round_trips_through_the_engine() {
    let x = array![[1.0, 0.2], [1.0, -0.4], [1.0, 1.0]];
    let y = array![[2u64, 3], [1, 4], [5, 0]];
    let data = dataset(&x, &y);
    assert_eq!(data.y.row_totals(), &[5, 5, 5]);
}
