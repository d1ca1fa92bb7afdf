mod common;

use countreg::data::{CountDataset, DesignMatrix};
use countreg::engine::{fit_count_sgl, FitControls, FitResult};
use countreg::models::{sample_counts, CoefficientMatrix, ModelKind};
use countreg::penalty::{EpsilonPolicy, GroupStructure, PenaltyConfig};
use countreg::sim::gen_covariates;
use countreg::tuning::lambda_max_estimate;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simulated(n: usize, p: usize, taxa: usize, seed: u64) -> CountDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = gen_covariates(n, p, 0.3, seed);
    let x = DesignMatrix::from_covariates(&cov, (1..=p).map(|j| format!("x{j}")).collect()).unwrap();
    let mut b = Array2::zeros((p + 1, taxa));
    for j in 1..=p.min(3) {
        for d in 0..taxa {
            if rng.random_bool(0.5) {
                b[[j, d]] = rng.random_range(-0.7..0.7);
            }
        }
    }
    let b = CoefficientMatrix::new(b, ModelKind::DirichletMultinomial, taxa).unwrap();
    let totals: Vec<u64> = (0..n).map(|_| rng.random_range(50..300)).collect();
    let y = sample_counts(ModelKind::DirichletMultinomial, &b, &x, &totals, seed).unwrap();
    CountDataset::new(x, y).unwrap()
}

/// Checks descent between iterations that did not change the active set.
fn assert_descent(fit: &FitResult, label: &str) {
    let drops = fit.drop_iterations();
    for t in 1..fit.objective_trace.len() {
        if drops.contains(&t) {
            continue;
        }
        let (prev, next) = (fit.objective_trace[t - 1], fit.objective_trace[t]);
        assert!(next <= prev + 1e-8, "{label}: objective rose at iteration {t}: {prev} -> {next}");
    }
}

fn policies() -> [EpsilonPolicy; 2] {
    [EpsilonPolicy::default(), EpsilonPolicy::perturb_default()]
}

#[test]
fn traces_descend_at_desk_scale() {
    let controls = FitControls::default();
    for (s, kind) in ModelKind::ALL.into_iter().enumerate() {
        let data = simulated(100, 10, 5, 40 + s as u64);
        for policy in policies() {
            for &(alpha, frac) in &[(0.5, 0.3), (0.9, 0.1)] {
                let lmax = lambda_max_estimate(kind, &data, alpha, &controls).unwrap();
                let structure = GroupStructure::row_groups(data.p(), kind.d_e(data.taxa()));
                let config = PenaltyConfig::new(frac * lmax, alpha, structure, policy).unwrap();
                let fit = fit_count_sgl(kind, &data, &config, &controls).unwrap();
                assert_descent(&fit, &format!("{kind} {policy:?} alpha={alpha}"));
            }
        }
    }
}

#[test]
fn traces_descend_on_small_random_problems() {
    let controls = FitControls {
        max_iter: 200,
        ..FitControls::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for kind in ModelKind::ALL {
        for t in 0..20 {
            let data = simulated(rng.random_range(15..40), rng.random_range(1..5), rng.random_range(2..5), 1000 + t);
            let alpha = rng.random_range(0.0..1.0);
            let lambda = rng.random_range(0.5..20.0);
            let policy = policies()[t as usize % 2];
            let structure = GroupStructure::row_groups(data.p(), kind.d_e(data.taxa()));
            let config = PenaltyConfig::new(lambda, alpha, structure, policy).unwrap();
            let fit = fit_count_sgl(kind, &data, &config, &controls).unwrap();
            assert_descent(&fit, &format!("{kind} instance {t}"));
            assert_eq!(fit.kappa, fit.active_cells.len());
        }
    }
}

#[test]
fn group_penalty_keeps_or_drops_whole_groups() {
    let controls = FitControls::default();
    let kind = ModelKind::DirichletMultinomial;
    let data = simulated(100, 10, 5, 3);
    let lmax = lambda_max_estimate(kind, &data, 0.0, &controls).unwrap();
    let structure = GroupStructure::row_groups(data.p(), kind.d_e(data.taxa()));
    for frac in [0.1, 0.3, 0.6] {
        let config = PenaltyConfig::new(frac * lmax, 0.0, structure.clone(), EpsilonPolicy::default()).unwrap();
        let fit = fit_count_sgl(kind, &data, &config, &controls).unwrap();
        for r in 1..=data.p() {
            let row = fit.b_hat.b.row(r);
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            assert!(zeros == 0 || zeros == row.len(), "row {r} partially zero: {row}");
        }
    }
}

#[test]
fn identical_inputs_give_identical_fits() {
    let controls = FitControls::default();
    let kind = ModelKind::GeneralizedDirichletMultinomial;
    let data = simulated(60, 5, 4, 8);
    let structure = GroupStructure::row_groups(data.p(), kind.d_e(data.taxa()));
    let config = PenaltyConfig::new(5.0, 0.5, structure, EpsilonPolicy::default()).unwrap();
    let a = fit_count_sgl(kind, &data, &config, &controls).unwrap();
    let b = fit_count_sgl(kind, &data, &config, &controls).unwrap();
    assert_eq!(a, b);
}
