//! EBIC model selection over `(λ, α)`, the null-model threshold `λ_max`, and
//! warm-started grid and random searches.

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::CountDataset;
use crate::engine::{fit_count_sgl_from, warm_start, FitControls, FitResult};
use crate::error::{CountRegError, Result};
use crate::models::{score_from_eta, ModelKind, Predictors};
use crate::par::map_indexed;
use crate::penalty::{EpsilonPolicy, GroupStructure, PenaltyConfig};
use crate::rng::{derive_seed, purpose, stream_rng};

/// `−2ℓ + κ (ln n + ln K)`.
pub fn ebic(loglik_final: f64, kappa: usize, n: usize, k: usize) -> f64 {
    -2.0 * loglik_final + kappa as f64 * ((n as f64).ln() + (k as f64).ln())
}

/// Number of penalized parameters for `kind` on `data`.
pub fn penalized_count(kind: ModelKind, data: &CountDataset) -> usize {
    data.p() * kind.d_e(data.taxa())
}

pub fn fit_ebic(fit: &FitResult, kind: ModelKind, data: &CountDataset) -> f64 {
    ebic(fit.loglik_final, fit.kappa, data.n(), penalized_count(kind, data).max(1))
}

/// Probe multipliers applied to the first-order estimate of `λ_max`.
pub const PROBE_MULTIPLIERS: [f64; 9] = [1.0, 1.05, 1.1, 1.2, 1.35, 1.5, 2.0, 3.0, 5.0];

/// Number of doublings past the last probe before giving up.
const MAX_DOUBLINGS: usize = 30;

/// Smallest `λ` at which the intercept-only fit satisfies the optimality
/// conditions of the penalized problem, for row groups under mixing `alpha`.
pub fn lambda_max_estimate(kind: ModelKind, data: &CountDataset, alpha: f64, controls: &FitControls) -> Result<f64> {
    let d_e = kind.d_e(data.taxa());
    let null = crate::engine::intercept_only_fit(kind, data, controls)?;
    let mut b = Array2::zeros((data.p() + 1, d_e));
    b.row_mut(0).assign(&null.b_hat.b.row(0));
    let eta = Predictors::new(&data.x, b.view()).eta;
    let grad = score_from_eta(kind, &eta, data, controls.sum_method)?;
    let mut best = 0.0f64;
    for j in 1..=data.p() {
        let g: Vec<f64> = grad.row(j).to_vec();
        best = best.max(group_threshold(&g, alpha));
    }
    Ok(best)
}

/// Smallest `λ` with `‖S(g, αλ)‖₂ ≤ (1−α) λ √|g|`, where `S` soft-thresholds.
fn group_threshold(g: &[f64], alpha: f64) -> f64 {
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax == 0.0 {
        return 0.0;
    }
    let root = (g.len() as f64).sqrt();
    if alpha >= 1.0 {
        return gmax;
    }
    let excess = |lambda: f64| {
        let s: f64 = g.iter().map(|v| (v.abs() - alpha * lambda).max(0.0).powi(2)).sum();
        s.sqrt() - (1.0 - alpha) * lambda * root
    };
    let mut lo = 0.0;
    let mut hi = if alpha > 0.0 { gmax / alpha } else { gmax.max(1e-300) };
    while excess(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

#[derive(Debug, Clone)]
pub struct LambdaMax {
    pub lambda: f64,
    pub fit: FitResult,
    /// `(λ, κ)` for every probe fitted, in order.
    pub probes: Vec<(f64, usize)>,
}

/// Row-group penalty for `kind` on `data`: one group per covariate across all
/// response columns.
pub fn penalty_for(kind: ModelKind, data: &CountDataset, lambda: f64, alpha: f64, policy: EpsilonPolicy) -> Result<PenaltyConfig> {
    let structure = GroupStructure::row_groups(data.p(), kind.d_e(data.taxa()));
    PenaltyConfig::new(lambda, alpha, structure, policy)
}

/// Fits along the ascending `probe_grid` with warm starts and returns the
/// first null fit, doubling past the end of the grid up to a fixed cap.
pub fn find_lambda_max(
    kind: ModelKind,
    data: &CountDataset,
    alpha: f64,
    probe_grid: &[f64],
    policy: EpsilonPolicy,
    controls: &FitControls,
) -> Result<LambdaMax> {
    if probe_grid.is_empty() || probe_grid.windows(2).any(|w| !(w[1] > w[0])) || !(probe_grid[0] > 0.0) {
        return Err(CountRegError::InvalidConfig("probe grid must be positive and strictly increasing".into()));
    }
    let warm = warm_start(kind, data, controls).b;
    let mut init = warm;
    let mut probes = Vec::new();
    let mut last = (0.0, 0);
    let extra = (1..=MAX_DOUBLINGS).map(|k| probe_grid[probe_grid.len() - 1] * 2f64.powi(k as i32));
    for lambda in probe_grid.iter().copied().chain(extra) {
        let config = penalty_for(kind, data, lambda, alpha, policy)?;
        let fit = fit_count_sgl_from(kind, data, &config, controls, Some(&init))?;
        probes.push((lambda, fit.kappa));
        last = (lambda, fit.kappa);
        if fit.is_null() {
            return Ok(LambdaMax { lambda, fit, probes });
        }
        init = fit.b_hat.b.clone();
    }
    Err(CountRegError::LambdaCapExceeded {
        lambda: last.0,
        active: last.1,
    })
}

/// `λ_max` for one mixing value, probing multiples of the first-order estimate.
pub fn lambda_max_for(kind: ModelKind, data: &CountDataset, alpha: f64, policy: EpsilonPolicy, controls: &FitControls) -> Result<LambdaMax> {
    let estimate = lambda_max_estimate(kind, data, alpha, controls)?.max(1e-8);
    let grid: Vec<f64> = PROBE_MULTIPLIERS.iter().map(|m| m * estimate).collect();
    find_lambda_max(kind, data, alpha, &grid, policy, controls)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SearchMode {
    Grid,
    Random { n_draws: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub mode: SearchMode,
    pub n_lambda: usize,
    pub alpha_values: Vec<f64>,
    /// Range for `α` draws in random mode.
    pub alpha_range: (f64, f64),
    pub lambda_ratio: f64,
    pub seed: u64,
    /// Initialize each grid point from the previous, larger-`λ` solution.
    pub warm_path: bool,
    pub epsilon_policy: EpsilonPolicy,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            mode: SearchMode::Grid,
            n_lambda: 100,
            alpha_values: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            alpha_range: (0.1, 0.9),
            lambda_ratio: 0.001,
            seed: 0,
            warm_path: true,
            epsilon_policy: EpsilonPolicy::default(),
        }
    }
}

impl SearchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambda == 0 {
            return Err(CountRegError::InvalidConfig("n_lambda must be at least 1".into()));
        }
        if !(self.lambda_ratio > 0.0 && self.lambda_ratio < 1.0) {
            return Err(CountRegError::InvalidConfig("lambda_ratio must lie in (0, 1)".into()));
        }
        let (lo, hi) = self.alpha_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(CountRegError::InvalidConfig("alpha range must lie in [0, 1]".into()));
        }
        match self.mode {
            SearchMode::Grid if self.alpha_values.is_empty() => {
                Err(CountRegError::InvalidConfig("grid search needs at least one alpha".into()))
            }
            SearchMode::Random { n_draws: 0 } => Err(CountRegError::InvalidConfig("random search needs at least one draw".into())),
            _ if self.alpha_values.iter().any(|a| !(0.0..=1.0).contains(a)) => {
                Err(CountRegError::InvalidConfig("alpha values must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }

    /// Log-spaced `λ` values from `lambda_max` down to `ratio · lambda_max`.
    pub fn lambda_path(&self, lambda_max: f64) -> Vec<f64> {
        if self.n_lambda == 1 {
            return vec![lambda_max];
        }
        let steps = (self.n_lambda - 1) as f64;
        (0..self.n_lambda)
            .map(|k| lambda_max * self.lambda_ratio.powf(k as f64 / steps))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbicRow {
    pub lambda: f64,
    pub alpha: f64,
    pub ebic: f64,
    pub kappa: usize,
    pub converged: bool,
    pub loglik: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct TuningResult {
    pub best_lambda: f64,
    pub best_alpha: f64,
    pub best_fit: FitResult,
    pub ebic_table: Vec<EbicRow>,
    /// `(α, λ_max(α))`.
    pub lambda_max: Vec<(f64, f64)>,
}

/// Ordering used for selection: lower EBIC, then larger `λ`, then smaller `α`.
fn better(a: &EbicRow, b: &EbicRow) -> bool {
    if a.ebic != b.ebic {
        return a.ebic < b.ebic;
    }
    if a.lambda != b.lambda {
        return a.lambda > b.lambda;
    }
    a.alpha < b.alpha
}

fn row_for(fit: &FitResult, kind: ModelKind, data: &CountDataset) -> EbicRow {
    EbicRow {
        lambda: fit.lambda,
        alpha: fit.alpha,
        ebic: fit_ebic(fit, kind, data),
        kappa: fit.kappa,
        converged: fit.converged,
        loglik: fit.loglik_final,
        iterations: fit.iterations,
    }
}

/// A path's rows and its best converged fit.
type PathOutcome = (Vec<EbicRow>, Option<(EbicRow, FitResult)>);

fn keep_best(best: &mut Option<(EbicRow, FitResult)>, row: &EbicRow, fit: &FitResult) {
    if !row.converged || !row.ebic.is_finite() {
        return;
    }
    if best.as_ref().is_none_or(|(b, _)| better(row, b)) {
        *best = Some((row.clone(), fit.clone()));
    }
}

/// Magnitude given to cells re-entering a path step.
pub const RESEED_MAGNITUDE: f64 = crate::engine::REENTRY_MAGNITUDE;

/// Starting point for a path step: the previous solution, with cells it
/// zeroed restarted at a small value carrying the warm start's sign. A
/// restarted cell grows only if the penalty no longer holds it at zero.
fn reseed(prev: &Array2<f64>, warm: &Array2<f64>) -> Array2<f64> {
    Zip::from(prev).and(warm).map_collect(|&p, &w| {
        if p == 0.0 && w != 0.0 {
            RESEED_MAGNITUDE.copysign(w)
        } else {
            p
        }
    })
}

fn fit_point(
    kind: ModelKind,
    data: &CountDataset,
    lambda: f64,
    alpha: f64,
    spec: &SearchSpec,
    controls: &FitControls,
    init: &Array2<f64>,
) -> Result<FitResult> {
    let config = penalty_for(kind, data, lambda, alpha, spec.epsilon_policy)?;
    fit_count_sgl_from(kind, data, &config, controls, Some(init))
}

fn grid_path(kind: ModelKind, data: &CountDataset, alpha: f64, spec: &SearchSpec, controls: &FitControls, warm: &Array2<f64>) -> Result<(f64, PathOutcome)> {
    let lm = lambda_max_for(kind, data, alpha, spec.epsilon_policy, controls)?;
    let lambdas = spec.lambda_path(lm.lambda);
    let mut rows = Vec::with_capacity(lambdas.len());
    let mut best = None;
    let top = fit_point(kind, data, lm.lambda, alpha, spec, controls, warm)?;
    let first = row_for(&top, kind, data);
    keep_best(&mut best, &first, &top);
    rows.push(first);
    let rest = &lambdas[1..];
    if spec.warm_path {
        let mut prev = top.b_hat.b.clone();
        for &lambda in rest {
            let fit = fit_point(kind, data, lambda, alpha, spec, controls, &reseed(&prev, warm))?;
            let row = row_for(&fit, kind, data);
            keep_best(&mut best, &row, &fit);
            rows.push(row);
            prev = fit.b_hat.b;
        }
    } else {
        let fits = map_indexed(controls.execution, rest.len(), |k| fit_point(kind, data, rest[k], alpha, spec, controls, warm));
        for fit in fits {
            let fit = fit?;
            let row = row_for(&fit, kind, data);
            keep_best(&mut best, &row, &fit);
            rows.push(row);
        }
    }
    let falls = rows.windows(2).filter(|w| w[1].kappa < w[0].kappa).count();
    if falls > 0 {
        log::info!("alpha {alpha}: kappa fell in {falls} of {} steps down the lambda path", rows.len() - 1);
    }
    Ok((lm.lambda, (rows, best)))
}

/// Searches `(λ, α)` and returns the EBIC-minimizing converged fit.
pub fn tune(kind: ModelKind, data: &CountDataset, spec: &SearchSpec, controls: &FitControls) -> Result<TuningResult> {
    spec.validate()?;
    controls.validate()?;
    let warm = warm_start(kind, data, controls).b;
    let mut table = Vec::new();
    let mut lambda_max = Vec::new();
    let mut best: Option<(EbicRow, FitResult)> = None;
    match spec.mode {
        SearchMode::Grid => {
            let alphas = &spec.alpha_values;
            let paths = map_indexed(controls.execution, alphas.len(), |k| grid_path(kind, data, alphas[k], spec, controls, &warm));
            for (k, path) in paths.into_iter().enumerate() {
                let (lmax, (rows, path_best)) = path?;
                lambda_max.push((alphas[k], lmax));
                table.extend(rows);
                if let Some((row, fit)) = path_best {
                    keep_best(&mut best, &row, &fit);
                }
            }
        }
        SearchMode::Random { n_draws } => {
            let seed = derive_seed(spec.seed, &[purpose::SEARCH]);
            let (lo, hi) = spec.alpha_range;
            let draws: Vec<(f64, f64)> = (0..n_draws)
                .map(|k| {
                    let mut rng = stream_rng(seed, k as u64);
                    let alpha = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    let u: f64 = rng.random();
                    (alpha, u)
                })
                .collect();
            let fits = map_indexed(controls.execution, n_draws, |k| -> Result<FitResult> {
                let (alpha, u) = draws[k];
                let lmax = lambda_max_estimate(kind, data, alpha, controls)?.max(1e-8);
                let lambda = lmax * spec.lambda_ratio.powf(u);
                fit_point(kind, data, lambda, alpha, spec, controls, &warm)
            });
            for fit in fits {
                let fit = fit?;
                let row = row_for(&fit, kind, data);
                keep_best(&mut best, &row, &fit);
                table.push(row);
            }
        }
    }
    let Some((row, best_fit)) = best else {
        return Err(CountRegError::NoConvergedFits { attempted: table.len() });
    };
    Ok(TuningResult {
        best_lambda: row.lambda,
        best_alpha: row.alpha,
        best_fit,
        ebic_table: table,
        lambda_max,
    })
}
