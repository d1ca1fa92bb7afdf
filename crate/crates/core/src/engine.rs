//! Penalized fitting of the count models by cycling weighted Poisson ridge
//! solves over coefficient columns.
//!
//! Each outer iteration rebuilds the ridge weights at the current
//! coefficients, excises saturated cells under the drop policy, and replaces
//! every column by a damped solution of its weighted ridge system. Columns
//! that only read the previous iterate are solved concurrently.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::CountDataset;
use crate::error::{CountRegError, Result};
use crate::models::{loglik, loglik_from_eta, score_from_eta, working_from_eta, CoefficientMatrix, ModelKind, Predictors};
use crate::par::{map_indexed, Execution};
use crate::penalty::{compute_ridge_weights, eval_perturbed_penalty, eval_sgl_penalty, Cell, EpsilonPolicy, PenaltyConfig, RidgeWeights};
use crate::ridge::descend_column;
use crate::sums::SumMethod;

/// Upper bound on intercept-only sweeps after a fit ends at the null model.
const POLISH_SWEEPS: usize = 5000;
const WARM_STABILIZER: f64 = 1.0;

/// Magnitude given to a cell when it re-enters the active set.
pub const REENTRY_MAGNITUDE: f64 = 1e-3;
/// Optimality violations smaller than this fraction of `λ` are tolerated.
const REENTRY_SLACK: f64 = 1e-4;
/// Rounds of re-entry after which a fit may converge with violators left out.
const MAX_REENTRY_ROUNDS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    Zero,
    UnpenalizedSweeps(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitControls {
    pub max_iter: usize,
    /// Relative objective change, `|Δf| / (1 + |f|)`.
    pub tol: f64,
    /// Largest relative change of any reportable coefficient still counted
    /// as converged; coefficients below `zero_report_threshold` are ignored.
    pub coef_tol: f64,
    pub warm_start: WarmStart,
    pub zero_report_threshold: f64,
    pub execution: Execution,
    pub sum_method: SumMethod,
}

impl Default for FitControls {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            coef_tol: 1e-3,
            warm_start: WarmStart::UnpenalizedSweeps(20),
            zero_report_threshold: 1e-6,
            execution: Execution::default(),
            sum_method: SumMethod::default(),
        }
    }
}

impl FitControls {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(CountRegError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) || !(self.coef_tol > 0.0) {
            return Err(CountRegError::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.zero_report_threshold > 0.0) {
            return Err(CountRegError::InvalidConfig("zero_report_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DropTarget {
    Group { group: usize },
    Cell { row: usize, col: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEvent {
    pub iteration: usize,
    pub target: DropTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub b_hat: CoefficientMatrix,
    /// Objective at the starting point followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub loglik_final: f64,
    pub active_groups: Vec<usize>,
    pub active_cells: Vec<Cell>,
    pub kappa: usize,
    pub converged: bool,
    pub iterations: usize,
    pub drop_events: Vec<DropEvent>,
    /// Dropped cells brought back because they violated the optimality
    /// conditions at an apparent convergence point.
    pub reentry_events: Vec<DropEvent>,
    pub clamp_events: usize,
    /// Set when the unpenalized warm start failed and the fit began at zero.
    pub warm_start_fallback: bool,
    pub lambda: f64,
    pub alpha: f64,
}

impl FitResult {
    pub fn is_null(&self) -> bool {
        self.kappa == 0
    }

    /// Iterations at which the active set changed: a structure was dropped
    /// or a cell re-entered.
    pub fn drop_iterations(&self) -> Vec<usize> {
        let mut its: Vec<usize> = self.drop_events.iter().chain(&self.reentry_events).map(|e| e.iteration).collect();
        its.sort_unstable();
        its.dedup();
        its
    }
}

/// Active groups, active cells and a sign matrix (`-1`, `0`, `1`).
pub fn extract_active(
    b_hat: &CoefficientMatrix,
    config: &PenaltyConfig,
    threshold: f64,
) -> (Vec<usize>, Vec<Cell>, Array2<i8>) {
    let b = &b_hat.b;
    let mut signs = Array2::zeros(b.dim());
    let mut cells = Vec::new();
    for r in 1..b.nrows() {
        for c in 0..b.ncols() {
            let v = b[[r, c]];
            if v.abs() >= threshold {
                cells.push(Cell::new(r, c));
                signs[[r, c]] = if v > 0.0 { 1 } else { -1 };
            }
        }
    }
    let groups = config
        .structure
        .groups()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.iter().any(|c| signs[[c.row, c.col]] != 0))
        .map(|(g, _)| g)
        .collect();
    (groups, cells, signs)
}

/// `−ℓ(B) + λ J(B)`.
pub fn objective(kind: ModelKind, b: &CoefficientMatrix, data: &CountDataset, config: &PenaltyConfig) -> Result<f64> {
    Ok(-loglik(kind, b, data)? + eval_sgl_penalty(b.b.view(), config)?)
}

/// Coefficients after the unpenalized warm start, and whether it fell back
/// to zero.
#[derive(Debug, Clone)]
pub struct WarmStartFit {
    pub b: Array2<f64>,
    pub fallback: bool,
}

/// Runs the configured number of unpenalized sweeps from zero. Any failure
/// (singular system, non-finite likelihood) returns the zero matrix instead.
pub fn warm_start(kind: ModelKind, data: &CountDataset, controls: &FitControls) -> WarmStartFit {
    let zero = Array2::zeros((data.p() + 1, kind.d_e(data.taxa())));
    let sweeps = match controls.warm_start {
        WarmStart::Zero => 0,
        WarmStart::UnpenalizedSweeps(k) => k,
    };
    if sweeps == 0 {
        return WarmStartFit { b: zero, fallback: false };
    }
    for stabilizer in [0.0, WARM_STABILIZER] {
        match unpenalized_sweeps(kind, data, controls, &zero, sweeps, stabilizer) {
            Ok(b) => return WarmStartFit { b, fallback: false },
            Err(e) => log::debug!("warm start with stabilizer {stabilizer} failed: {e}"),
        }
    }
    WarmStartFit { b: zero, fallback: true }
}

/// Up to `sweeps` λ = 0 sweeps from `start`; a positive `stabilizer` adds a
/// small ridge to the covariate rows so rank-deficient designs stay solvable.
fn unpenalized_sweeps(kind: ModelKind, data: &CountDataset, controls: &FitControls, start: &Array2<f64>, sweeps: usize, stabilizer: f64) -> Result<Array2<f64>> {
    let mut state = State::new(kind, data, None, start.clone(), controls);
    state.stabilizer = stabilizer;
    let mut prev = f64::NAN;
    for _ in 0..sweeps {
        state.sweep(None)?;
        let l = state.loglik()?;
        if (l - prev).abs() / (1.0 + l.abs()) < controls.tol * 1e-2 {
            break;
        }
        prev = l;
    }
    Ok(state.b)
}

/// Fits `kind` under the penalty in `config`.
pub fn fit_count_sgl(kind: ModelKind, data: &CountDataset, config: &PenaltyConfig, controls: &FitControls) -> Result<FitResult> {
    fit_count_sgl_from(kind, data, config, controls, None)
}

/// As [`fit_count_sgl`], starting from `init` instead of the warm start.
/// Under the drop policy, cells that are exactly zero in `init` start out
/// dropped and return only through the optimality check.
pub fn fit_count_sgl_from(
    kind: ModelKind,
    data: &CountDataset,
    config: &PenaltyConfig,
    controls: &FitControls,
    init: Option<&Array2<f64>>,
) -> Result<FitResult> {
    controls.validate()?;
    config.validate()?;
    let d_e = kind.d_e(data.taxa());
    if data.taxa() < kind.min_taxa() {
        return Err(CountRegError::DimensionMismatch(format!("{kind} needs at least {} taxa", kind.min_taxa())));
    }
    if config.structure.shape() != (data.p() + 1, d_e) {
        return Err(CountRegError::DimensionMismatch(format!(
            "penalty structure {:?} does not match coefficients {}x{d_e}",
            config.structure.shape(),
            data.p() + 1
        )));
    }
    let (start, fallback) = match init {
        Some(b) => {
            if b.dim() != (data.p() + 1, d_e) || b.iter().any(|v| !v.is_finite()) {
                return Err(CountRegError::DimensionMismatch("initial coefficients have the wrong shape".into()));
            }
            (b.clone(), false)
        }
        None => {
            let w = warm_start(kind, data, controls);
            (w.b, w.fallback)
        }
    };

    let mut state = State::new(kind, data, Some(config), start, controls);
    let mut trace = vec![state.objective()?];
    let mut converged = false;
    let mut iterations = 0;
    let mut rounds = 0;
    for t in 1..=controls.max_iter {
        iterations = t;
        let before = state.b.clone();
        state.sweep(Some(t))?;
        let f = state.objective()?;
        if !f.is_finite() {
            return Err(CountRegError::NonFiniteObjective { iteration: t });
        }
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(f);
        let rel = (prev - f).abs() / (1.0 + f.abs());
        let moved = relative_change(before.iter(), state.b.iter(), controls.zero_report_threshold);
        if rel < controls.tol && moved < controls.coef_tol {
            if rounds < MAX_REENTRY_ROUNDS {
                let violators = state.optimality_violators()?;
                if !violators.is_empty() {
                    rounds += 1;
                    state.reenter(&violators, t + 1);
                    continue;
                }
            }
            converged = true;
            break;
        }
    }
    state.finish(iterations, trace, converged, fallback)
}

/// Largest `|new − old| / |new|` over entries with `|new| ≥ floor`.
pub(crate) fn relative_change<'a>(old: impl Iterator<Item = &'a f64>, new: impl Iterator<Item = &'a f64>, floor: f64) -> f64 {
    old.zip(new)
        .filter(|(_, b)| b.abs() >= floor)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / b.abs()))
}

struct State<'a> {
    kind: ModelKind,
    data: &'a CountDataset,
    config: Option<&'a PenaltyConfig>,
    controls: &'a FitControls,
    b: Array2<f64>,
    dropped: Array2<bool>,
    dropped_groups: Vec<bool>,
    drop_events: Vec<DropEvent>,
    reentry_events: Vec<DropEvent>,
    clamp_events: usize,
    stabilizer: f64,
}

/// The penalty the iterations descend on: exact under the drop policy, with
/// perturbed roots under the perturb policy.
pub fn traced_penalty(beta: ndarray::ArrayView2<f64>, config: &PenaltyConfig) -> Result<f64> {
    match config.epsilon_policy {
        EpsilonPolicy::Perturb { epsilon } if config.lambda > 0.0 => eval_perturbed_penalty(beta, config, epsilon),
        _ => eval_sgl_penalty(beta, config),
    }
}

impl<'a> State<'a> {
    fn new(kind: ModelKind, data: &'a CountDataset, config: Option<&'a PenaltyConfig>, b: Array2<f64>, controls: &'a FitControls) -> Self {
        let dim = b.dim();
        let groups = config.map_or(0, |c| c.structure.len());
        Self {
            kind,
            data,
            config,
            controls,
            b,
            dropped: Array2::from_elem(dim, false),
            dropped_groups: vec![false; groups],
            drop_events: Vec::new(),
            reentry_events: Vec::new(),
            clamp_events: 0,
            stabilizer: 0.0,
        }
    }

    fn penalized(&self) -> Option<&'a PenaltyConfig> {
        self.config.filter(|c| c.lambda > 0.0)
    }

    fn predictors(&mut self) -> Array2<f64> {
        let pred = Predictors::new(&self.data.x, self.b.view());
        self.clamp_events += pred.clamped;
        pred.eta
    }

    fn loglik(&mut self) -> Result<f64> {
        let eta = self.predictors();
        loglik_from_eta(self.kind, &eta, self.data, self.controls.sum_method)
    }

    fn objective(&mut self) -> Result<f64> {
        let l = self.loglik()?;
        let pen = match self.config {
            Some(c) => traced_penalty(self.b.view(), c)?,
            None => 0.0,
        };
        Ok(-l + pen)
    }

    /// Ridge weights at the current point, zeroing and recording newly
    /// saturated structures under the drop policy.
    fn refresh_weights(&mut self, iteration: usize) -> Result<Option<RidgeWeights>> {
        let Some(config) = self.penalized() else {
            return Ok(None);
        };
        let weights = compute_ridge_weights(self.b.view(), config)?;
        if let EpsilonPolicy::Drop { .. } = config.epsilon_policy {
            for (g, &sat) in weights.saturated_groups.iter().enumerate() {
                if sat && !self.dropped_groups[g] {
                    self.dropped_groups[g] = true;
                    self.drop_events.push(DropEvent {
                        iteration,
                        target: DropTarget::Group { group: g },
                    });
                }
            }
            for c in &weights.saturated_cells {
                if !self.dropped[[c.row, c.col]] {
                    self.dropped[[c.row, c.col]] = true;
                    let in_dropped_group = config.structure.group_of(*c).is_some_and(|g| self.dropped_groups[g]);
                    if !in_dropped_group {
                        self.drop_events.push(DropEvent {
                            iteration,
                            target: DropTarget::Cell { row: c.row, col: c.col },
                        });
                    }
                }
                self.b[[c.row, c.col]] = 0.0;
            }
        }
        Ok(Some(weights))
    }

    /// Dropped cells, with the sign of their score, whose subgradient
    /// condition fails at the current point. A zero cell in an active group
    /// needs `|g| ≤ λα`; a zero group needs `‖S(g, λα)‖ ≤ λ(1−α)√|G|`.
    fn optimality_violators(&mut self) -> Result<Vec<(Cell, f64)>> {
        let Some(config) = self.penalized() else {
            return Ok(Vec::new());
        };
        if !matches!(config.epsilon_policy, EpsilonPolicy::Drop { .. }) || !self.dropped.iter().any(|&d| d) {
            return Ok(Vec::new());
        }
        let eta = self.predictors();
        let grad = score_from_eta(self.kind, &eta, self.data, self.controls.sum_method)?;
        let (lambda, alpha) = (config.lambda, config.alpha);
        let slack = REENTRY_SLACK * lambda;
        let mut out = Vec::new();
        for cells in config.structure.groups() {
            let zero: Vec<&Cell> = cells.iter().filter(|c| self.dropped[[c.row, c.col]]).collect();
            if zero.is_empty() {
                continue;
            }
            let excess = |c: &Cell| (grad[[c.row, c.col]].abs() - alpha * lambda).max(0.0);
            if zero.len() < cells.len() {
                if alpha > 0.0 {
                    out.extend(zero.iter().filter(|c| excess(c) > slack).map(|c| (**c, grad[[c.row, c.col]])));
                }
                continue;
            }
            let norm = cells.iter().map(|c| excess(c).powi(2)).sum::<f64>().sqrt();
            if norm > (1.0 - alpha) * lambda * (cells.len() as f64).sqrt() + slack {
                out.extend(cells.iter().filter(|c| excess(c) > 0.0).map(|c| (*c, grad[[c.row, c.col]])));
            }
        }
        Ok(out)
    }

    /// Restores `cells` to the active set at a small value along their score.
    fn reenter(&mut self, cells: &[(Cell, f64)], iteration: usize) {
        let config = self.config.expect("re-entry needs a penalty");
        for &(c, g) in cells {
            self.dropped[[c.row, c.col]] = false;
            if let Some(group) = config.structure.group_of(c) {
                self.dropped_groups[group] = false;
            }
            self.b[[c.row, c.col]] = REENTRY_MAGNITUDE.copysign(g);
            self.reentry_events.push(DropEvent {
                iteration,
                target: DropTarget::Cell { row: c.row, col: c.col },
            });
        }
    }

    /// New values for column `d`, computed from the current point.
    fn column_update(&self, d: usize, eta: &Array2<f64>, weights: Option<&RidgeWeights>) -> Result<Array1<f64>> {
        let wk = working_from_eta(self.kind, eta, self.data, d, self.controls.sum_method)?;
        let rows: Vec<usize> = (0..self.b.nrows()).filter(|&r| r == 0 || !self.dropped[[r, d]]).collect();
        let x = self.data.x.values().select(Axis(1), &rows);
        let beta_t: Array1<f64> = rows.iter().map(|&r| self.b[[r, d]]).collect();
        let lambda = self.penalized().map_or(0.0, |c| c.lambda);
        let penalty: Array1<f64> = rows
            .iter()
            .map(|&r| match weights {
                Some(w) if r > 0 => 2.0 * lambda * w.nu[[r, d]],
                None if r > 0 => self.stabilizer,
                _ => 0.0,
            })
            .collect();
        let eta_t = eta.column(d);
        let loss = |eta_new: &Array1<f64>| {
            let mut s = 0.0;
            for i in 0..eta_new.len() {
                let w = wk.w[i];
                if w > 0.0 {
                    s += w * ((eta_new[i] - eta_t[i]).exp() - (1.0 + wk.z[i] - eta_t[i]) * eta_new[i]);
                }
            }
            s
        };
        let step = descend_column(x.view(), wk.w.view(), wk.z.view(), penalty.view(), beta_t.view(), loss)?;
        let mut col = Array1::zeros(self.b.nrows());
        for (k, &r) in rows.iter().enumerate() {
            col[r] = step.beta[k];
        }
        Ok(col)
    }

    fn update_columns(&mut self, cols: &[usize], weights: Option<&RidgeWeights>) -> Result<()> {
        let eta = self.predictors();
        let exec = self.controls.execution;
        let updates = map_indexed(exec, cols.len(), |k| self.column_update(cols[k], &eta, weights));
        for (k, col) in updates.into_iter().enumerate() {
            self.b.column_mut(cols[k]).assign(&col?);
        }
        Ok(())
    }

    fn sweep(&mut self, iteration: Option<usize>) -> Result<()> {
        let it = iteration.unwrap_or(0);
        let d_e = self.b.ncols();
        if self.kind.columns_independent() {
            let weights = self.refresh_weights(it)?;
            let cols: Vec<usize> = (0..d_e).collect();
            self.update_columns(&cols, weights.as_ref())
        } else {
            let weights = self.refresh_weights(it)?;
            self.update_columns(&[0], weights.as_ref())?;
            let weights = self.refresh_weights(it)?;
            let cols: Vec<usize> = (1..d_e).collect();
            self.update_columns(&cols, weights.as_ref())
        }
    }

    /// Refits the intercepts alone once every penalized cell is zero, so a
    /// null fit reports the intercept-only maximum.
    fn polish_intercepts(&mut self) -> Result<()> {
        self.dropped.slice_mut(ndarray::s![1.., ..]).fill(true);
        let d_e = self.b.ncols();
        let mut prev = self.loglik()?;
        for _ in 0..POLISH_SWEEPS {
            if self.kind.columns_independent() {
                let cols: Vec<usize> = (0..d_e).collect();
                self.update_columns(&cols, None)?;
            } else {
                self.update_columns(&[0], None)?;
                let cols: Vec<usize> = (1..d_e).collect();
                self.update_columns(&cols, None)?;
            }
            let l = self.loglik()?;
            if (l - prev).abs() <= 1e-14 * (1.0 + l.abs()) {
                break;
            }
            prev = l;
        }
        Ok(())
    }

    fn finish(mut self, iterations: usize, trace: Vec<f64>, converged: bool, fallback: bool) -> Result<FitResult> {
        let config = self.config.expect("penalized fit has a config");
        let threshold = self.controls.zero_report_threshold;
        for r in 1..self.b.nrows() {
            for c in 0..self.b.ncols() {
                if self.b[[r, c]].abs() < threshold {
                    self.b[[r, c]] = 0.0;
                }
            }
        }
        let null = (1..self.b.nrows()).all(|r| self.b.row(r).iter().all(|&v| v == 0.0));
        if null && self.b.nrows() > 1 {
            self.polish_intercepts()?;
        }
        let loglik_final = self.loglik()?;
        let b_hat = CoefficientMatrix::new(self.b, self.kind, self.data.taxa())?;
        let (active_groups, active_cells, _) = extract_active(&b_hat, config, threshold);
        Ok(FitResult {
            kappa: active_cells.len(),
            b_hat,
            objective_trace: trace,
            loglik_final,
            active_groups,
            active_cells,
            converged,
            iterations,
            drop_events: self.drop_events,
            reentry_events: self.reentry_events,
            clamp_events: self.clamp_events,
            warm_start_fallback: fallback,
            lambda: config.lambda,
            alpha: config.alpha,
        })
    }
}

/// One unpenalized sweep from `b`, exposed for sequencing checks.
pub fn unpenalized_sweep(kind: ModelKind, data: &CountDataset, b: &CoefficientMatrix, controls: &FitControls) -> Result<CoefficientMatrix> {
    let mut state = State::new(kind, data, None, b.b.clone(), controls);
    state.sweep(None)?;
    CoefficientMatrix::new(state.b, kind, data.taxa())
}

/// One unpenalized sweep updating the columns in `order`, each from the
/// point left by the previous group; the negative multinomial's size column
/// is always updated first.
pub fn unpenalized_sweep_ordered(
    kind: ModelKind,
    data: &CountDataset,
    b: &CoefficientMatrix,
    controls: &FitControls,
    order: &[usize],
) -> Result<CoefficientMatrix> {
    let mut state = State::new(kind, data, None, b.b.clone(), controls);
    if kind == ModelKind::NegativeMultinomial {
        state.update_columns(&[0], None)?;
        let eta = state.predictors();
        let mut next = state.b.clone();
        for &d in order.iter().filter(|&&d| d != 0) {
            next.column_mut(d).assign(&state.column_update(d, &eta, None)?);
        }
        state.b = next;
    } else {
        let eta = state.predictors();
        let mut next = state.b.clone();
        for &d in order {
            next.column_mut(d).assign(&state.column_update(d, &eta, None)?);
        }
        state.b = next;
    }
    CoefficientMatrix::new(state.b, kind, data.taxa())
}

/// Convenience for the intercept-only fit used by null-model checks.
pub fn intercept_only_fit(kind: ModelKind, data: &CountDataset, controls: &FitControls) -> Result<FitResult> {
    let null = data.intercept_only();
    let structure = crate::penalty::GroupStructure::new(1, kind.d_e(data.taxa()), Vec::new())?;
    let config = PenaltyConfig::new(0.0, 0.5, structure, EpsilonPolicy::default())?;
    let mut c = *controls;
    c.warm_start = WarmStart::UnpenalizedSweeps(0);
    c.tol = c.tol.min(1e-12);
    c.max_iter = c.max_iter.max(2000);
    fit_count_sgl(kind, &null, &config, &c)
}
