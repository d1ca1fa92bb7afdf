//! Penalized univariate GLMs by iteratively reweighted ridge regression.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::DesignMatrix;
use crate::engine::{relative_change, traced_penalty, DropEvent, DropTarget, FitControls, WarmStart};
use crate::error::{CountRegError, Result};
use crate::models::ETA_CLAMP;
use crate::penalty::{compute_ridge_weights, EpsilonPolicy, PenaltyConfig};
use crate::ridge::descend_column;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmFamily {
    PoissonLog,
    BinomialLogit,
}

impl GlmFamily {
    pub fn link(self, mu: f64) -> f64 {
        match self {
            GlmFamily::PoissonLog => mu.ln(),
            GlmFamily::BinomialLogit => (mu / (1.0 - mu)).ln(),
        }
    }

    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            GlmFamily::PoissonLog => eta.exp(),
            GlmFamily::BinomialLogit => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    pub fn variance(self, mu: f64) -> f64 {
        match self {
            GlmFamily::PoissonLog => mu,
            GlmFamily::BinomialLogit => mu * (1.0 - mu),
        }
    }

    /// `∂η/∂μ`.
    pub fn deta_dmu(self, mu: f64) -> f64 {
        match self {
            GlmFamily::PoissonLog => 1.0 / mu,
            GlmFamily::BinomialLogit => 1.0 / (mu * (1.0 - mu)),
        }
    }

    /// Log-likelihood of one response at linear predictor `eta`.
    fn obs_loglik(self, y: f64, eta: f64) -> f64 {
        match self {
            GlmFamily::PoissonLog => y * eta - eta.exp() - ln_gamma(y + 1.0),
            GlmFamily::BinomialLogit => y * eta - softplus(eta),
        }
    }

    fn check_response(self, y: &Array1<f64>) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            let ok = match self {
                GlmFamily::PoissonLog => v >= 0.0 && v.is_finite(),
                GlmFamily::BinomialLogit => (0.0..=1.0).contains(&v),
            };
            if !ok {
                return Err(CountRegError::InvalidDesign(format!("response {v} at row {i} is outside the family's support")));
            }
        }
        Ok(())
    }
}

fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkingQuantities {
    pub gamma: Array1<f64>,
    pub z: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFitResult {
    pub beta: Array1<f64>,
    pub objective_trace: Vec<f64>,
    /// Covariate indices (1-based design columns) with nonzero coefficients.
    pub active_set: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub drop_events: Vec<DropEvent>,
    pub clamp_events: usize,
}

fn linear_predictor(x: &DesignMatrix, beta: &Array1<f64>) -> (Array1<f64>, usize) {
    let mut clamped = 0;
    let eta = x.values().dot(beta).mapv(|v| {
        if v.abs() > ETA_CLAMP {
            clamped += 1;
            v.clamp(-ETA_CLAMP, ETA_CLAMP)
        } else {
            v
        }
    });
    (eta, clamped)
}

fn working_from_eta(family: GlmFamily, y: &Array1<f64>, eta: &Array1<f64>) -> WorkingQuantities {
    let mut gamma = Array1::zeros(eta.len());
    let mut z = Array1::zeros(eta.len());
    for i in 0..eta.len() {
        let mu = family.inverse_link(eta[i]);
        let g = family.deta_dmu(mu);
        gamma[i] = 1.0 / (family.variance(mu) * g * g);
        z[i] = eta[i] + (y[i] - mu) * g;
    }
    WorkingQuantities { gamma, z }
}

/// IRLS weights and working responses at `beta_t`.
pub fn glm_working(family: GlmFamily, x: &DesignMatrix, y: &Array1<f64>, beta_t: &Array1<f64>) -> Result<WorkingQuantities> {
    if beta_t.len() != x.p() + 1 || y.len() != x.n() {
        return Err(CountRegError::DimensionMismatch("glm working inputs disagree".into()));
    }
    if beta_t.iter().any(|v| !v.is_finite()) {
        return Err(CountRegError::InvalidConfig("non-finite coefficients".into()));
    }
    let (eta, clamped) = linear_predictor(x, beta_t);
    if clamped > 0 {
        log::debug!("clamped {clamped} linear predictors");
    }
    Ok(working_from_eta(family, y, &eta))
}

pub fn glm_loglik(family: GlmFamily, x: &DesignMatrix, y: &Array1<f64>, beta: &Array1<f64>) -> f64 {
    let (eta, _) = linear_predictor(x, beta);
    eta.iter().zip(y.iter()).map(|(&e, &v)| family.obs_loglik(v, e)).sum()
}

struct GlmState<'a> {
    family: GlmFamily,
    x: &'a DesignMatrix,
    y: &'a Array1<f64>,
    beta: Array1<f64>,
    dropped: Vec<bool>,
    clamp_events: usize,
}

impl GlmState<'_> {
    fn step(&mut self, penalty: &Array1<f64>) -> Result<()> {
        let rows: Vec<usize> = (0..self.beta.len()).filter(|&r| r == 0 || !self.dropped[r]).collect();
        let (eta, clamped) = linear_predictor(self.x, &self.beta);
        self.clamp_events += clamped;
        let wk = working_from_eta(self.family, self.y, &eta);
        let xa = self.x.values().select(Axis(1), &rows);
        let beta_t: Array1<f64> = rows.iter().map(|&r| self.beta[r]).collect();
        let pen: Array1<f64> = rows.iter().map(|&r| penalty[r]).collect();
        let family = self.family;
        let y = self.y;
        let loss = |eta: &Array1<f64>| -> f64 { -eta.iter().zip(y.iter()).map(|(&e, &v)| family.obs_loglik(v, e)).sum::<f64>() };
        let step = descend_column(xa.view(), wk.gamma.view(), wk.z.view(), pen.view(), beta_t.view(), loss)?;
        self.beta.fill(0.0);
        for (k, &r) in rows.iter().enumerate() {
            self.beta[r] = step.beta[k];
        }
        Ok(())
    }
}

/// Fits a GLM under the sparse-group-lasso penalty. The penalty structure
/// must be laid out on a `(p+1) × 1` coefficient matrix.
pub fn fit_glm_sgl(
    x: &DesignMatrix,
    y: &Array1<f64>,
    family: GlmFamily,
    config: &PenaltyConfig,
    controls: &FitControls,
) -> Result<GlmFitResult> {
    controls.validate()?;
    config.validate()?;
    family.check_response(y)?;
    let k = x.p() + 1;
    if y.len() != x.n() || config.structure.shape() != (k, 1) {
        return Err(CountRegError::DimensionMismatch(format!(
            "design {}x{k}, response {}, penalty structure {:?}",
            x.n(),
            y.len(),
            config.structure.shape()
        )));
    }
    let mut state = GlmState {
        family,
        x,
        y,
        beta: Array1::zeros(k),
        dropped: vec![false; k],
        clamp_events: 0,
    };
    if let WarmStart::UnpenalizedSweeps(sweeps) = controls.warm_start {
        let zero = Array1::zeros(k);
        for _ in 0..sweeps {
            if let Err(e) = state.step(&zero) {
                log::debug!("glm warm start fell back to zero: {e}");
                state.beta.fill(0.0);
                break;
            }
        }
    }

    let objective = |beta: &Array1<f64>| -> Result<f64> {
        let b2 = beta.view().insert_axis(Axis(1));
        Ok(-glm_loglik(family, x, y, beta) + traced_penalty(b2, config)?)
    };
    let mut trace = vec![objective(&state.beta)?];
    let mut drop_events = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=controls.max_iter {
        iterations = t;
        let mut penalty = Array1::zeros(k);
        if config.lambda > 0.0 {
            let b2: Array2<f64> = state.beta.clone().insert_axis(Axis(1));
            let w = compute_ridge_weights(b2.view(), config)?;
            if let EpsilonPolicy::Drop { .. } = config.epsilon_policy {
                for c in &w.saturated_cells {
                    if !state.dropped[c.row] {
                        state.dropped[c.row] = true;
                        drop_events.push(DropEvent {
                            iteration: t,
                            target: DropTarget::Cell { row: c.row, col: 0 },
                        });
                    }
                    state.beta[c.row] = 0.0;
                }
            }
            for r in 1..k {
                if !state.dropped[r] {
                    penalty[r] = 2.0 * config.lambda * w.nu[[r, 0]];
                }
            }
        }
        let before = state.beta.clone();
        state.step(&penalty)?;
        let f = objective(&state.beta)?;
        if !f.is_finite() {
            return Err(CountRegError::NonFiniteObjective { iteration: t });
        }
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(f);
        let moved = relative_change(before.iter(), state.beta.iter(), controls.zero_report_threshold);
        if (prev - f).abs() / (1.0 + f.abs()) < controls.tol && moved < controls.coef_tol {
            converged = true;
            break;
        }
    }
    let threshold = controls.zero_report_threshold;
    for r in 1..k {
        if state.beta[r].abs() < threshold {
            state.beta[r] = 0.0;
        }
    }
    Ok(GlmFitResult {
        active_set: (1..k).filter(|&r| state.beta[r] != 0.0).collect(),
        beta: state.beta,
        objective_trace: trace,
        converged,
        iterations,
        drop_events,
        clamp_events: state.clamp_events,
    })
}
