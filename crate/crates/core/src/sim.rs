//! Simulated Dirichlet-multinomial scenarios and selection scoring.
//!
//! Covariates are AR(1)-correlated normals, the true coefficient matrix has
//! a fixed block of relevant covariates each tied to a seeded subset of taxa,
//! and totals are Poisson. Every random quantity is drawn from a stream keyed
//! by purpose, replicate and row, so reports do not depend on thread count.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CountDataset, DesignMatrix};
use crate::engine::{FitControls, FitResult};
use crate::error::{CountRegError, Result};
use crate::models::{sample_counts, CoefficientMatrix, ModelKind};
use crate::par::map_indexed;
use crate::rng::{derive_seed, purpose, stream_rng};
use crate::tuning::{tune, SearchSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    pub taxa: usize,
    pub f: f64,
    pub delta_p: f64,
    pub delta_d: f64,
    pub rho: f64,
    pub total_mean: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 300,
            p: 25,
            taxa: 7,
            f: 0.8,
            delta_p: 0.1,
            delta_d: 0.25,
            rho: 0.4,
            total_mean: 5000.0,
            replicates: 20,
            seed: 0,
        }
    }
}

/// Rounds to the nearest integer, ties to even. Values within `1e-9` of a
/// half are treated as ties so that `0.1 · 25` rounds like `2.5`.
pub fn round_half_even(x: f64) -> usize {
    let fl = x.floor();
    let frac = x - fl;
    let r = if (frac - 0.5).abs() < 1e-9 {
        if fl % 2.0 == 0.0 {
            fl
        } else {
            fl + 1.0
        }
    } else {
        x.round()
    };
    r.max(0.0) as usize
}

impl ScenarioConfig {
    pub fn relevant_covariates(&self) -> usize {
        round_half_even(self.delta_p * self.p as f64)
    }

    pub fn relevant_taxa(&self) -> usize {
        round_half_even(self.delta_d * self.taxa as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CountRegError::InvalidConfig(m.to_string()));
        if self.n == 0 || self.taxa < 2 {
            return bad("scenario needs n >= 1 and at least 2 taxa");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if !(self.delta_p > 0.0 && self.delta_p <= 1.0) || !(self.delta_d > 0.0 && self.delta_d <= 1.0) {
            return bad("delta_p and delta_d must lie in (0, 1]");
        }
        if self.p > 0 && self.relevant_covariates() < 1 {
            return bad("delta_p * p rounds to zero relevant covariates");
        }
        if self.relevant_taxa() < 1 {
            return bad("delta_d * D rounds to zero relevant taxa");
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad("rho must lie in [0, 1)");
        }
        if !(self.total_mean > 0.0) || !self.f.is_finite() || self.f < 0.0 {
            return bad("total_mean must be positive and f non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthMask {
    /// `p × D`, 1 on relevant cells.
    pub nonzero: Array2<u8>,
    /// `p × D` in {−1, 0, 1}.
    pub signs: Array2<i8>,
    /// `(p+1) × D` with zero intercepts.
    pub beta_true: Array2<f64>,
}

/// AR(1) normal covariates with correlation `rho^|j−k|`; row `i` reads stream `i`.
pub fn gen_covariates(n: usize, p: usize, rho: f64, seed: u64) -> Array2<f64> {
    let seed = derive_seed(seed, &[purpose::COVARIATES]);
    let scale = (1.0 - rho * rho).sqrt();
    let mut x = Array2::zeros((n, p));
    for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        let mut prev = 0.0;
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            let v = if j == 0 { z } else { rho * prev + scale * z };
            row[j] = v;
            prev = v;
        }
    }
    x
}

/// The first `round(δ_p p)` covariates are relevant, each for a seeded
/// subset of `round(δ_D D)` taxa; magnitudes run evenly over `[0.6f, 0.9f]`
/// in row-major order of the relevant cells.
pub fn gen_truth(p: usize, taxa: usize, f: f64, delta_p: f64, delta_d: f64, seed: u64) -> TruthMask {
    if f == 0.0 {
        log::warn!("association strength f = 0 gives an all-zero truth");
    }
    let n_cov = round_half_even(delta_p * p as f64).min(p);
    let n_taxa = round_half_even(delta_d * taxa as f64).clamp(1, taxa);
    let mut rng = stream_rng(derive_seed(seed, &[purpose::TRUTH]), 0);
    let mut nonzero = Array2::zeros((p, taxa));
    let mut cells = Vec::new();
    for j in 0..n_cov {
        let mut chosen = sample(&mut rng, taxa, n_taxa).into_vec();
        chosen.sort_unstable();
        for d in chosen {
            nonzero[[j, d]] = 1u8;
            cells.push((j, d));
        }
    }
    let mut signs = Array2::zeros((p, taxa));
    let mut beta_true = Array2::zeros((p + 1, taxa));
    let m = cells.len();
    for (k, &(j, d)) in cells.iter().enumerate() {
        let mag = if m > 1 {
            0.6 * f + 0.3 * f * k as f64 / (m - 1) as f64
        } else {
            0.6 * f
        };
        let sign: i8 = if rng.random::<bool>() { 1 } else { -1 };
        signs[[j, d]] = sign;
        beta_true[[j + 1, d]] = sign as f64 * mag;
    }
    TruthMask {
        nonzero,
        signs,
        beta_true,
    }
}

/// One replicate: fixed truth for the scenario, fresh covariates and counts.
pub fn gen_dataset(config: &ScenarioConfig, replicate: usize) -> Result<(CountDataset, TruthMask)> {
    config.validate()?;
    let truth = gen_truth(config.p, config.taxa, config.f, config.delta_p, config.delta_d, config.seed);
    let rep = replicate as u64;
    let cov = gen_covariates(config.n, config.p, config.rho, derive_seed(config.seed, &[rep]));
    let x = DesignMatrix::from_covariates(&cov, (1..=config.p).map(|j| format!("x{j}")).collect())?;
    let totals_seed = derive_seed(config.seed, &[purpose::TOTALS, rep]);
    let poisson = Poisson::new(config.total_mean).map_err(|e| CountRegError::InvalidConfig(e.to_string()))?;
    let totals: Vec<u64> = (0..config.n)
        .map(|i| {
            let mut rng = stream_rng(totals_seed, i as u64);
            loop {
                let t = poisson.sample(&mut rng) as u64;
                if t > 0 {
                    break t;
                }
            }
        })
        .collect();
    let b = CoefficientMatrix::new(truth.beta_true.clone(), ModelKind::DirichletMultinomial, config.taxa)?;
    let counts_seed = derive_seed(config.seed, &[purpose::COUNTS, rep]);
    let y = sample_counts(ModelKind::DirichletMultinomial, &b, &x, &totals, counts_seed)?;
    Ok((CountDataset::new(x, y)?, truth))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    fn add(&mut self, truth: bool, active: bool) {
        match (truth, active) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub group_precision: Option<f64>,
    pub group_recall: Option<f64>,
    pub within_precision: Option<f64>,
    pub within_recall: Option<f64>,
    pub direction_accuracy: Option<f64>,
    pub within: Confusion,
    pub group: Confusion,
}

/// Scores estimated coefficients (`(p+1) × D`) against the truth.
pub fn score_coefficients(truth: &TruthMask, b_hat: &Array2<f64>, threshold: f64) -> Result<SelectionMetrics> {
    let (p, taxa) = truth.nonzero.dim();
    if b_hat.dim() != (p + 1, taxa) {
        return Err(CountRegError::DimensionMismatch(format!(
            "estimate is {:?}, truth needs {}x{taxa}",
            b_hat.dim(),
            p + 1
        )));
    }
    let mut within = Confusion::default();
    let mut group = Confusion::default();
    let mut same_sign = 0;
    for j in 0..p {
        let mut g_true = false;
        let mut g_active = false;
        for d in 0..taxa {
            let t = truth.nonzero[[j, d]] == 1;
            let v = b_hat[[j + 1, d]];
            let a = v.abs() >= threshold;
            within.add(t, a);
            if t && a && (v > 0.0) == (truth.signs[[j, d]] > 0) {
                same_sign += 1;
            }
            g_true |= t;
            g_active |= a;
        }
        group.add(g_true, g_active);
    }
    Ok(SelectionMetrics {
        group_precision: group.precision(),
        group_recall: group.recall(),
        within_precision: within.precision(),
        within_recall: within.recall(),
        direction_accuracy: ratio(same_sign, within.tp),
        within,
        group,
    })
}

pub fn score_selection(truth: &TruthMask, fit: &FitResult, threshold: f64) -> Result<SelectionMetrics> {
    score_coefficients(truth, &fit.b_hat.b, threshold)
}

/// One replicate's outcome, flattened for CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub status: String,
    pub error: Option<String>,
    pub best_lambda: Option<f64>,
    pub best_alpha: Option<f64>,
    pub kappa: Option<usize>,
    pub converged: Option<bool>,
    pub group_precision: Option<f64>,
    pub group_recall: Option<f64>,
    pub within_precision: Option<f64>,
    pub within_recall: Option<f64>,
    pub direction_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub count: usize,
}

impl MeanSd {
    /// Mean and sample SD of the defined values; the SD needs two of them.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        let count = v.len();
        if count == 0 {
            return Self { mean: None, sd: None, count };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let sd = (count > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt());
        Self { mean: Some(mean), sd, count }
    }
}

/// Scenario identifiers with the mean and SD of each metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub n: usize,
    pub p: usize,
    pub delta_p: f64,
    pub taxa: usize,
    pub delta_d: f64,
    pub f: f64,
    pub replicates: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub group_precision: MeanSd,
    pub group_recall: MeanSd,
    pub within_precision: MeanSd,
    pub within_recall: MeanSd,
    pub direction_accuracy: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub search: SearchSpec,
    pub rows: Vec<ReplicateRow>,
    pub summary: ScenarioSummary,
}

fn run_replicate(config: &ScenarioConfig, search: &SearchSpec, controls: &FitControls, replicate: usize) -> ReplicateRow {
    let outcome = gen_dataset(config, replicate).and_then(|(data, truth)| {
        let result = tune(ModelKind::DirichletMultinomial, &data, search, controls)?;
        let metrics = score_selection(&truth, &result.best_fit, controls.zero_report_threshold)?;
        Ok((result, metrics))
    });
    match outcome {
        Ok((result, m)) => ReplicateRow {
            replicate,
            status: "ok".into(),
            error: None,
            best_lambda: Some(result.best_lambda),
            best_alpha: Some(result.best_alpha),
            kappa: Some(result.best_fit.kappa),
            converged: Some(result.best_fit.converged),
            group_precision: m.group_precision,
            group_recall: m.group_recall,
            within_precision: m.within_precision,
            within_recall: m.within_recall,
            direction_accuracy: m.direction_accuracy,
        },
        Err(e) => {
            log::warn!("replicate {replicate} failed: {e}");
            ReplicateRow {
                replicate,
                status: "failed".into(),
                error: Some(e.to_string()),
                best_lambda: None,
                best_alpha: None,
                kappa: None,
                converged: None,
                group_precision: None,
                group_recall: None,
                within_precision: None,
                within_recall: None,
                direction_accuracy: None,
            }
        }
    }
}

/// Generates, tunes and scores every replicate of a scenario.
pub fn run_scenario(config: &ScenarioConfig, search: &SearchSpec, controls: &FitControls) -> Result<ScenarioReport> {
    config.validate()?;
    search.validate()?;
    controls.validate()?;
    let rows = map_indexed(controls.execution, config.replicates, |r| run_replicate(config, search, controls, r));
    let ok: Vec<&ReplicateRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let summary = ScenarioSummary {
        n: config.n,
        p: config.p,
        delta_p: config.delta_p,
        taxa: config.taxa,
        delta_d: config.delta_d,
        f: config.f,
        replicates: config.replicates,
        succeeded: ok.len(),
        failed: rows.len() - ok.len(),
        group_precision: MeanSd::of(ok.iter().map(|r| r.group_precision)),
        group_recall: MeanSd::of(ok.iter().map(|r| r.group_recall)),
        within_precision: MeanSd::of(ok.iter().map(|r| r.within_precision)),
        within_recall: MeanSd::of(ok.iter().map(|r| r.within_recall)),
        direction_accuracy: MeanSd::of(ok.iter().map(|r| r.direction_accuracy)),
    };
    Ok(ScenarioReport {
        config: config.clone(),
        search: search.clone(),
        rows,
        summary,
    })
}
