//! Multivariate count models: parameter layouts, log-likelihoods, per-column
//! Poisson working weights and responses, and exact samplers.
//!
//! Every model links its parameters log-linearly, `exp(x_i B_d)`, so one
//! column update is a weighted Poisson regression. Working quantities are
//! returned in IRLS form: weight `w_id = Γ_id Ψ_id` and response
//! `z_id = η_id + (s_id − w_id)/w_id`, where `s_id = Ψ_id y*_id`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{CountDataset, CountMatrix, DesignMatrix};
use crate::error::{CountRegError, Result};
use crate::rng::stream_rng;
use crate::sums::{ln_factorial, ln_multinomial_coef, sum_log_rising, sum_ratio_rising, sum_recip_rising, SumMethod};

/// Linear predictors are clamped to this range before exponentiation.
pub const ETA_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "mn")]
    Multinomial,
    #[serde(rename = "dm")]
    DirichletMultinomial,
    #[serde(rename = "nm")]
    NegativeMultinomial,
    #[serde(rename = "gdm")]
    GeneralizedDirichletMultinomial,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Multinomial,
        ModelKind::DirichletMultinomial,
        ModelKind::NegativeMultinomial,
        ModelKind::GeneralizedDirichletMultinomial,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Multinomial => "mn",
            ModelKind::DirichletMultinomial => "dm",
            ModelKind::NegativeMultinomial => "nm",
            ModelKind::GeneralizedDirichletMultinomial => "gdm",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag().eq_ignore_ascii_case(tag))
    }

    /// Number of coefficient columns for `taxa` categories.
    pub fn d_e(self, taxa: usize) -> usize {
        match self {
            ModelKind::Multinomial => taxa.saturating_sub(1),
            ModelKind::DirichletMultinomial => taxa,
            ModelKind::NegativeMultinomial => taxa + 1,
            ModelKind::GeneralizedDirichletMultinomial => 2 * taxa.saturating_sub(1),
        }
    }

    pub fn min_taxa(self) -> usize {
        match self {
            ModelKind::NegativeMultinomial => 1,
            _ => 2,
        }
    }

    pub fn column_roles(self, taxa: usize) -> Vec<String> {
        match self {
            ModelKind::Multinomial => (1..taxa).map(|d| format!("beta_{d}")).collect(),
            ModelKind::DirichletMultinomial => (1..=taxa).map(|d| format!("beta_{d}")).collect(),
            ModelKind::NegativeMultinomial => std::iter::once("beta".to_string())
                .chain((1..=taxa).map(|d| format!("alpha_{d}")))
                .collect(),
            ModelKind::GeneralizedDirichletMultinomial => (1..taxa)
                .map(|d| format!("alpha_{d}"))
                .chain((1..taxa).map(|d| format!("beta_{d}")))
                .collect(),
        }
    }

    /// Whether every column's working quantities are computed from the same
    /// iterate. Negative multinomial updates its size column first and its
    /// probability columns from the refreshed size column.
    pub fn columns_independent(self) -> bool {
        self != ModelKind::NegativeMultinomial
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// `(p+1) × d_e` regression parameters for one model kind.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub b: Array2<f64>,
    pub kind: ModelKind,
    pub taxa: usize,
}

impl CoefficientMatrix {
    pub fn new(b: Array2<f64>, kind: ModelKind, taxa: usize) -> Result<Self> {
        if b.ncols() != kind.d_e(taxa) {
            return Err(CountRegError::DimensionMismatch(format!(
                "{kind} with {taxa} taxa needs {} columns, got {}",
                kind.d_e(taxa),
                b.ncols()
            )));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(CountRegError::DimensionMismatch("non-finite coefficient".into()));
        }
        Ok(Self { b, kind, taxa })
    }

    pub fn zeros(kind: ModelKind, p: usize, taxa: usize) -> Self {
        Self {
            b: Array2::zeros((p + 1, kind.d_e(taxa))),
            kind,
            taxa,
        }
    }

    pub fn d_e(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.b.nrows() - 1
    }

    pub fn column_roles(&self) -> Vec<String> {
        self.kind.column_roles(self.taxa)
    }
}

/// Weighted-Poisson working quantities for one coefficient column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnWorking {
    pub w: Array1<f64>,
    pub z: Array1<f64>,
}

/// Clamped linear predictors `η = X B` and how many entries were clamped.
#[derive(Debug, Clone)]
pub struct Predictors {
    pub eta: Array2<f64>,
    pub clamped: usize,
}

impl Predictors {
    pub fn new(x: &DesignMatrix, b: ArrayView2<f64>) -> Self {
        let mut eta = x.values().dot(&b);
        let mut clamped = 0;
        eta.mapv_inplace(|v| {
            if v.abs() > ETA_CLAMP {
                clamped += 1;
                v.clamp(-ETA_CLAMP, ETA_CLAMP)
            } else {
                v
            }
        });
        Self { eta, clamped }
    }
}

fn check_dims(kind: ModelKind, b: &CoefficientMatrix, data: &CountDataset) -> Result<()> {
    if b.kind != kind {
        return Err(CountRegError::DimensionMismatch(format!(
            "coefficients are for {}, requested {kind}",
            b.kind
        )));
    }
    if b.b.nrows() != data.p() + 1 || b.taxa != data.taxa() || b.d_e() != kind.d_e(data.taxa()) {
        return Err(CountRegError::DimensionMismatch(format!(
            "coefficients {}x{} for {} taxa vs data with p={} and D={}",
            b.b.nrows(),
            b.d_e(),
            b.taxa,
            data.p(),
            data.taxa()
        )));
    }
    if data.taxa() < kind.min_taxa() {
        return Err(CountRegError::DimensionMismatch(format!(
            "{kind} needs at least {} taxa",
            kind.min_taxa()
        )));
    }
    Ok(())
}

/// Exact log-likelihood, summing the rising products term by term.
pub fn loglik(kind: ModelKind, b: &CoefficientMatrix, data: &CountDataset) -> Result<f64> {
    loglik_with(kind, b, data, SumMethod::Loop)
}

pub fn loglik_with(kind: ModelKind, b: &CoefficientMatrix, data: &CountDataset, method: SumMethod) -> Result<f64> {
    check_dims(kind, b, data)?;
    let pred = Predictors::new(&data.x, b.b.view());
    loglik_from_eta(kind, &pred.eta, data, method)
}

/// Per-observation log-likelihood contribution given clamped predictors.
fn obs_loglik(kind: ModelKind, eta: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<u64>, total: u64, method: SumMethod) -> f64 {
    let taxa = y.len();
    match kind {
        ModelKind::Multinomial => {
            let mut lin = 0.0;
            let mut denom = 1.0;
            for d in 0..taxa - 1 {
                lin += y[d] as f64 * eta[d];
                denom += eta[d].exp();
            }
            lin - total as f64 * denom.ln() + ln_multinomial_coef(y.iter().copied())
        }
        ModelKind::DirichletMultinomial => {
            let mut acc = 0.0;
            let mut a_sum = 0.0;
            for d in 0..taxa {
                let a = eta[d].exp();
                a_sum += a;
                if y[d] > 0 {
                    acc += sum_log_rising(a, y[d], method);
                }
            }
            acc - sum_log_rising(a_sum, total, method) + ln_multinomial_coef(y.iter().copied())
        }
        ModelKind::NegativeMultinomial => {
            let size = eta[0].exp();
            let mut lin = 0.0;
            let mut denom = 1.0;
            let mut fact = 0.0;
            for d in 0..taxa {
                lin += y[d] as f64 * eta[d + 1];
                denom += eta[d + 1].exp();
                fact += ln_factorial(y[d]);
            }
            sum_log_rising(size, total, method) + lin - (size + total as f64) * denom.ln() - fact
        }
        ModelKind::GeneralizedDirichletMultinomial => {
            let half = taxa - 1;
            let mut acc = ln_multinomial_coef(y.iter().copied());
            let mut tail = total;
            for d in 0..half {
                let a = eta[d].exp();
                let bb = eta[half + d].exp();
                let next_tail = tail - y[d];
                acc += sum_log_rising(a, y[d], method) + sum_log_rising(bb, next_tail, method)
                    - sum_log_rising(a + bb, tail, method);
                tail = next_tail;
            }
            acc
        }
    }
}

pub(crate) fn loglik_from_eta(kind: ModelKind, eta: &Array2<f64>, data: &CountDataset, method: SumMethod) -> Result<f64> {
    let y = data.y.values();
    let totals = data.y.row_totals();
    let mut total = 0.0;
    for i in 0..data.n() {
        let v = obs_loglik(kind, eta.row(i), y.row(i), totals[i], method);
        if !v.is_finite() {
            return Err(CountRegError::NonFinite {
                context: "log-likelihood",
                observation: i,
                column: 0,
            });
        }
        total += v;
    }
    Ok(total)
}

/// Working weights and responses for column `d` at `b_current`.
///
/// For the negative multinomial's probability columns, `b_current` must
/// already hold the refreshed size column.
pub fn irprr_working(kind: ModelKind, b_current: &CoefficientMatrix, data: &CountDataset, d: usize) -> Result<ColumnWorking> {
    check_dims(kind, b_current, data)?;
    if d >= b_current.d_e() {
        return Err(CountRegError::DimensionMismatch(format!(
            "column {d} out of range for d_e = {}",
            b_current.d_e()
        )));
    }
    let pred = Predictors::new(&data.x, b_current.b.view());
    working_from_eta(kind, &pred.eta, data, d, SumMethod::Fast)
}

/// Weight `w` and target `s = Ψ y*` for one observation of column `d`.
fn obs_working(kind: ModelKind, eta: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<u64>, total: u64, d: usize, method: SumMethod) -> (f64, f64) {
    let taxa = y.len();
    match kind {
        ModelKind::Multinomial => {
            let denom = 1.0 + (0..taxa - 1).map(|k| eta[k].exp()).sum::<f64>();
            let w = total as f64 * eta[d].exp() / denom;
            (w, y[d] as f64)
        }
        ModelKind::DirichletMultinomial => {
            let a_sum: f64 = (0..taxa).map(|k| eta[k].exp()).sum();
            let a = eta[d].exp();
            let w = a * sum_recip_rising(a_sum, total, method);
            let s = sum_ratio_rising(a, y[d], method);
            (w, s)
        }
        ModelKind::NegativeMultinomial => {
            let denom = 1.0 + (0..taxa).map(|k| eta[k + 1].exp()).sum::<f64>();
            let size = eta[0].exp();
            if d == 0 {
                let w = size * denom.ln();
                (w, sum_ratio_rising(size, total, method))
            } else {
                let w = eta[d].exp() * (size + total as f64) / denom;
                (w, y[d - 1] as f64)
            }
        }
        ModelKind::GeneralizedDirichletMultinomial => {
            let half = taxa - 1;
            let k = d % half;
            let tail: u64 = (k..taxa).map(|m| y[m]).sum();
            let a = eta[k].exp();
            let bb = eta[half + k].exp();
            let psi = sum_recip_rising(a + bb, tail, method);
            if d < half {
                (a * psi, sum_ratio_rising(a, y[k], method))
            } else {
                (bb * psi, sum_ratio_rising(bb, tail - y[k], method))
            }
        }
    }
}

/// Gradient of the log-likelihood in every coefficient, `X'W(z − η)` column
/// by column.
pub(crate) fn score_from_eta(kind: ModelKind, eta: &Array2<f64>, data: &CountDataset, method: SumMethod) -> Result<Array2<f64>> {
    let mut grad = Array2::<f64>::zeros((data.p() + 1, eta.ncols()));
    for d in 0..eta.ncols() {
        let wk = working_from_eta(kind, eta, data, d, method)?;
        let resid = ndarray::Zip::from(&wk.w).and(&wk.z).and(eta.column(d)).map_collect(|&w, &z, &e| w * (z - e));
        grad.column_mut(d).assign(&data.x.values().t().dot(&resid));
    }
    Ok(grad)
}

pub(crate) fn working_from_eta(kind: ModelKind, eta: &Array2<f64>, data: &CountDataset, d: usize, method: SumMethod) -> Result<ColumnWorking> {
    let n = data.n();
    let y = data.y.values();
    let totals = data.y.row_totals();
    let mut w = Array1::zeros(n);
    let mut z = Array1::zeros(n);
    for i in 0..n {
        let (wi, si) = obs_working(kind, eta.row(i), y.row(i), totals[i], d, method);
        let contributes = wi != 0.0 || si != 0.0;
        if !wi.is_finite() || wi < 0.0 || (contributes && wi <= 0.0) || !si.is_finite() {
            return Err(CountRegError::BadWorkingWeight {
                observation: i,
                column: d,
                weight: wi,
            });
        }
        let e = eta[[i, d]];
        w[i] = wi;
        z[i] = if wi > 0.0 { e + (si - wi) / wi } else { e };
    }
    Ok(ColumnWorking { w, z })
}

/// Draws `log G` for `G ~ Gamma(shape, 1)` without underflow at small shapes.
fn ln_gamma_draw<R: Rng>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / shape
    }
}

/// Multinomial draw by sequential binomial conditioning on normalized weights.
fn multinomial_draw<R: Rng>(rng: &mut R, probs: &[f64], trials: u64) -> Vec<u64> {
    let k = probs.len();
    let mut suffix = vec![0.0; k + 1];
    for d in (0..k).rev() {
        suffix[d] = suffix[d + 1] + probs[d];
    }
    let mut left = trials;
    let mut out = vec![0u64; k];
    for d in 0..k {
        if left == 0 {
            break;
        }
        if d == k - 1 {
            out[d] = left;
            break;
        }
        let p = if suffix[d] > 0.0 { (probs[d] / suffix[d]).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(left, p).expect("valid binomial").sample(rng);
        out[d] = draw;
        left -= draw;
    }
    out
}

fn normalize_log_weights(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logw.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Draws counts with row totals `totals`. Row `i` uses stream `i` of `seed`.
pub fn sample_counts(kind: ModelKind, b: &CoefficientMatrix, x: &DesignMatrix, totals: &[u64], seed: u64) -> Result<CountMatrix> {
    if !matches!(kind, ModelKind::DirichletMultinomial | ModelKind::Multinomial) {
        return Err(CountRegError::UnsupportedKind("sampling"));
    }
    if totals.len() != x.n() || b.b.nrows() != x.p() + 1 {
        return Err(CountRegError::DimensionMismatch("sampling inputs disagree".into()));
    }
    if totals.iter().any(|&t| t == 0) {
        return Err(CountRegError::InvalidConfig("row totals must be at least 1".into()));
    }
    let taxa = b.taxa;
    let pred = Predictors::new(x, b.b.view());
    let mut values = Array2::zeros((x.n(), taxa));
    for (i, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        let eta = pred.eta.row(i);
        let logw: Vec<f64> = match kind {
            ModelKind::DirichletMultinomial => (0..taxa).map(|d| ln_gamma_draw(&mut rng, eta[d].exp())).collect(),
            _ => (0..taxa).map(|d| if d + 1 < taxa { eta[d] } else { 0.0 }).collect(),
        };
        let probs = normalize_log_weights(&logw);
        for (d, c) in multinomial_draw(&mut rng, &probs, totals[i]).into_iter().enumerate() {
            row[d] = c;
        }
    }
    let names = (1..=taxa).map(|d| format!("taxon_{d}")).collect();
    CountMatrix::new(values, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_row(y: Vec<u64>, p: usize) -> CountDataset {
        let taxa = y.len();
        let x = DesignMatrix::from_covariates(&Array2::zeros((1, p)), (0..p).map(|j| format!("x{j}")).collect()).unwrap();
        let y = CountMatrix::new(Array2::from_shape_vec((1, taxa), y).unwrap(), (0..taxa).map(|d| format!("t{d}")).collect()).unwrap();
        CountDataset::new(x, y).unwrap()
    }

    #[test]
    fn layout() {
        assert_eq!(ModelKind::Multinomial.d_e(5), 4);
        assert_eq!(ModelKind::DirichletMultinomial.d_e(5), 5);
        assert_eq!(ModelKind::NegativeMultinomial.d_e(5), 6);
        assert_eq!(ModelKind::GeneralizedDirichletMultinomial.d_e(5), 8);
        assert_eq!(ModelKind::NegativeMultinomial.column_roles(2), vec!["beta", "alpha_1", "alpha_2"]);
        assert_eq!(
            ModelKind::GeneralizedDirichletMultinomial.column_roles(3),
            vec!["alpha_1", "alpha_2", "beta_1", "beta_2"]
        );
        assert_eq!(ModelKind::from_tag("GDM"), Some(ModelKind::GeneralizedDirichletMultinomial));
    }

    #[test]
    fn uniform_dm_and_symmetric_mn() {
        let ds = one_row(vec![1, 1], 0);
        let b = CoefficientMatrix::zeros(ModelKind::DirichletMultinomial, 0, 2);
        let l = loglik(ModelKind::DirichletMultinomial, &b, &ds).unwrap();
        assert!((l - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        let b = CoefficientMatrix::zeros(ModelKind::Multinomial, 0, 2);
        let l = loglik(ModelKind::Multinomial, &b, &ds).unwrap();
        assert!((l - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dm_working_at_zero() {
        let ds = one_row(vec![1, 1], 0);
        let b = CoefficientMatrix::zeros(ModelKind::DirichletMultinomial, 0, 2);
        let wk = irprr_working(ModelKind::DirichletMultinomial, &b, &ds, 0).unwrap();
        assert!((wk.w[0] - 5.0 / 6.0).abs() < 1e-15);
        assert!((wk.z[0] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn mn_working_at_zero_includes_reference_category() {
        let ds = one_row(vec![1, 1, 1], 0);
        let b = CoefficientMatrix::zeros(ModelKind::Multinomial, 0, 3);
        let wk = irprr_working(ModelKind::Multinomial, &b, &ds, 1).unwrap();
        assert!((wk.w[0] - 1.0).abs() < 1e-15);
        assert!(wk.z[0].abs() < 1e-15);
    }

    #[test]
    fn pmfs_sum_to_one() {
        // enumerate every composition of a small total
        fn compositions(total: u64, parts: usize) -> Vec<Vec<u64>> {
            if parts == 1 {
                return vec![vec![total]];
            }
            (0..=total)
                .flat_map(|k| {
                    compositions(total - k, parts - 1).into_iter().map(move |mut rest| {
                        rest.insert(0, k);
                        rest
                    })
                })
                .collect()
        }
        for kind in [ModelKind::Multinomial, ModelKind::DirichletMultinomial, ModelKind::GeneralizedDirichletMultinomial] {
            let taxa = 3;
            let b = CoefficientMatrix::new(
                Array2::from_shape_fn((1, kind.d_e(taxa)), |(_, c)| 0.3 * c as f64 - 0.4),
                kind,
                taxa,
            )
            .unwrap();
            let mass: f64 = compositions(4, taxa)
                .into_iter()
                .filter(|y| y.iter().sum::<u64>() > 0)
                .map(|y| loglik(kind, &b, &one_row(y, 0)).unwrap().exp())
                .sum();
            assert!((mass - 1.0).abs() < 1e-12, "{kind}: {mass}");
        }
    }

    #[test]
    fn gdm_zero_tail_gives_zero_weight() {
        let ds = one_row(vec![3, 0, 0], 0);
        let b = CoefficientMatrix::zeros(ModelKind::GeneralizedDirichletMultinomial, 0, 3);
        let wk = irprr_working(ModelKind::GeneralizedDirichletMultinomial, &b, &ds, 1).unwrap();
        assert_eq!(wk.w[0], 0.0);
    }

    #[test]
    fn single_trial_rows_have_one_count() {
        let x = DesignMatrix::from_covariates(&array![[0.5], [-1.0], [2.0]], vec!["x".into()]).unwrap();
        let b = CoefficientMatrix::new(array![[0.1, -0.2, 0.0], [0.4, 0.0, -0.3]], ModelKind::DirichletMultinomial, 3).unwrap();
        let y = sample_counts(ModelKind::DirichletMultinomial, &b, &x, &[1, 1, 1], 11).unwrap();
        for row in y.values().rows() {
            assert_eq!(row.sum(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 1).count(), 1);
        }
        let again = sample_counts(ModelKind::DirichletMultinomial, &b, &x, &[1, 1, 1], 11).unwrap();
        assert_eq!(y, again);
        let nm = CoefficientMatrix::zeros(ModelKind::NegativeMultinomial, 1, 2);
        assert!(matches!(
            sample_counts(ModelKind::NegativeMultinomial, &nm, &x, &[1, 1, 1], 1),
            Err(CountRegError::UnsupportedKind(_))
        ));
    }

    #[test]
    fn tiny_dirichlet_shapes_do_not_underflow() {
        let x = DesignMatrix::from_covariates(&Array2::zeros((50, 0)), vec![]).unwrap();
        let b = CoefficientMatrix::new(array![[-6.0, -6.0, -6.0]], ModelKind::DirichletMultinomial, 3).unwrap();
        let y = sample_counts(ModelKind::DirichletMultinomial, &b, &x, &[100; 50], 3).unwrap();
        assert!(y.row_totals().iter().all(|&t| t == 100));
    }
}
