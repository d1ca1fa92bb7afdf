//! Sparse-group-lasso penalty and its dominating-hyperplane ridge surrogate.
//!
//! Coefficients are always held as a `(p+1) × d_e` matrix. Row 0 holds the
//! intercepts and is never penalized; every other cell belongs to exactly one
//! group. The surrogate at an expansion point `β⁽ᵗ⁾` is
//!
//! ```text
//! C⁽ᵗ⁾ + λ Σ_k ν_k β_k²,   ν_jd = α / (2|β_jd⁽ᵗ⁾|) + (1-α)√D_j / (2‖β_j⁽ᵗ⁾‖₂)
//! ```
//!
//! with `C⁽ᵗ⁾ = λJ(β⁽ᵗ⁾)/2`; it touches `λJ` at `β⁽ᵗ⁾` and lies above it
//! everywhere else.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CountRegError, Result};

/// Ridge weights above this mark a cell as saturated under the drop policy.
pub const NU_SATURATION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Disjoint groups covering every non-intercept cell of a `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    rows: usize,
    cols: usize,
    groups: Vec<Vec<Cell>>,
    group_of: Array2<usize>,
}

impl GroupStructure {
    pub fn new(rows: usize, cols: usize, groups: Vec<Vec<Cell>>) -> Result<Self> {
        let mut group_of = Array2::from_elem((rows, cols), usize::MAX);
        for (g, cells) in groups.iter().enumerate() {
            if cells.is_empty() {
                return Err(CountRegError::InvalidConfig(format!("group {g} is empty")));
            }
            for c in cells {
                if c.row == 0 {
                    return Err(CountRegError::InvalidConfig(format!(
                        "intercept cell ({}, {}) placed in group {g}",
                        c.row, c.col
                    )));
                }
                if c.row >= rows || c.col >= cols {
                    return Err(CountRegError::InvalidConfig(format!(
                        "cell ({}, {}) outside a {rows}x{cols} coefficient matrix",
                        c.row, c.col
                    )));
                }
                if group_of[[c.row, c.col]] != usize::MAX {
                    return Err(CountRegError::InvalidConfig(format!(
                        "cell ({}, {}) belongs to more than one group",
                        c.row, c.col
                    )));
                }
                group_of[[c.row, c.col]] = g;
            }
        }
        for r in 1..rows {
            for c in 0..cols {
                if group_of[[r, c]] == usize::MAX {
                    return Err(CountRegError::CellCoverage { row: r, col: c });
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            groups,
            group_of,
        })
    }

    /// One group per covariate spanning its whole row, the layout used by
    /// every multivariate count model.
    pub fn row_groups(p: usize, cols: usize) -> Self {
        let groups = (1..=p)
            .map(|r| (0..cols).map(|c| Cell::new(r, c)).collect())
            .collect();
        Self::new(p + 1, cols, groups).expect("row groups are a valid partition")
    }

    /// Every covariate in its own singleton group (a plain lasso layout).
    pub fn singletons(p: usize) -> Self {
        let groups = (1..=p).map(|r| vec![Cell::new(r, 0)]).collect();
        Self::new(p + 1, 1, groups).expect("singletons are a valid partition")
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn groups(&self) -> &[Vec<Cell>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_size(&self, g: usize) -> usize {
        self.groups[g].len()
    }

    /// Total number of penalized cells, `K = Σ_j D_j`.
    pub fn penalized_cells(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Group index of a penalized cell, `None` for intercepts.
    pub fn group_of(&self, cell: Cell) -> Option<usize> {
        match self.group_of[[cell.row, cell.col]] {
            usize::MAX => None,
            g => Some(g),
        }
    }

    fn check_shape(&self, beta: &ArrayView2<f64>) -> Result<()> {
        let (r, c) = beta.dim();
        if r != self.rows || c != self.cols {
            let row = if r < self.rows { r } else { self.rows.min(r) };
            return Err(CountRegError::CellCoverage {
                row,
                col: c.min(self.cols),
            });
        }
        Ok(())
    }

    fn group_norm(&self, beta: &ArrayView2<f64>, g: usize) -> f64 {
        self.groups[g]
            .iter()
            .map(|c| beta[[c.row, c.col]].powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum EpsilonPolicy {
    /// Excise cells and groups whose magnitude falls below `threshold`.
    Drop { threshold: f64 },
    /// Replace `|β|` by `√(β² + ε²)` and `‖β_j‖` by `√(‖β_j‖² + ε²)`.
    Perturb { epsilon: f64 },
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        EpsilonPolicy::Drop { threshold: 1e-8 }
    }
}

impl EpsilonPolicy {
    pub fn perturb_default() -> Self {
        EpsilonPolicy::Perturb { epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub structure: GroupStructure,
    pub epsilon_policy: EpsilonPolicy,
}

impl PenaltyConfig {
    pub fn new(
        lambda: f64,
        alpha: f64,
        structure: GroupStructure,
        epsilon_policy: EpsilonPolicy,
    ) -> Result<Self> {
        let cfg = Self {
            lambda,
            alpha,
            structure,
            epsilon_policy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CountRegError::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CountRegError::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        match self.epsilon_policy {
            EpsilonPolicy::Drop { threshold } if !(threshold > 0.0) => Err(
                CountRegError::InvalidConfig("drop threshold must be positive".into()),
            ),
            EpsilonPolicy::Perturb { epsilon } if !(epsilon > 0.0) => Err(
                CountRegError::InvalidConfig("perturbation epsilon must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }
}

/// Per-cell ridge weights `ν`, zero on intercepts.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeWeights {
    /// Same shape as the coefficient matrix; `+∞` on saturated cells.
    pub nu: Array2<f64>,
    pub saturated_groups: Vec<bool>,
    pub saturated_cells: Vec<Cell>,
}

impl RidgeWeights {
    pub fn is_saturated(&self, cell: Cell) -> bool {
        self.nu[[cell.row, cell.col]].is_infinite()
    }
}

/// `αλ Σ|β_jd| + (1-α)λ Σ_j √D_j ‖β_j‖₂` over penalized cells.
pub fn eval_sgl_penalty(beta: ArrayView2<f64>, config: &PenaltyConfig) -> Result<f64> {
    let s = &config.structure;
    s.check_shape(&beta)?;
    if config.lambda == 0.0 {
        return Ok(0.0);
    }
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (g, cells) in s.groups().iter().enumerate() {
        l1 += cells.iter().map(|c| beta[[c.row, c.col]].abs()).sum::<f64>();
        l2 += (cells.len() as f64).sqrt() * s.group_norm(&beta, g);
    }
    Ok(config.lambda * (config.alpha * l1 + (1.0 - config.alpha) * l2))
}

/// The penalty with the perturbed roots used by [`EpsilonPolicy::Perturb`].
pub fn eval_perturbed_penalty(beta: ArrayView2<f64>, config: &PenaltyConfig, epsilon: f64) -> Result<f64> {
    let s = &config.structure;
    s.check_shape(&beta)?;
    let e2 = epsilon * epsilon;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (g, cells) in s.groups().iter().enumerate() {
        l1 += cells
            .iter()
            .map(|c| (beta[[c.row, c.col]].powi(2) + e2).sqrt())
            .sum::<f64>();
        l2 += (cells.len() as f64).sqrt() * (s.group_norm(&beta, g).powi(2) + e2).sqrt();
    }
    Ok(config.lambda * (config.alpha * l1 + (1.0 - config.alpha) * l2))
}

/// Ridge weights at the expansion point `beta_t` under the configured policy.
pub fn compute_ridge_weights(beta_t: ArrayView2<f64>, config: &PenaltyConfig) -> Result<RidgeWeights> {
    let s = &config.structure;
    s.check_shape(&beta_t)?;
    let alpha = config.alpha;
    let mut nu = Array2::zeros(beta_t.dim());
    let mut saturated_groups = vec![false; s.len()];
    let mut saturated_cells = Vec::new();

    for (g, cells) in s.groups().iter().enumerate() {
        let dj = (cells.len() as f64).sqrt();
        let norm = s.group_norm(&beta_t, g);
        match config.epsilon_policy {
            EpsilonPolicy::Perturb { epsilon } => {
                let e2 = epsilon * epsilon;
                let group_part = (1.0 - alpha) * dj / (2.0 * (norm * norm + e2).sqrt());
                for c in cells {
                    let b = beta_t[[c.row, c.col]];
                    nu[[c.row, c.col]] = alpha / (2.0 * (b * b + e2).sqrt()) + group_part;
                }
            }
            EpsilonPolicy::Drop { threshold } => {
                let group_part = if alpha < 1.0 {
                    (1.0 - alpha) * dj / (2.0 * norm)
                } else {
                    0.0
                };
                let mut all_saturated = true;
                for c in cells {
                    let b = beta_t[[c.row, c.col]];
                    let weight = if alpha > 0.0 {
                        alpha / (2.0 * b.abs()) + group_part
                    } else {
                        group_part
                    };
                    let cell_drop = alpha > 0.0 && (b.abs() < threshold || weight > NU_SATURATION);
                    if cell_drop {
                        nu[[c.row, c.col]] = f64::INFINITY;
                    } else {
                        all_saturated = false;
                        nu[[c.row, c.col]] = weight;
                    }
                }
                if norm < threshold || all_saturated || group_part > NU_SATURATION {
                    saturated_groups[g] = true;
                    for c in cells {
                        nu[[c.row, c.col]] = f64::INFINITY;
                    }
                }
                for c in cells {
                    if nu[[c.row, c.col]].is_infinite() {
                        saturated_cells.push(*c);
                    }
                }
            }
        }
    }
    Ok(RidgeWeights {
        nu,
        saturated_groups,
        saturated_cells,
    })
}

/// Exact (`ε = 0`) weights; errors when the expansion point has a zero the
/// weight formula would divide by.
fn exact_weights(beta_t: &ArrayView2<f64>, config: &PenaltyConfig) -> Result<Array2<f64>> {
    let s = &config.structure;
    let alpha = config.alpha;
    let mut nu = Array2::zeros(beta_t.dim());
    for (g, cells) in s.groups().iter().enumerate() {
        let norm = s.group_norm(beta_t, g);
        if alpha < 1.0 && norm == 0.0 {
            let c = cells[0];
            return Err(CountRegError::ZeroExpansionCell { row: c.row, col: c.col });
        }
        let group_part = if alpha < 1.0 {
            (1.0 - alpha) * (cells.len() as f64).sqrt() / (2.0 * norm)
        } else {
            0.0
        };
        for c in cells {
            let b = beta_t[[c.row, c.col]];
            let cell_part = if alpha > 0.0 {
                if b == 0.0 {
                    return Err(CountRegError::ZeroExpansionCell { row: c.row, col: c.col });
                }
                alpha / (2.0 * b.abs())
            } else {
                0.0
            };
            nu[[c.row, c.col]] = cell_part + group_part;
        }
    }
    Ok(nu)
}

/// `C⁽ᵗ⁾ + λ Σ ν_k⁽ᵗ⁾ β_k²` with exact weights.
pub fn eval_surrogate(beta: ArrayView2<f64>, beta_t: ArrayView2<f64>, config: &PenaltyConfig) -> Result<f64> {
    let s = &config.structure;
    s.check_shape(&beta)?;
    s.check_shape(&beta_t)?;
    if config.lambda == 0.0 {
        return Ok(0.0);
    }
    let nu = exact_weights(&beta_t, config)?;
    let constant = eval_sgl_penalty(beta_t, config)? / 2.0;
    let mut quad = 0.0;
    for cells in s.groups() {
        for c in cells {
            quad += nu[[c.row, c.col]] * beta[[c.row, c.col]].powi(2);
        }
    }
    Ok(constant + config.lambda * quad)
}
