//! Weighted ridge normal equations, `(X'ΓX + diag(P)) β = X'Γz`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{CountRegError, Result};

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as a failed factorization.
const RELATIVE_PIVOT_FLOOR: f64 = 1e-13;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: &Array2<f64>) -> Result<Self> {
        let k = a.nrows();
        debug_assert_eq!(k, a.ncols());
        let scale = a.diag().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut l = Array2::<f64>::zeros((k, k));
        for j in 0..k {
            let mut d = a[[j, j]];
            for m in 0..j {
                d -= l[[j, m]] * l[[j, m]];
            }
            if !(d > RELATIVE_PIVOT_FLOOR * scale) {
                return Err(CountRegError::Factorization { index: j, pivot: d });
            }
            let ljj = d.sqrt();
            l[[j, j]] = ljj;
            for i in (j + 1)..k {
                let mut s = a[[i, j]];
                for m in 0..j {
                    s -= l[[i, m]] * l[[j, m]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let k = self.l.nrows();
        let mut y = b.to_owned();
        for i in 0..k {
            let mut s = y[i];
            for m in 0..i {
                s -= self.l[[i, m]] * y[m];
            }
            y[i] = s / self.l[[i, i]];
        }
        for i in (0..k).rev() {
            let mut s = y[i];
            for m in (i + 1)..k {
                s -= self.l[[m, i]] * y[m];
            }
            y[i] = s / self.l[[i, i]];
        }
        y
    }
}

/// `X'ΓX` and `X'Γz` for a diagonal weight vector.
pub fn weighted_normal_equations(
    x: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    z: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let xw = &x * &gamma.insert_axis(Axis(1));
    let gram = xw.t().dot(&x);
    let rhs = xw.t().dot(&z);
    (gram, rhs)
}

/// Solves the weighted ridge system by Cholesky factorization.
pub fn solve_weighted_ridge(
    x: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    z: ArrayView1<f64>,
    penalty_diag: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if gamma.len() != x.nrows() || z.len() != x.nrows() || penalty_diag.len() != x.ncols() {
        return Err(CountRegError::DimensionMismatch(format!(
            "ridge system: X is {}x{}, gamma {}, z {}, penalty {}",
            x.nrows(),
            x.ncols(),
            gamma.len(),
            z.len(),
            penalty_diag.len()
        )));
    }
    let (mut gram, rhs) = weighted_normal_equations(x, gamma, z);
    for (j, p) in penalty_diag.iter().enumerate() {
        gram[[j, j]] += p;
    }
    Ok(Cholesky::factor(&gram)?.solve(rhs.view()))
}

/// Largest number of step halvings tried before a column update is skipped.
const MAX_HALVINGS: usize = 40;

/// Outcome of one damped Newton step on a column loss.
#[derive(Debug, Clone)]
pub struct ColumnStep {
    pub beta: Array1<f64>,
    pub halvings: usize,
    pub accepted: bool,
}

/// Minimizes `loss(Xβ) + ½ Σ P_k β_k²` locally from `beta_t`.
///
/// Takes the weighted ridge solution as a Newton step and halves it until
/// the penalized loss does not increase, so the returned point never scores
/// worse than `beta_t`.
pub fn descend_column<L>(
    x: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    z: ArrayView1<f64>,
    penalty_diag: ArrayView1<f64>,
    beta_t: ArrayView1<f64>,
    loss: L,
) -> Result<ColumnStep>
where
    L: Fn(&Array1<f64>) -> f64,
{
    let target = solve_weighted_ridge(x, gamma, z, penalty_diag)?;
    let score = |beta: &Array1<f64>| {
        let ridge: f64 = beta.iter().zip(penalty_diag.iter()).map(|(b, p)| 0.5 * p * b * b).sum();
        loss(&x.dot(beta)) + ridge
    };
    let start = beta_t.to_owned();
    let base = score(&start);
    let direction = &target - &start;
    let mut step = 1.0;
    for halvings in 0..=MAX_HALVINGS {
        let candidate = &start + &(&direction * step);
        let value = score(&candidate);
        if value.is_finite() && (value <= base || !base.is_finite()) {
            return Ok(ColumnStep {
                beta: candidate,
                halvings,
                accepted: true,
            });
        }
        step *= 0.5;
    }
    Ok(ColumnStep {
        beta: start,
        halvings: MAX_HALVINGS,
        accepted: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_system() {
        // X'X = diag(2, 2), X'z = (4, 2)
        let x = array![[1.0, 1.0], [1.0, -1.0]];
        let z = array![3.0, 1.0];
        let beta = solve_weighted_ridge(x.view(), array![1.0, 1.0].view(), z.view(), array![0.0, 2.0].view()).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-14);
        assert!((beta[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn least_squares_residual_is_orthogonal() {
        let x = array![[1.0, 0.3, -1.2], [1.0, 1.1, 0.4], [1.0, -0.7, 2.0], [1.0, 2.2, 0.1], [1.0, 0.0, -0.5]];
        let z = array![1.0, -2.0, 0.5, 3.0, 0.2];
        let ones = Array1::ones(5);
        let beta = solve_weighted_ridge(x.view(), ones.view(), z.view(), Array1::zeros(3).view()).unwrap();
        let resid = &z - &x.dot(&beta);
        let score = x.t().dot(&resid);
        assert!(score.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10);
    }

    #[test]
    fn singular_system_reports_pivot() {
        let x = array![[1.0, 2.0], [1.0, 2.0]];
        let err = solve_weighted_ridge(x.view(), array![1.0, 1.0].view(), array![1.0, 1.0].view(), array![0.0, 0.0].view())
            .unwrap_err();
        assert!(matches!(err, CountRegError::Factorization { index: 1, .. }));
    }

    #[test]
    fn dense_inverse_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for k in [1usize, 3, 8, 20] {
            let n = k + 7;
            let x = Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..1.0));
            let g = Array1::from_shape_fn(n, |_| rng.random_range(0.2..2.0));
            let z = Array1::from_shape_fn(n, |_| rng.random_range(-3.0..3.0));
            let p = Array1::from_shape_fn(k, |j| if j == 0 { 0.0 } else { rng.random_range(0.0..1.0) });
            let beta = solve_weighted_ridge(x.view(), g.view(), z.view(), p.view()).unwrap();
            let (mut a, rhs) = weighted_normal_equations(x.view(), g.view(), z.view());
            for j in 0..k {
                a[[j, j]] += p[j];
            }
            let expected = gauss_jordan_inverse(&a).dot(&rhs);
            for j in 0..k {
                assert!((beta[j] - expected[j]).abs() < 1e-10 * (1.0 + expected[j].abs()));
            }
        }
    }

    fn gauss_jordan_inverse(a: &Array2<f64>) -> Array2<f64> {
        let k = a.nrows();
        let mut m = a.clone();
        let mut inv = Array2::<f64>::eye(k);
        for c in 0..k {
            let piv = (c..k).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).unwrap();
            for j in 0..k {
                m.swap([c, j], [piv, j]);
                inv.swap([c, j], [piv, j]);
            }
            let d = m[[c, c]];
            for j in 0..k {
                m[[c, j]] /= d;
                inv[[c, j]] /= d;
            }
            for i in 0..k {
                if i != c {
                    let f = m[[i, c]];
                    for j in 0..k {
                        m[[i, j]] -= f * m[[c, j]];
                        inv[[i, j]] -= f * inv[[c, j]];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn halving_never_increases_the_loss() {
        // a quadratic loss whose Newton step overshoots when the weights lie
        let x = array![[1.0, 0.5], [1.0, -0.5], [1.0, 2.0]];
        let loss = |eta: &Array1<f64>| eta.iter().map(|e| e.exp() - 2.0 * e).sum::<f64>();
        let start = array![0.0, 0.0];
        let step = descend_column(
            x.view(),
            array![1e-3, 1e-3, 1e-3].view(),
            array![50.0, 50.0, 50.0].view(),
            array![0.0, 0.0].view(),
            start.view(),
            loss,
        )
        .unwrap();
        assert!(step.halvings > 0);
        assert!(loss(&x.dot(&step.beta)) <= loss(&x.dot(&start)));
    }
}
