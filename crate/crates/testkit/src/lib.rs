//! Reference implementations for checking the solvers.
//!
//! Everything here is written directly from the model densities with
//! log-gamma functions and general-purpose optimizers, sharing no code with
//! the solver crate.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Mn,
    Dm,
    Nm,
    Gdm,
}

impl Model {
    pub const ALL: [Model; 4] = [Model::Mn, Model::Dm, Model::Nm, Model::Gdm];

    pub fn columns(self, taxa: usize) -> usize {
        match self {
            Model::Mn => taxa - 1,
            Model::Dm => taxa,
            Model::Nm => taxa + 1,
            Model::Gdm => 2 * (taxa - 1),
        }
    }
}

fn ln_fact(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

fn ln_coef(y: &[u64]) -> f64 {
    ln_fact(y.iter().sum()) - y.iter().map(|&v| ln_fact(v)).sum::<f64>()
}

/// Log-pmf of one count vector given its linear predictors.
pub fn obs_loglik(model: Model, eta: &[f64], y: &[u64]) -> f64 {
    let taxa = y.len();
    let total: u64 = y.iter().sum();
    match model {
        Model::Mn => {
            let denom = 1.0 + eta.iter().map(|e| e.exp()).sum::<f64>();
            let mut acc = ln_coef(y);
            for d in 0..taxa {
                let p = if d + 1 < taxa { eta[d].exp() / denom } else { 1.0 / denom };
                acc += y[d] as f64 * p.ln();
            }
            acc
        }
        Model::Dm => {
            let a: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
            let a_sum: f64 = a.iter().sum();
            let mut acc = ln_coef(y) + ln_gamma(a_sum) - ln_gamma(a_sum + total as f64);
            for d in 0..taxa {
                acc += ln_gamma(a[d] + y[d] as f64) - ln_gamma(a[d]);
            }
            acc
        }
        Model::Nm => {
            let size = eta[0].exp();
            let a: Vec<f64> = eta[1..].iter().map(|e| e.exp()).collect();
            let denom = 1.0 + a.iter().sum::<f64>();
            let mut acc = ln_gamma(size + total as f64) - ln_gamma(size) - size * denom.ln();
            for d in 0..taxa {
                acc += y[d] as f64 * (a[d] / denom).ln() - ln_fact(y[d]);
            }
            acc
        }
        Model::Gdm => {
            let half = taxa - 1;
            let mut acc = ln_coef(y);
            for k in 0..half {
                let a = eta[k].exp();
                let b = eta[half + k].exp();
                let tail: u64 = y[k..].iter().sum();
                let rest = tail - y[k];
                acc += ln_gamma(a + y[k] as f64) - ln_gamma(a) + ln_gamma(b + rest as f64) - ln_gamma(b)
                    - ln_gamma(a + b + tail as f64)
                    + ln_gamma(a + b);
            }
            acc
        }
    }
}

/// Log-likelihood with `x` holding the intercept column.
pub fn loglik(model: Model, x: &Array2<f64>, y: &Array2<u64>, b: &Array2<f64>) -> f64 {
    let eta = x.dot(b);
    (0..x.nrows())
        .map(|i| {
            let e: Vec<f64> = eta.row(i).to_vec();
            let yi: Vec<u64> = y.row(i).to_vec();
            obs_loglik(model, &e, &yi)
        })
        .sum()
}

/// Sparse-group-lasso penalty over explicit groups of `(row, col)` cells.
pub fn sgl_penalty(beta: &Array2<f64>, groups: &[Vec<(usize, usize)>], lambda: f64, alpha: f64) -> f64 {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for g in groups {
        let sq: f64 = g.iter().map(|&(r, c)| beta[[r, c]] * beta[[r, c]]).sum();
        l1 += g.iter().map(|&(r, c)| beta[[r, c]].abs()).sum::<f64>();
        l2 += (g.len() as f64).sqrt() * sq.sqrt();
    }
    lambda * (alpha * l1 + (1.0 - alpha) * l2)
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..at.len())
        .map(|k| {
            let step = h * at[k].abs().max(1.0);
            x[k] = at[k] + step;
            let up = f(&x);
            x[k] = at[k] - step;
            let down = f(&x);
            x[k] = at[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Longest coordinate move per line search; keeps iterates where log-gamma
/// differences are still accurate.
const MAX_STEP: f64 = 1.0;

/// Quasi-Newton minimization with finite-difference gradients and an
/// Armijo backtracking line search.
pub fn bfgs(f: impl Fn(&[f64]) -> f64, x0: &[f64], max_iter: usize, gtol: f64) -> Minimum {
    let n = x0.len();
    let grad = |x: &[f64]| DVector::from_vec(fd_gradient(&f, x, 1e-6));
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    let mut g = grad(x.as_slice());
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        if g.amax() < gtol {
            break;
        }
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let longest = dir.amax();
        if longest > MAX_STEP {
            dir *= MAX_STEP / longest;
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            let fc = f(cand.as_slice());
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                next = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = next else { break };
        let gn = grad(xn.as_slice());
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        let done = (fx - fnew).abs() <= 1e-15 * (1.0 + fx.abs());
        x = xn;
        fx = fnew;
        g = gn;
        if done {
            break;
        }
    }
    Minimum {
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
    }
}

/// Best of several BFGS runs started from `starts`.
pub fn multistart_minimum(f: impl Fn(&[f64]) -> f64, starts: &[Vec<f64>], max_iter: usize) -> Minimum {
    starts
        .iter()
        .map(|s| bfgs(&f, s, max_iter, 1e-9))
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start")
}

/// Maximum-likelihood coefficients by BFGS from several starts.
pub fn count_mle(model: Model, x: &Array2<f64>, y: &Array2<u64>, starts: usize, seed: u64) -> (Array2<f64>, f64) {
    let k = x.ncols();
    let cols = model.columns(y.ncols());
    let obj = |v: &[f64]| -> f64 {
        let b = Array2::from_shape_vec((k, cols), v.to_vec()).expect("shape");
        -loglik(model, x, y, &b)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits: Vec<Vec<f64>> = (0..starts)
        .map(|s| {
            if s == 0 {
                vec![0.0; k * cols]
            } else {
                (0..k * cols).map(|_| rng.random_range(-0.5..0.5)).collect()
            }
        })
        .collect();
    let best = multistart_minimum(obj, &inits, 2000);
    (Array2::from_shape_vec((k, cols), best.x).expect("shape"), -best.value)
}

pub fn dense_solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let v = DVector::from_iterator(n, b.iter().copied());
    let sol = m.lu().solve(&v).expect("nonsingular system");
    Array1::from_iter(sol.iter().copied())
}

/// Poisson log-link maximum likelihood by full Newton iterations.
pub fn poisson_newton_mle(x: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
    let k = x.ncols();
    let mut beta = Array1::<f64>::zeros(k);
    let mean = y.mean().unwrap_or(1.0).max(1e-3);
    beta[0] = mean.ln();
    for _ in 0..200 {
        let mu = x.dot(&beta).mapv(f64::exp);
        let grad = x.t().dot(&(y - &mu));
        let mut hess = Array2::<f64>::zeros((k, k));
        for i in 0..x.nrows() {
            for a in 0..k {
                for b in 0..k {
                    hess[[a, b]] += mu[i] * x[[i, a]] * x[[i, b]];
                }
            }
        }
        let step = dense_solve(&hess, &grad);
        beta = &beta + &step;
        if step.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-14 {
            break;
        }
    }
    beta
}

/// Design with a leading ones column and standard normal covariates.
pub fn random_design(rng: &mut impl Rng, n: usize, p: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, p + 1), |(_, j)| {
        if j == 0 {
            1.0
        } else {
            let u: f64 = rng.random_range(-1.0..1.0);
            u * scale * 3f64.sqrt()
        }
    })
}

/// Counts with positive row totals, roughly uniform over categories.
pub fn random_counts(rng: &mut impl Rng, n: usize, taxa: usize, max_count: u64) -> Array2<u64> {
    let mut y = Array2::from_shape_fn((n, taxa), |_| rng.random_range(0..=max_count));
    for mut row in y.rows_mut() {
        if row.sum() == 0 {
            row[rng.random_range(0..taxa)] = 1;
        }
    }
    y
}
