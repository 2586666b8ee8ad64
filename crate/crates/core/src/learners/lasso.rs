//! L1-penalized GLMs by cyclic coordinate descent.
//!
//! Objective: `-(1/N) loglik(beta) + lambda * sum_j pf_j |beta_j|`, where N is
//! the total row weight and `pf_j = 0` marks an unpenalized column (the
//! intercept). The binomial family uses an outer quadratic approximation of
//! the log-likelihood around the current iterate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::glm::{irls, GlmOptions};
use super::matrix::{Groups, Matrix};
use super::{cell_loss, expit, Family, FittedModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub nlambda: usize,
    pub lambda_min_ratio: f64,
    pub cv_folds: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub max_outer: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            nlambda: 30,
            lambda_min_ratio: 1e-3,
            cv_folds: 10,
            seed: 0,
            tol: 1e-12,
            max_sweeps: 5000,
            max_outer: 25,
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Weighted least-squares lasso solved in place on `beta`, with residuals
/// `resid = z - X beta` maintained incrementally.
#[allow(clippy::too_many_arguments)]
fn cd_quadratic(
    x: &Matrix,
    w: &[f64],
    total: f64,
    resid: &mut [f64],
    lambda: f64,
    pf: &[f64],
    beta: &mut [f64],
    opts: &LassoOptions,
) {
    let p = x.ncols();
    let n = x.nrows();
    let xsq: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| w[i] * x.get(i, j).powi(2)).sum::<f64>() / total)
        .collect();
    let update = |j: usize, beta: &mut [f64], resid: &mut [f64]| -> f64 {
        if xsq[j] <= 0.0 {
            beta[j] = 0.0;
            return 0.0;
        }
        let mut rho = 0.0;
        for i in 0..n {
            rho += w[i] * x.get(i, j) * resid[i];
        }
        rho = rho / total + xsq[j] * beta[j];
        let new = soft_threshold(rho, lambda * pf[j]) / xsq[j];
        let delta = new - beta[j];
        if delta != 0.0 {
            for i in 0..n {
                resid[i] -= x.get(i, j) * delta;
            }
            beta[j] = new;
        }
        xsq[j] * delta * delta
    };
    for _ in 0..opts.max_sweeps {
        let mut worst = 0.0f64;
        for j in 0..p {
            worst = worst.max(update(j, beta, resid));
        }
        if worst < opts.tol {
            return;
        }
        // iterate on the active set until it settles, then re-check all
        let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        for _ in 0..opts.max_sweeps {
            let mut worst = 0.0f64;
            for &j in &active {
                worst = worst.max(update(j, beta, resid));
            }
            if worst < opts.tol {
                break;
            }
        }
    }
}

/// Solves the penalized problem at a single `lambda`, warm-started from `beta`.
#[allow(clippy::too_many_arguments)]
pub fn lasso_fixed(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    family: Family,
    lambda: f64,
    pf: &[f64],
    beta: &mut [f64],
    opts: &LassoOptions,
) {
    let n = x.nrows();
    let total: f64 = w.iter().sum();
    if n == 0 || total <= 0.0 {
        return;
    }
    let eta = |beta: &[f64], i: usize| x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    match family {
        Family::Gaussian => {
            let mut resid: Vec<f64> = (0..n).map(|i| y[i] - eta(beta, i)).collect();
            cd_quadratic(x, w, total, &mut resid, lambda, pf, beta, opts);
        }
        Family::Binomial => {
            let mut dev_old = deviance(x, y, w, family, beta);
            for _ in 0..opts.max_outer {
                let mut ww = Vec::with_capacity(n);
                let mut resid = Vec::with_capacity(n);
                for i in 0..n {
                    let e = eta(beta, i);
                    let mu = expit(e);
                    let v = (mu * (1.0 - mu)).max(1e-5);
                    ww.push(w[i] * v);
                    // working response minus current fit
                    resid.push((y[i] - mu) / v);
                }
                cd_quadratic(x, &ww, total, &mut resid, lambda, pf, beta, opts);
                let dev = deviance(x, y, w, family, beta);
                if (dev - dev_old).abs() / (dev.abs() + 0.1 * total) < 1e-8 {
                    break;
                }
                dev_old = dev;
            }
        }
    }
}

/// Gradient of the average log-likelihood, `(1/N) X'W(y - mu)`.
pub fn loglik_gradient(x: &Matrix, y: &[f64], w: &[f64], family: Family, beta: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut g = vec![0.0; x.ncols()];
    for (i, r) in x.rows().enumerate() {
        let e: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
        let mu = match family {
            Family::Gaussian => e,
            Family::Binomial => expit(e),
        };
        for (j, v) in r.iter().enumerate() {
            g[j] += w[i] * v * (y[i] - mu);
        }
    }
    g.iter().map(|v| v / total).collect()
}

/// Coefficients of the fit using only unpenalized columns, and the smallest
/// lambda at which every penalized coefficient is zero.
pub fn null_fit(x: &Matrix, y: &[f64], w: &[f64], family: Family, pf: &[f64]) -> (Vec<f64>, f64) {
    let free: Vec<usize> = (0..x.ncols()).filter(|&j| pf[j] == 0.0).collect();
    let mut beta = vec![0.0; x.ncols()];
    if !free.is_empty() {
        let sub = x.select_cols(&free);
        let fit = irls(&sub, y, w, family, &GlmOptions { ridge: 0.0, ..GlmOptions::default() });
        for (k, &j) in free.iter().enumerate() {
            beta[j] = fit.coefficients[k];
        }
    }
    let g = loglik_gradient(x, y, w, family, &beta);
    let lmax = (0..x.ncols())
        .filter(|&j| pf[j] > 0.0)
        .map(|j| g[j].abs() / pf[j])
        .fold(0.0, f64::max);
    (beta, lmax)
}

/// Log-spaced descending grid from `lambda_max`.
pub fn lambda_grid(lambda_max: f64, nlambda: usize, min_ratio: f64) -> Vec<f64> {
    if nlambda <= 1 || lambda_max <= 0.0 {
        return vec![lambda_max.max(0.0)];
    }
    let lo = (lambda_max * min_ratio).ln();
    let hi = lambda_max.ln();
    (0..nlambda)
        .map(|k| (hi + (lo - hi) * k as f64 / (nlambda - 1) as f64).exp())
        .collect()
}

fn deviance(x: &Matrix, y: &[f64], w: &[f64], family: Family, beta: &[f64]) -> f64 {
    x.rows()
        .enumerate()
        .map(|(i, r)| {
            let e: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
            match family {
                Family::Gaussian => w[i] * (y[i] - e).powi(2),
                Family::Binomial => {
                    let mu = expit(e).clamp(1e-12, 1.0 - 1e-12);
                    -2.0 * w[i] * (y[i] * mu.ln() + (1.0 - y[i]) * (1.0 - mu).ln())
                }
            }
        })
        .sum()
}

/// Warm-started solutions along a descending grid. Once the fit explains
/// 99.9% of the null deviance, or stops improving, the remaining entries
/// repeat the last solution (the path is effectively saturated).
pub fn lasso_path(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    family: Family,
    grid: &[f64],
    pf: &[f64],
    opts: &LassoOptions,
) -> Vec<Vec<f64>> {
    let (mut beta, _) = null_fit(x, y, w, family, pf);
    let null_dev = deviance(x, y, w, family, &beta);
    let mut prev_dev = null_dev;
    let mut done = false;
    grid.iter()
        .map(|&lambda| {
            if !done {
                lasso_fixed(x, y, w, family, lambda, pf, &mut beta, opts);
                let dev = deviance(x, y, w, family, &beta);
                if null_dev > 0.0 && (1.0 - dev / null_dev >= 0.999 || (prev_dev - dev) < 1e-5 * null_dev && dev < null_dev) {
                    done = true;
                }
                prev_dev = dev;
            }
            beta.clone()
        })
        .collect()
}

/// Unpenalized columns: those identically equal to one.
pub fn intercept_mask(x: &Matrix) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| if x.rows().all(|r| r[j] == 1.0) { 0.0 } else { 1.0 })
        .collect()
}

/// Cross-validated lasso over rows of a grouped design. `xd` is the expanded
/// design of `groups.distinct`. Returns (chosen lambda, coefficients).
pub(crate) fn cv_lasso_grouped(
    xd: &Matrix,
    groups: &Groups,
    rows: &[usize],
    family: Family,
    grid: Option<&[f64]>,
    opts: &LassoOptions,
) -> (f64, Vec<f64>) {
    let cells = groups.cells(rows);
    let pf = intercept_mask(&xd.select_rows(&cells.occupied()));
    let fit_cells = |c: &super::matrix::Cells| {
        let occ = c.occupied();
        let x = xd.select_rows(&occ);
        let w: Vec<f64> = occ.iter().map(|&g| c.weight[g]).collect();
        let y: Vec<f64> = occ.iter().map(|&g| c.sum_y[g] / c.weight[g]).collect();
        (x, w, y)
    };
    let (x_all, w_all, y_all) = fit_cells(&cells);
    let grid: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => {
            let (_, lmax) = null_fit(&x_all, &y_all, &w_all, family, &pf);
            lambda_grid(lmax, opts.nlambda, opts.lambda_min_ratio)
        }
    };
    let folds = opts.cv_folds.min(rows.len()).max(1);
    let best = if grid.len() == 1 || folds < 2 {
        0
    } else {
        let mut order = rows.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
        let mut dev = vec![0.0; grid.len()];
        for v in 0..folds {
            let (held, train): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
                order.iter().copied().enumerate().partition(|(pos, _)| pos % folds == v);
            let train: Vec<usize> = train.into_iter().map(|(_, r)| r).collect();
            let held: Vec<usize> = held.into_iter().map(|(_, r)| r).collect();
            let (x, w, y) = fit_cells(&groups.cells(&train));
            let path = lasso_path(&x, &y, &w, family, &grid, &pf, opts);
            let hc = groups.cells(&held);
            for g in hc.occupied() {
                let r = xd.row(g);
                for (k, beta) in path.iter().enumerate() {
                    let e: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
                    let pred = match family {
                        Family::Gaussian => e,
                        Family::Binomial => expit(e).clamp(1e-5, 1.0 - 1e-5),
                    };
                    dev[k] += cell_loss(family, hc.weight[g], hc.sum_y[g], hc.sum_yy[g], pred);
                }
            }
        }
        dev.iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bk, bv), (k, &v)| if v < bv { (k, v) } else { (bk, bv) })
            .0
    };
    let path = lasso_path(&x_all, &y_all, &w_all, family, &grid[..=best], &pf, opts);
    (grid[best], path.into_iter().last().unwrap_or_default())
}

/// Lasso on an expanded design (intercept column(s) unpenalized) with lambda
/// chosen from `grid` by cross-validated deviance. An empty grid means the
/// default log-spaced grid.
pub fn fit_lasso(x: &Matrix, y: &[f64], family: Family, grid: &[f64], opts: &LassoOptions) -> FittedModel {
    let groups = Groups::build(x, y);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let grid = if grid.is_empty() { None } else { Some(grid) };
    let (lambda, beta) = cv_lasso_grouped(&groups.distinct, &groups, &rows, family, grid, opts);
    let mut m = FittedModel::raw(family, beta);
    m.lambda = Some(lambda);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::glm::fit_glm;
    use rand::Rng;

    fn data(n: usize, family: Family, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let x1: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let x2 = rng.random_bool(0.5) as u8 as f64;
            let x3: f64 = rng.random::<f64>();
            let eta = 0.2 + 0.9 * x1 - 0.5 * x2 + 0.05 * x3;
            y.push(match family {
                Family::Gaussian => eta + rng.random::<f64>() - 0.5,
                Family::Binomial => rng.random_bool(expit(eta)) as u8 as f64,
            });
            rows.push(vec![1.0, x1, x2, x3]);
        }
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn huge_lambda_zeroes_everything_but_intercept() {
        for family in [Family::Gaussian, Family::Binomial] {
            let (x, y) = data(300, family, 1);
            let m = fit_lasso(&x, &y, family, &[1e6], &LassoOptions::default());
            assert!(m.coefficients[1..].iter().all(|&c| c == 0.0));
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let fitted = match family {
                Family::Gaussian => m.coefficients[0],
                Family::Binomial => expit(m.coefficients[0]),
            };
            assert!((fitted - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_lambda_matches_irls() {
        for family in [Family::Gaussian, Family::Binomial] {
            let (x, y) = data(500, family, 2);
            let lasso = fit_lasso(&x, &y, family, &[0.0], &LassoOptions::default());
            let glm = fit_glm(&x, &y, family);
            for (a, b) in lasso.coefficients.iter().zip(&glm.coefficients) {
                assert!((a - b).abs() < 1e-4, "{family:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn orthonormal_design_soft_thresholds_ols() {
        // columns: intercept and three mutually orthogonal, mean-zero +-1 contrasts
        let n = 64;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..n {
            let s = |b: usize| if (i >> b) & 1 == 1 { 1.0 } else { -1.0 };
            let r = vec![1.0, s(0), s(1), s(2)];
            y.push(0.5 + 0.8 * r[1] - 0.3 * r[2] + 0.05 * r[3] + rng.random::<f64>() - 0.5);
            rows.push(r);
        }
        let x = Matrix::from_rows(&rows);
        let ols = fit_glm(&x, &y, Family::Gaussian).coefficients;
        let lambda = 0.1;
        let m = fit_lasso(&x, &y, Family::Gaussian, &[lambda], &LassoOptions::default());
        assert!((m.coefficients[0] - ols[0]).abs() < 1e-6);
        for j in 1..4 {
            let oracle = soft_threshold(ols[j], lambda);
            assert!((m.coefficients[j] - oracle).abs() < 1e-6, "{j}: {} vs {oracle}", m.coefficients[j]);
        }
    }

    #[test]
    fn kkt_conditions_hold_along_path() {
        for family in [Family::Gaussian, Family::Binomial] {
            let (x, y) = data(400, family, 4);
            let w = vec![1.0; x.nrows()];
            let pf = intercept_mask(&x);
            let (_, lmax) = null_fit(&x, &y, &w, family, &pf);
            let grid = lambda_grid(lmax, 10, 1e-2);
            let path = lasso_path(&x, &y, &w, family, &grid, &pf, &LassoOptions::default());
            for (lambda, beta) in grid.iter().zip(&path) {
                let g = loglik_gradient(&x, &y, &w, family, beta);
                assert!(g[0].abs() < 1e-6, "{family:?} {lambda} {}", g[0]);
                for j in 1..x.ncols() {
                    if beta[j] != 0.0 {
                        assert!((g[j].abs() - lambda).abs() < 1e-4, "{family:?} active {j}");
                        assert!(g[j].signum() == beta[j].signum());
                    } else {
                        assert!(g[j].abs() <= lambda + 1e-4, "{family:?} inactive {j}");
                    }
                }
            }
        }
    }
}
