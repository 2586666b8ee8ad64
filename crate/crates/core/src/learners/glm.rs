//! Maximum-likelihood GLM fitting by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use super::matrix::Matrix;
use super::{expit, Family, FittedModel};

#[derive(Debug, Clone, Copy)]
pub struct GlmOptions {
    pub max_iter: usize,
    /// Convergence threshold on the largest absolute coefficient change.
    pub tol: f64,
    /// Ridge added to the diagonal of the (unnormalized) normal equations.
    pub ridge: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8, ridge: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn penalized_nll(x: &Matrix, y: &[f64], w: &[f64], beta: &[f64], ridge: f64) -> f64 {
    let mut nll = 0.0;
    for (i, r) in x.rows().enumerate() {
        if w[i] == 0.0 {
            continue;
        }
        let eta = dot(r, beta);
        // log(1 + e^eta) computed stably
        let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
        nll += w[i] * (softplus - y[i] * eta);
    }
    nll + 0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>()
}

/// Solves (H + ridge I) delta = g, retrying with a larger ridge if the
/// factorization fails.
fn solve_spd(h: &DMatrix<f64>, g: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let p = h.nrows();
    let mut r = ridge.max(1e-12);
    loop {
        let mut a = h.clone();
        for j in 0..p {
            a[(j, j)] += r;
        }
        if let Some(ch) = a.cholesky() {
            return ch.solve(g);
        }
        r *= 100.0;
        if r > 1e12 {
            return DVector::zeros(p);
        }
    }
}

/// Weighted IRLS. `y` may be fractional for the binomial family (a cell mean).
pub fn irls(x: &Matrix, y: &[f64], w: &[f64], family: Family, opts: &GlmOptions) -> GlmFit {
    let p = x.ncols();
    let mut beta = vec![0.0; p];
    if x.nrows() == 0 || p == 0 {
        return GlmFit { coefficients: beta, iterations: 0, converged: true };
    }
    let mut converged = false;
    let mut iterations = 0;
    let mut current = match family {
        Family::Binomial => penalized_nll(x, y, w, &beta, opts.ridge),
        Family::Gaussian => 0.0,
    };
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut g = DVector::<f64>::zeros(p);
        for (i, r) in x.rows().enumerate() {
            if w[i] == 0.0 {
                continue;
            }
            let eta = dot(r, &beta);
            let (mu, var) = match family {
                Family::Gaussian => (eta, 1.0),
                Family::Binomial => {
                    let mu = expit(eta);
                    (mu, (mu * (1.0 - mu)).max(1e-12))
                }
            };
            let hw = w[i] * var;
            let resid = w[i] * (y[i] - mu);
            for a in 0..p {
                if r[a] == 0.0 {
                    continue;
                }
                g[a] += r[a] * resid;
                let ra = r[a] * hw;
                for b in a..p {
                    h[(a, b)] += ra * r[b];
                }
            }
        }
        for a in 0..p {
            g[a] -= opts.ridge * beta[a];
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let delta = solve_spd(&h, &g, opts.ridge);
        let mut step = 1.0;
        let mut candidate: Vec<f64>;
        loop {
            candidate = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
            if family == Family::Gaussian {
                break;
            }
            let value = penalized_nll(x, y, w, &candidate, opts.ridge);
            if value <= current + 1e-12 * current.abs().max(1.0) || step < 1e-6 {
                current = value;
                break;
            }
            step *= 0.5;
        }
        let change = beta.iter().zip(&candidate).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = candidate;
        if change < opts.tol || family == Family::Gaussian {
            converged = true;
            break;
        }
    }
    GlmFit { coefficients: beta, iterations, converged }
}

/// Fits an unweighted GLM on an already-expanded design.
pub fn fit_glm(x: &Matrix, y: &[f64], family: Family) -> FittedModel {
    let w = vec![1.0; x.nrows()];
    let fit = irls(x, y, &w, family, &GlmOptions::default());
    FittedModel::raw(family, fit.coefficients)
}

/// Penalized score X'W(y - mu) - ridge * beta, divided by the total weight.
pub fn normalized_score(x: &Matrix, y: &[f64], w: &[f64], beta: &[f64], family: Family, ridge: f64) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut s = vec![0.0; x.ncols()];
    for (i, r) in x.rows().enumerate() {
        let eta = dot(r, beta);
        let mu = match family {
            Family::Gaussian => eta,
            Family::Binomial => expit(eta),
        };
        for (a, v) in r.iter().enumerate() {
            s[a] += v * w[i] * (y[i] - mu);
        }
    }
    s.iter().zip(beta).map(|(v, b)| (v - ridge * b) / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{logit, Expansion, DesignSpec, expand_features};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intercept_only_binomial_is_logit_mean() {
        let y: Vec<f64> = (0..10).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
        let x = Matrix::new(10, 1, vec![1.0; 10]);
        let m = fit_glm(&x, &y, Family::Binomial);
        assert!((m.coefficients[0] - logit(0.4)).abs() < 1e-5);
    }

    #[test]
    fn gaussian_identity_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 4.0).collect();
        let ones = vec![1.0; 20];
        let x = Matrix::from_columns(&[&ones, &xs]);
        let m = fit_glm(&x, &xs, Family::Gaussian);
        assert!(m.coefficients[0].abs() < 1e-5);
        assert!((m.coefficients[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn saturated_fit_reproduces_cell_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 4000;
        let (mut a, mut w, mut y) = (vec![], vec![], vec![]);
        for _ in 0..n {
            let ai = rng.random_bool(0.5) as u8 as f64;
            let wi = rng.random_bool(0.3) as u8 as f64;
            let p = 0.2 + 0.3 * ai + 0.25 * wi * ai + 0.1 * wi;
            a.push(ai);
            w.push(wi);
            y.push(rng.random_bool(p) as u8 as f64);
        }
        let base = Matrix::from_columns(&[&a, &w]);
        let x = expand_features(&base, &DesignSpec::new(Expansion::Saturated)).unwrap();
        for family in [Family::Binomial, Family::Gaussian] {
            let m = fit_glm(&x, &y, family);
            let fitted = m.predict_raw(&x, 0.0);
            // oracle: direct cell means
            for cell in 0..4 {
                let (ca, cw) = ((cell & 1) as f64, (cell >> 1) as f64);
                let idx: Vec<usize> = (0..n).filter(|&i| a[i] == ca && w[i] == cw).collect();
                let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
                assert!((fitted[idx[0]] - mean).abs() < 1e-6, "{family:?} cell {cell}");
            }
        }
    }

    #[test]
    fn score_vanishes_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5000;
        let x1: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
        let y: Vec<f64> =
            (0..n).map(|i| rng.random_bool(expit(-0.3 + 1.2 * x1[i] - 0.7 * x2[i])) as u8 as f64).collect();
        let ones = vec![1.0; n];
        let x = Matrix::from_columns(&[&ones, &x1, &x2]);
        let w = vec![1.0; n];
        let opts = GlmOptions::default();
        let fit = irls(&x, &y, &w, Family::Binomial, &opts);
        assert!(fit.converged);
        let s = normalized_score(&x, &y, &w, &fit.coefficients, Family::Binomial, opts.ridge);
        assert!(s.iter().all(|v| v.abs() < 1e-6), "{s:?}");
    }

    #[test]
    fn separation_stays_finite() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]]);
        let y = [0.0, 1.0, 1.0, 1.0];
        let m = fit_glm(&x, &y, Family::Binomial);
        assert!(m.coefficients.iter().all(|c| c.is_finite()));
        let p = m.predict_raw(&x, 1e-3);
        assert!((p[2] - 0.999).abs() < 1e-12);
    }
}
