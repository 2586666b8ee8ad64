//! Partial TMLE: logistic fluctuation of the outcome regression only.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ThetaPair};
use crate::learners::{expit, logit};
use crate::nuisance::ComponentFits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleLog {
    pub pair: ThetaPair,
    pub iterations: usize,
    pub converged: bool,
    pub epsilons: Vec<f64>,
    /// mean of d_y after the last update
    pub final_score: f64,
    pub threshold: f64,
}

/// Stopping threshold (√n log n)⁻¹.
pub fn score_threshold(n: usize) -> f64 {
    let n = n as f64;
    1.0 / (n.sqrt() * n.ln())
}

/// Clever covariate C_b; zero outside {A = a'} (and {S = 1} when transporting).
pub fn targeting_covariate(comp: &ComponentFits, d: &Dataset, selection: Option<(&[f64], f64)>) -> Vec<f64> {
    let a = d.a();
    let ap = f64::from(comp.pair.a_prime);
    (0..d.n())
        .map(|i| {
            if a[i] != ap {
                return 0.0;
            }
            let base = comp.h_m[i] / comp.g_aprime[i];
            match (selection, d.s()) {
                (Some((c, t)), Some(s)) => {
                    if s[i] == 1.0 {
                        base * (1.0 - c[i]) / (c[i] * t)
                    } else {
                        0.0
                    }
                }
                _ => base,
            }
        })
        .collect()
}

fn score(cov: &[f64], y: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = (0..cov.len()).filter(|&i| cov[i] != 0.0).map(|i| cov[i] * (y[i] - b[i])).sum();
    sum / cov.len() as f64
}

/// Weighted intercept-only logistic fit with offset logit(b): the ε solving
/// Σ C_i (y_i − expit(logit b_i + ε)) = 0 over rows with C_i ≠ 0.
fn fluctuation(cov: &[f64], y: &[f64], b: &[f64]) -> f64 {
    let rows: Vec<usize> = (0..cov.len()).filter(|&i| cov[i] != 0.0).collect();
    let eval = |eps: f64| -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(f, df), &i| {
            let p = expit(logit(b[i]) + eps);
            (f + cov[i] * (y[i] - p), df - cov[i] * p * (1.0 - p))
        })
    };
    let mut eps = 0.0;
    let (mut f, mut df) = eval(eps);
    let scale: f64 = rows.iter().map(|&i| cov[i].abs()).sum::<f64>().max(1e-300);
    for _ in 0..100 {
        if f.abs() <= 1e-13 * scale || df == 0.0 {
            break;
        }
        // Newton with halving on |f|; f is monotone in ε
        let mut step = -f / df;
        loop {
            let (f_new, df_new) = eval(eps + step);
            if f_new.abs() < f.abs() || step.abs() < 1e-14 {
                eps += step;
                f = f_new;
                df = df_new;
                break;
            }
            step *= 0.5;
        }
    }
    eps
}

/// Iteratively fluctuates b until |mean d_y| ≤ (√n log n)⁻¹ or `max_iter` updates.
pub fn tmle_target_b(
    comp: &ComponentFits,
    d: &Dataset,
    selection: Option<(&[f64], f64)>,
    max_iter: usize,
) -> (Vec<f64>, TmleLog) {
    let cov = targeting_covariate(comp, d, selection);
    let y = d.y();
    let threshold = score_threshold(d.n());
    let mut b = comp.b.clone();
    let mut epsilons = Vec::new();
    let mut current = score(&cov, y, &b);
    while current.abs() > threshold && epsilons.len() < max_iter {
        let eps = fluctuation(&cov, y, &b);
        for v in b.iter_mut() {
            *v = expit(logit(*v) + eps);
        }
        epsilons.push(eps);
        current = score(&cov, y, &b);
    }
    let log = TmleLog {
        pair: comp.pair,
        iterations: epsilons.len(),
        converged: current.abs() <= threshold,
        epsilons,
        final_score: current,
        threshold,
    };
    (b, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EstimandFamily, VariableRoles};

    fn fixture(y: Vec<f64>, b: Vec<f64>) -> (Dataset, ComponentFits) {
        let n = y.len();
        let roles = VariableRoles {
            s: None,
            w: vec!["w".into()],
            a: "a".into(),
            z: vec!["z".into()],
            m: vec!["m".into()],
            y: "y".into(),
        };
        let cols = [("w", vec![0.0; n]), ("a", vec![1.0; n]), ("z", vec![0.0; n]), ("m", vec![1.0; n]), ("y", y)];
        let d = Dataset::new(cols.into_iter().map(|(k, v)| (k.to_string(), v)), roles, EstimandFamily::Nontransported)
            .unwrap();
        let ones = vec![1.0; n];
        let half = vec![0.5; n];
        let comp = ComponentFits {
            pair: ThetaPair::new(1, 0),
            g_aprime: half.clone(),
            g_astar: half.clone(),
            e_aprime: half.clone(),
            e_astar: half,
            b,
            h_z: ones.clone(),
            h_m: ones.clone(),
            u: ones.clone(),
            ubar: ones.clone(),
            v: ones.clone(),
            vbar: ones,
        };
        (d, comp)
    }

    #[test]
    fn already_solved_needs_no_update() {
        let (d, comp) = fixture(vec![0.2, 0.4, 0.6], vec![0.2, 0.4, 0.6]);
        let (b, log) = tmle_target_b(&comp, &d, None, 50);
        assert_eq!(log.iterations, 0);
        assert!(log.converged);
        assert_eq!(b, comp.b);
    }

    #[test]
    fn fluctuation_moves_toward_outcome() {
        let y: Vec<f64> = (0..400).map(|i| 0.5 + 0.1 * (i % 4) as f64).collect();
        let b: Vec<f64> = y.iter().map(|v| v - 0.1).collect();
        let (d, comp) = fixture(y.clone(), b.clone());
        let (bt, log) = tmle_target_b(&comp, &d, None, 50);
        assert!(log.epsilons[0] > 0.0);
        assert!(bt.iter().zip(&b).all(|(new, old)| new > old));
        assert!(log.converged && log.final_score.abs() <= log.threshold);
    }

    #[test]
    fn threshold_formula() {
        assert!((score_threshold(5000) - 1.0 / (5000f64.sqrt() * 5000f64.ln())).abs() < 1e-18);
    }
}
