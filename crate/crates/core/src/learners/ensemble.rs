use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{Groups, Matrix};
use super::{cell_loss, Family, FittedModel, LassoOptions, LearnerKind, StackConfig};
use crate::error::{Error, Result};

/// Convex combination of fitted learners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub family: Family,
    /// Every candidate with its weight; weights are nonnegative and sum to one.
    pub weights: Vec<(LearnerKind, f64)>,
    /// Cross-validated loss of each candidate (empty for a single member).
    pub member_cv_loss: Vec<f64>,
    pub ensemble_cv_loss: Option<f64>,
    /// Refit members with positive weight.
    pub members: Vec<(f64, FittedModel)>,
    pub prob_bound: f64,
}

impl EnsembleModel {
    pub(crate) fn predict_row(&self, row: &[f64], buf: &mut Vec<f64>) -> f64 {
        let v: f64 = self.members.iter().map(|(w, m)| w * m.predict_row(row, self.prob_bound, buf)).sum();
        match self.family {
            Family::Gaussian => v,
            Family::Binomial => v.clamp(self.prob_bound, 1.0 - self.prob_bound),
        }
    }

    pub fn predict(&self, rows: &Matrix) -> Result<Vec<f64>> {
        if let Some((_, m)) = self.members.first() {
            if let Some(d) = &m.design {
                if d.arity() != rows.ncols() {
                    return Err(Error::ArityMismatch { expected: d.arity(), got: rows.ncols() });
                }
            }
        }
        let mut buf = Vec::new();
        Ok(rows.rows().map(|r| self.predict_row(r, &mut buf)).collect())
    }
}

/// Held-out cell statistics with one prediction per candidate.
struct CvCell {
    weight: f64,
    sum_y: f64,
    sum_yy: f64,
    preds: Vec<f64>,
}

fn combined_loss(family: Family, cells: &[CvCell], alpha: &[f64]) -> f64 {
    cells
        .iter()
        .map(|c| {
            let p: f64 = c.preds.iter().zip(alpha).map(|(a, b)| a * b).sum();
            cell_loss(family, c.weight, c.sum_y, c.sum_yy, p)
        })
        .sum()
}

fn combined_gradient(family: Family, cells: &[CvCell], alpha: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; alpha.len()];
    for c in cells {
        let p: f64 = c.preds.iter().zip(alpha).map(|(a, b)| a * b).sum();
        let d = match family {
            Family::Gaussian => 2.0 * (c.weight * p - c.sum_y),
            Family::Binomial => -c.sum_y / p + (c.weight - c.sum_y) / (1.0 - p),
        };
        for (gk, pk) in g.iter_mut().zip(&c.preds) {
            *gk += d * pk;
        }
    }
    g
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Minimizes the combined CV loss over the simplex by projected gradient
/// with backtracking, starting from the best single candidate.
fn simplex_weights(family: Family, cells: &[CvCell], k: usize) -> Vec<f64> {
    let total: f64 = cells.iter().map(|c| c.weight).sum::<f64>().max(1.0);
    let vertex = |j: usize| {
        let mut a = vec![0.0; k];
        a[j] = 1.0;
        a
    };
    let mut alpha = (0..k)
        .map(|j| (combined_loss(family, cells, &vertex(j)), j))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, j)| vertex(j))
        .unwrap_or_default();
    let mut current = combined_loss(family, cells, &alpha) / total;
    let mut step = 1.0;
    for _ in 0..2000 {
        let g: Vec<f64> = combined_gradient(family, cells, &alpha).iter().map(|v| v / total).collect();
        let mut improved = false;
        while step > 1e-12 {
            let trial: Vec<f64> = alpha.iter().zip(&g).map(|(a, d)| a - step * d).collect();
            let cand = project_simplex(&trial);
            let value = combined_loss(family, cells, &cand) / total;
            if value.is_finite() && value < current {
                let gain = current - value;
                alpha = cand;
                current = value;
                improved = gain > 1e-15;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    // clean up numerical dust so the weights sum to exactly one
    let s: f64 = alpha.iter().sum();
    alpha.iter().map(|a| a / s).collect()
}

pub(crate) fn fit_ensemble_grouped(
    stack: &StackConfig,
    groups: &Groups,
    rows: &[usize],
    family: Family,
    seed: u64,
) -> Result<EnsembleModel> {
    let lasso = LassoOptions { seed: seed ^ 0x5eed_1a55, ..stack.lasso };
    // drop candidates that cannot represent this design (e.g. saturated on continuous inputs)
    let mut candidates = Vec::new();
    let mut first_err = None;
    for &kind in &stack.members {
        match kind.fit_grouped(groups, rows, family, &lasso) {
            Ok(m) => candidates.push((kind, m)),
            Err(e @ (Error::SaturationOnContinuous(_) | Error::SaturationTooLarge(_))) => {
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if candidates.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::Config("empty learner stack".into())));
    }
    let bound = stack.prob_bound;
    if candidates.len() == 1 {
        let (kind, m) = candidates.pop().expect("one candidate");
        return Ok(EnsembleModel {
            family,
            weights: vec![(kind, 1.0)],
            member_cv_loss: Vec::new(),
            ensemble_cv_loss: None,
            members: vec![(1.0, m)],
            prob_bound: bound,
        });
    }
    let k = candidates.len();
    let folds = stack.ensemble_folds.max(2).min(rows.len().max(2));
    let mut order = rows.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut cv_cells = Vec::new();
    let mut buf = Vec::new();
    for v in 0..folds {
        let mut train = Vec::with_capacity(order.len());
        let mut held = Vec::new();
        for (pos, &r) in order.iter().enumerate() {
            if pos % folds == v {
                held.push(r);
            } else {
                train.push(r);
            }
        }
        if held.is_empty() || train.is_empty() {
            continue;
        }
        let fold_lasso = LassoOptions { seed: lasso.seed.wrapping_add(v as u64 + 1), ..lasso };
        let fits: Vec<FittedModel> = candidates
            .iter()
            .map(|(kind, _)| kind.fit_grouped(groups, &train, family, &fold_lasso))
            .collect::<Result<_>>()?;
        let hc = groups.cells(&held);
        for g in hc.occupied() {
            let row = groups.distinct.row(g);
            let preds = fits.iter().map(|m| m.predict_row(row, bound, &mut buf)).collect();
            cv_cells.push(CvCell { weight: hc.weight[g], sum_y: hc.sum_y[g], sum_yy: hc.sum_yy[g], preds });
        }
    }
    let member_cv_loss: Vec<f64> = (0..k)
        .map(|j| {
            let mut a = vec![0.0; k];
            a[j] = 1.0;
            combined_loss(family, &cv_cells, &a)
        })
        .collect();
    let alpha = simplex_weights(family, &cv_cells, k);
    let ensemble_cv_loss = combined_loss(family, &cv_cells, &alpha);
    let weights = candidates.iter().zip(&alpha).map(|((kind, _), &a)| (*kind, a)).collect();
    let members = candidates
        .into_iter()
        .zip(&alpha)
        .filter(|(_, &a)| a > 0.0)
        .map(|((_, m), &a)| (a, m))
        .collect();
    Ok(EnsembleModel {
        family,
        weights,
        member_cv_loss,
        ensemble_cv_loss: Some(ensemble_cv_loss),
        members,
        prob_bound: bound,
    })
}

/// Fits every member with V-fold cross-validation, weights them by
/// minimizing cross-validated loss over the simplex and refits on all rows.
pub fn fit_ensemble(
    members: &[LearnerKind],
    x: &Matrix,
    y: &[f64],
    family: Family,
    folds: usize,
    seed: u64,
) -> Result<EnsembleModel> {
    let stack = StackConfig { members: members.to_vec(), ensemble_folds: folds, ..StackConfig::single(LearnerKind::Mean) };
    let groups = Groups::build(x, y);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    fit_ensemble_grouped(&stack, &groups, &rows, family, seed)
}
