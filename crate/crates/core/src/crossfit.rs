//! Fold partitioning and out-of-fold prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_ensemble_grouped, EnsembleModel, Family, Groups, Matrix, StackConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    folds: usize,
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    /// Observations in validation set `j`.
    pub fn validation(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == j).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.folds];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }

    /// Fold ids for a dataset made of two stacked copies of the observations.
    pub fn duplicated(&self) -> Vec<usize> {
        self.fold_of.iter().chain(&self.fold_of).copied().collect()
    }
}

fn check(n: usize, folds: usize) -> Result<()> {
    if folds == 0 || folds > n {
        return Err(Error::BadFoldCount { n, folds });
    }
    Ok(())
}

/// Uniform random partition of `0..n` into `folds` sets whose sizes differ
/// by at most one. One fold disables cross-fitting: every model is trained
/// on all rows and predicts all rows.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldAssignment> {
    check(n, folds)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    Ok(FoldAssignment { folds, fold_of })
}

/// Like [`make_folds`], but balances every stratum across folds as well.
pub fn make_folds_stratified(strata: &[f64], folds: usize, seed: u64) -> Result<FoldAssignment> {
    let n = strata.len();
    check(n, folds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels: Vec<f64> = strata.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut fold_of = vec![0; n];
    let mut pos = 0;
    for level in levels {
        let mut members: Vec<usize> = (0..n).filter(|&i| strata[i] == level).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = pos % folds;
            pos += 1;
        }
    }
    Ok(FoldAssignment { folds, fold_of })
}

/// One regression to be cross-fitted.
///
/// Training candidates are the rows of `x` with `train[i]`; a row in fold `j`
/// is used by every fold-`k` model with `k != j`. Evaluation rows (usually the
/// observations with counterfactual substitutions) are predicted by the model
/// of their own fold.
#[derive(Debug, Clone)]
pub struct CrossFitTask<'a> {
    pub name: &'a str,
    pub family: Family,
    pub x: &'a Matrix,
    pub y: &'a [f64],
    pub train: &'a [bool],
    pub row_fold: &'a [usize],
    pub eval: &'a Matrix,
    pub eval_fold: &'a [usize],
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Out-of-fold predictions for every evaluation row.
pub fn crossfit_predict(task: &CrossFitTask<'_>, folds: usize, stack: &StackConfig, seed: u64) -> Result<Vec<f64>> {
    crossfit_models(task, folds, stack, seed).map(|(pred, _)| pred)
}

/// As [`crossfit_predict`], also returning the per-fold models.
pub fn crossfit_models(
    task: &CrossFitTask<'_>,
    folds: usize,
    stack: &StackConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Option<EnsembleModel>>)> {
    let candidates: Vec<usize> = (0..task.x.nrows()).filter(|&i| task.train[i]).collect();
    let sub_x = task.x.select_rows(&candidates);
    let sub_y: Vec<f64> = candidates.iter().map(|&i| task.y[i]).collect();
    let groups = Groups::build(&sub_x, &sub_y);
    let base_seed = seed ^ name_hash(task.name);

    let per_fold: Vec<(Vec<(usize, f64)>, Option<EnsembleModel>)> = (0..folds)
        .into_par_iter()
        .map(|j| {
            let eval_rows: Vec<usize> = (0..task.eval.nrows()).filter(|&i| task.eval_fold[i] == j).collect();
            if eval_rows.is_empty() {
                return Ok((Vec::new(), None));
            }
            let rows: Vec<usize> =
                (0..candidates.len()).filter(|&k| folds == 1 || task.row_fold[candidates[k]] != j).collect();
            if rows.is_empty() {
                return Err(Error::EmptyTrainingSubset(task.name.to_string()));
            }
            let fold_seed = base_seed.wrapping_add((j as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let model = fit_ensemble_grouped(stack, &groups, &rows, task.family, fold_seed)?;
            let mut buf = Vec::new();
            let preds = eval_rows.iter().map(|&i| (i, model.predict_row(task.eval.row(i), &mut buf))).collect();
            Ok((preds, Some(model)))
        })
        .collect::<Result<_>>()?;

    let mut out = vec![f64::NAN; task.eval.nrows()];
    let mut models = Vec::with_capacity(folds);
    for (preds, model) in per_fold {
        for (i, v) in preds {
            out[i] = v;
        }
        models.push(model);
    }
    Ok((out, models))
}
