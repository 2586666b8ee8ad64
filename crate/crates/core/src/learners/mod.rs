//! Regression learners and the convex stacking ensemble used for every
//! nuisance regression.

mod design;
mod ensemble;
pub mod glm;
pub mod lasso;
mod matrix;

use serde::{Deserialize, Serialize};

pub use design::{expand_features, Design, DesignSpec, Expansion};
pub use ensemble::{fit_ensemble, EnsembleModel};
pub(crate) use ensemble::fit_ensemble_grouped;
pub use glm::fit_glm;
pub use lasso::{fit_lasso, LassoOptions};
pub use matrix::{Cells, Groups, Matrix};

use crate::error::{Error, Result};

/// Default truncation for binomial predictions: [1e-3, 1 - 1e-3].
pub const DEFAULT_PROB_BOUND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Binomial,
    Gaussian,
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Loss of a constant prediction over one cell: squared error (gaussian) or
/// negative log-likelihood (binomial).
pub(crate) fn cell_loss(family: Family, weight: f64, sum_y: f64, sum_yy: f64, pred: f64) -> f64 {
    match family {
        Family::Gaussian => (sum_yy - 2.0 * pred * sum_y + weight * pred * pred).max(0.0),
        Family::Binomial => -(sum_y * pred.ln() + (weight - sum_y) * (1.0 - pred).ln()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub family: Family,
    pub coefficients: Vec<f64>,
    /// `None` when the model was fit directly on an expanded design.
    pub design: Option<Design>,
    pub lambda: Option<f64>,
}

impl FittedModel {
    pub(crate) fn raw(family: Family, coefficients: Vec<f64>) -> Self {
        Self { family, coefficients, design: None, lambda: None }
    }

    fn arity(&self) -> usize {
        self.design.as_ref().map_or(self.coefficients.len(), Design::arity)
    }

    fn response(&self, eta: f64, bound: f64) -> f64 {
        match self.family {
            Family::Gaussian => eta,
            Family::Binomial => expit(eta).clamp(bound, 1.0 - bound),
        }
    }

    /// Prediction for one row of base columns; `buf` is scratch space.
    pub(crate) fn predict_row(&self, row: &[f64], bound: f64, buf: &mut Vec<f64>) -> f64 {
        let eta: f64 = match &self.design {
            Some(d) => {
                buf.clear();
                d.expand_row(row, buf);
                buf.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
            }
            None => row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum(),
        };
        self.response(eta, bound)
    }

    /// Predictions on the response scale; binomial outputs are truncated to
    /// `[bound, 1 - bound]`.
    pub fn predict_bounded(&self, rows: &Matrix, bound: f64) -> Result<Vec<f64>> {
        if rows.ncols() != self.arity() {
            return Err(Error::ArityMismatch { expected: self.arity(), got: rows.ncols() });
        }
        let mut buf = Vec::new();
        Ok(rows.rows().map(|r| self.predict_row(r, bound, &mut buf)).collect())
    }

    pub fn predict(&self, rows: &Matrix) -> Result<Vec<f64>> {
        self.predict_bounded(rows, DEFAULT_PROB_BOUND)
    }

    #[cfg(test)]
    pub(crate) fn predict_raw(&self, x: &Matrix, bound: f64) -> Vec<f64> {
        self.predict_bounded(x, bound).unwrap()
    }
}

/// Members of a learner stack, named as in run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Mean,
    GlmMain,
    GlmTwoway,
    GlmSaturated,
    LassoSaturated,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 5] = [
        LearnerKind::Mean,
        LearnerKind::GlmMain,
        LearnerKind::GlmTwoway,
        LearnerKind::GlmSaturated,
        LearnerKind::LassoSaturated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Mean => "mean",
            LearnerKind::GlmMain => "glm_main",
            LearnerKind::GlmTwoway => "glm_twoway",
            LearnerKind::GlmSaturated => "glm_saturated",
            LearnerKind::LassoSaturated => "lasso_saturated",
        }
    }

    fn expansion(self) -> Expansion {
        match self {
            LearnerKind::Mean => Expansion::MeanOnly,
            LearnerKind::GlmMain => Expansion::MainEffects,
            LearnerKind::GlmTwoway => Expansion::TwoWay,
            LearnerKind::GlmSaturated | LearnerKind::LassoSaturated => Expansion::Saturated,
        }
    }

    /// Fits this learner on `rows` of a grouped training set.
    pub(crate) fn fit_grouped(
        self,
        groups: &Groups,
        rows: &[usize],
        family: Family,
        lasso: &LassoOptions,
    ) -> Result<FittedModel> {
        let cells = groups.cells(rows);
        let (xb, w, y) = cells.compact(&groups.distinct);
        let spec = DesignSpec::new(self.expansion());
        let design = Design::fit(&spec, &xb, Some(&w))?;
        let coefficients = match self {
            LearnerKind::Mean => {
                let total: f64 = w.iter().sum();
                let mean = if total > 0.0 { w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / total } else { 0.0 };
                vec![match family {
                    Family::Gaussian => mean,
                    Family::Binomial => logit(mean.clamp(1e-12, 1.0 - 1e-12)),
                }]
            }
            LearnerKind::LassoSaturated => {
                let xd = design.expand(&groups.distinct)?;
                let (lambda, beta) = lasso::cv_lasso_grouped(&xd, groups, rows, family, None, lasso);
                return Ok(FittedModel { family, coefficients: beta, design: Some(design), lambda: Some(lambda) });
            }
            _ => {
                let x = design.expand(&xb)?;
                glm::irls(&x, &y, &w, family, &glm::GlmOptions::default()).coefficients
            }
        };
        Ok(FittedModel { family, coefficients, design: Some(design), lambda: None })
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownLearner(s.to_string()))
    }
}

/// Learner stack plus the knobs shared by every regression fit with it.
#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    pub members: Vec<LearnerKind>,
    /// Folds used to weight ensemble members.
    pub ensemble_folds: usize,
    pub prob_bound: f64,
    pub lasso: LassoOptions,
}

impl StackConfig {
    /// Members in the given order, duplicates removed.
    pub fn new(members: Vec<LearnerKind>) -> Self {
        let mut seen = Vec::with_capacity(members.len());
        for m in members {
            if !seen.contains(&m) {
                seen.push(m);
            }
        }
        let members = seen;
        Self { members, ensemble_folds: 10, prob_bound: DEFAULT_PROB_BOUND, lasso: LassoOptions::default() }
    }

    pub fn single(kind: LearnerKind) -> Self {
        Self::new(vec![kind])
    }

    /// Main-effects, two-way, saturated and L1-saturated GLMs with the mean model.
    pub fn default_ensemble() -> Self {
        Self::new(vec![
            LearnerKind::Mean,
            LearnerKind::GlmMain,
            LearnerKind::GlmTwoway,
            LearnerKind::GlmSaturated,
            LearnerKind::LassoSaturated,
        ])
    }

    pub fn with_prob_bound(mut self, bound: f64) -> Self {
        self.prob_bound = bound;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coefficients_predict_half_or_zero() {
        let rows = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, -3.0]]);
        let m = FittedModel::raw(Family::Binomial, vec![0.0, 0.0]);
        assert_eq!(m.predict(&rows).unwrap(), vec![0.5, 0.5]);
        let m = FittedModel::raw(Family::Gaussian, vec![0.0, 0.0]);
        assert_eq!(m.predict(&rows).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn binomial_predictions_truncated() {
        let rows = Matrix::from_rows(&[vec![1.0]]);
        let m = FittedModel::raw(Family::Binomial, vec![logit(0.99999)]);
        assert_eq!(m.predict(&rows).unwrap(), vec![0.999]);
        let m = FittedModel::raw(Family::Binomial, vec![-40.0]);
        assert_eq!(m.predict(&rows).unwrap(), vec![0.001]);
    }

    #[test]
    fn arity_mismatch() {
        let m = FittedModel::raw(Family::Gaussian, vec![0.0, 0.0]);
        let rows = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]);
        assert!(matches!(m.predict(&rows), Err(Error::ArityMismatch { expected: 2, got: 3 })));
    }

    #[test]
    fn learner_names_round_trip() {
        for k in LearnerKind::ALL {
            assert_eq!(k.name().parse::<LearnerKind>().unwrap(), k);
        }
        assert!("forest".parse::<LearnerKind>().is_err());
    }

    #[test]
    fn stacks_keep_members_in_order() {
        let s = StackConfig::new(vec![LearnerKind::GlmMain, LearnerKind::GlmSaturated, LearnerKind::GlmMain]);
        assert_eq!(s.members, vec![LearnerKind::GlmMain, LearnerKind::GlmSaturated]);
        assert_eq!(StackConfig::single(LearnerKind::GlmSaturated).members, vec![LearnerKind::GlmSaturated]);
    }
}
