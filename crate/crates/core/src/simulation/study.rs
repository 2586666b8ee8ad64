//! Monte Carlo replication of the estimators over a mechanism.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DgmId;
use crate::data::{Contrast, EffectSpec};
use crate::density_ratio::DEFAULT_RATIO_BOUNDS;
use crate::error::Result;
use crate::estimators::{estimate, EstimationConfig, EstimatorChoice, EstimatorKind, DEFAULT_TMLE_MAX_ITER};
use crate::learners::{LearnerKind, StackConfig};
use crate::nuisance::NuisanceConfig;

/// Cross-fitting folds used for the multivariate mechanisms.
pub const STUDY_FOLDS: usize = 5;

/// Estimation settings for a mechanism: saturated GLMs fit on the full sample
/// (no cross-fitting) for the binary mechanisms, a four-member GLM/lasso
/// ensemble cross-fit over [`STUDY_FOLDS`] folds for the multivariate ones,
/// and the mean model for the (randomized) exposure.
pub fn study_config(dgm: DgmId, estimator: EstimatorChoice, seed: u64) -> EstimationConfig {
    let (stack, folds) = if dgm.is_multivariate() {
        let members = vec![
            LearnerKind::GlmMain,
            LearnerKind::GlmTwoway,
            LearnerKind::GlmSaturated,
            LearnerKind::LassoSaturated,
        ];
        (StackConfig::new(members), STUDY_FOLDS)
    } else {
        (StackConfig::single(LearnerKind::GlmSaturated), 1)
    };
    EstimationConfig {
        estimator,
        nuisance: NuisanceConfig {
            folds,
            stack,
            exposure_stack: StackConfig::single(LearnerKind::Mean),
            ratio_bounds: DEFAULT_RATIO_BOUNDS,
            seed,
        },
        tmle_max_iter: DEFAULT_TMLE_MAX_ITER,
    }
}

/// SplitMix64 finalizer, used to derive independent replicate seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn replicate_seed(master: u64, n: usize, rep: usize, stream: u64) -> u64 {
    mix(mix(mix(master ^ stream) ^ n as u64) ^ rep as u64)
}

/// One estimate from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub rep: usize,
    pub estimator: EstimatorKind,
    pub effect: Contrast,
    pub point: f64,
    pub se: f64,
    pub covered: bool,
    pub tmle_converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub dgm: DgmId,
    pub n: usize,
    pub estimator: EstimatorKind,
    pub effect: Contrast,
    pub reps: usize,
    pub abs_bias: f64,
    pub sqrt_n_abs_bias: f64,
    pub coverage95: f64,
    pub mean_se: f64,
    pub failures: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub replicates: Vec<ReplicateRecord>,
}

pub const STUDY_CSV_HEADER: &str =
    "dgm,n,estimator,effect,reps,abs_bias,sqrt_n_abs_bias,coverage95,mean_se,failures,seed";

impl StudyResult {
    pub fn row(&self, n: usize, estimator: EstimatorKind, effect: Contrast) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.n == n && r.estimator == estimator && r.effect == effect)
    }

    /// Successful replicate records of one cell.
    pub fn records(&self, n: usize, estimator: EstimatorKind, effect: Contrast) -> Vec<&ReplicateRecord> {
        self.replicates.iter().filter(|r| r.n == n && r.estimator == estimator && r.effect == effect).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(STUDY_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.dgm.name(),
                r.n,
                r.estimator.name(),
                r.effect.name(),
                r.reps,
                r.abs_bias,
                r.sqrt_n_abs_bias,
                r.coverage95,
                r.mean_se,
                r.failures,
                r.seed
            );
        }
        out
    }

    /// Human-readable table: one line per (n, estimator) with both effects.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>9} | {:>8} {:>10} {:>8} | {:>8} {:>10} {:>8} | {:>5}",
            "n", "estimator", "IDE bias", "sqrt(n)*b", "cover", "IIE bias", "sqrt(n)*b", "cover", "fail"
        );
        let mut keys: Vec<(usize, EstimatorKind)> = self.rows.iter().map(|r| (r.n, r.estimator)).collect();
        keys.dedup();
        for (n, est) in keys {
            let cell = |c: Contrast| {
                self.row(n, est, c).map_or(" ".repeat(30), |r| {
                    format!("{:>8.4} {:>10.3} {:>8.3}", r.abs_bias, r.sqrt_n_abs_bias, r.coverage95)
                })
            };
            let fails = self.rows.iter().filter(|r| r.n == n && r.estimator == est).map(|r| r.failures).max().unwrap_or(0);
            let _ = writeln!(out, "{:>8} {:>9} | {} | {} | {:>5}", n, est.name(), cell(Contrast::Ide), cell(Contrast::Iie), fails);
        }
        out
    }
}

/// Runs `reps` replicates per sample size, each generating fresh data and
/// estimating both effects with the requested estimators.
pub fn run_study(dgm: DgmId, n_list: &[usize], reps: usize, estimators: EstimatorChoice, seed: u64) -> Result<StudyResult> {
    run_study_with(dgm, n_list, reps, seed, |s| study_config(dgm, estimators, s))
}

/// As [`run_study`] with a custom configuration per replicate seed.
pub fn run_study_with(
    dgm: DgmId,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    config: impl Fn(u64) -> EstimationConfig + Sync,
) -> Result<StudyResult> {
    if reps == 0 {
        return Err(crate::Error::Config("reps must be at least 1".into()));
    }
    let truth = dgm.true_values();
    let spec = EffectSpec::both(dgm.family());
    let kinds = config(0).estimator.kinds();
    let mut rows = Vec::new();
    let mut replicates = Vec::new();
    for &n in n_list {
        let outcomes: Vec<Option<Vec<ReplicateRecord>>> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let data = dgm.generate(n, replicate_seed(seed, n, rep, 0));
                let cfg = config(replicate_seed(seed, n, rep, 1));
                let report = estimate(&data, &spec, &cfg).ok()?;
                Some(
                    report
                        .estimates
                        .iter()
                        .map(|e| {
                            let target = match e.contrast {
                                Contrast::Ide => truth.ide,
                                Contrast::Iie => truth.iie,
                            };
                            ReplicateRecord {
                                n,
                                rep,
                                estimator: e.estimator,
                                effect: e.contrast,
                                point: e.point,
                                se: e.se,
                                covered: e.inference().covers(target),
                                tmle_converged: e.tmle_converged,
                            }
                        })
                        .collect(),
                )
            })
            .collect();
        let failures = outcomes.iter().filter(|o| o.is_none()).count();
        let ok: Vec<ReplicateRecord> = outcomes.into_iter().flatten().flatten().collect();
        for &kind in &kinds {
            for effect in [Contrast::Ide, Contrast::Iie] {
                let target = match effect {
                    Contrast::Ide => truth.ide,
                    Contrast::Iie => truth.iie,
                };
                let cell: Vec<&ReplicateRecord> =
                    ok.iter().filter(|r| r.estimator == kind && r.effect == effect).collect();
                let k = cell.len() as f64;
                let (abs_bias, coverage95, mean_se) = if cell.is_empty() {
                    (f64::NAN, f64::NAN, f64::NAN)
                } else {
                    let mean = cell.iter().map(|r| r.point).sum::<f64>() / k;
                    (
                        (mean - target).abs(),
                        cell.iter().filter(|r| r.covered).count() as f64 / k,
                        cell.iter().map(|r| r.se).sum::<f64>() / k,
                    )
                };
                rows.push(StudyRow {
                    dgm,
                    n,
                    estimator: kind,
                    effect,
                    reps,
                    abs_bias,
                    sqrt_n_abs_bias: (n as f64).sqrt() * abs_bias,
                    coverage95,
                    mean_se,
                    failures,
                    seed,
                });
            }
        }
        replicates.extend(ok);
    }
    Ok(StudyResult { rows, replicates })
}
