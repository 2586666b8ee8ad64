//! One-step and partial-TMLE estimators of the IDE/IIE and their transported
//! versions, with EIF-based inference.

mod eif;
mod tmle;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{scale_outcome, Contrast, Dataset, EffectSpec, EstimandFamily, OutcomeScale, ThetaPair};
use crate::error::{Error, Result};
use crate::nuisance::{fit_nuisance, FitContext, NuisanceConfig, NuisanceFits};

pub use eif::{assemble, assemble_eif, assemble_eif_transported, EifTable};
pub use tmle::{score_threshold, targeting_covariate, tmle_target_b, TmleLog};

pub const Z_95: f64 = 1.96;
pub const DEFAULT_TMLE_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Onestep,
    Tmle,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Onestep => "onestep",
            EstimatorKind::Tmle => "tmle",
        }
    }
}

/// Which estimators to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Onestep,
    Tmle,
    Both,
}

impl EstimatorChoice {
    pub fn kinds(self) -> Vec<EstimatorKind> {
        match self {
            EstimatorChoice::Onestep => vec![EstimatorKind::Onestep],
            EstimatorChoice::Tmle => vec![EstimatorKind::Tmle],
            EstimatorChoice::Both => vec![EstimatorKind::Onestep, EstimatorKind::Tmle],
        }
    }
}

impl std::str::FromStr for EstimatorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onestep" => Ok(Self::Onestep),
            "tmle" => Ok(Self::Tmle),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown estimator `{other}` (expected onestep, tmle or both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    pub estimator: EstimatorChoice,
    pub nuisance: NuisanceConfig,
    pub tmle_max_iter: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { estimator: EstimatorChoice::Both, nuisance: NuisanceConfig::default(), tmle_max_iter: DEFAULT_TMLE_MAX_ITER }
    }
}

/// Point estimate with Wald inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Inference {
    /// Inference for the mean of an influence-function-based estimator.
    fn from_eif(point: f64, eif: &[f64]) -> Self {
        let n = eif.len() as f64;
        let mean = eif.iter().sum::<f64>() / n;
        let var = eif.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        Self { point, se, ci_lo: point - Z_95 * se, ci_hi: point + Z_95 * se }
    }

    fn map(self, level: impl Fn(f64) -> f64, diff: impl Fn(f64) -> f64) -> Self {
        Self { point: level(self.point), se: diff(self.se), ci_lo: level(self.ci_lo), ci_hi: level(self.ci_hi) }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStep {
    pub contrasts: Vec<(Contrast, Inference)>,
    pub components: Vec<(ThetaPair, Inference)>,
}

/// θ̂ = mean(d_y + d_z + d_m + d_w_core) per component; contrasts use the
/// difference of the component EIFs. Results are on the original outcome scale.
pub fn onestep(eifs: &[EifTable], spec: &EffectSpec, scale: &OutcomeScale) -> OneStep {
    let find = |p: ThetaPair| eifs.iter().find(|e| e.pair == p).expect("component assembled");
    let components = eifs
        .iter()
        .map(|e| {
            let inf = Inference::from_eif(e.theta, &e.total);
            (e.pair, inf.map(|v| scale.unscale_level(v), |v| scale.unscale_diff(v)))
        })
        .collect();
    let contrasts = spec
        .contrasts
        .iter()
        .map(|&c| {
            let (p, q) = c.components();
            let (x, y) = (find(p), find(q));
            let eif: Vec<f64> = x.total.iter().zip(&y.total).map(|(a, b)| a - b).collect();
            let inf = Inference::from_eif(x.theta - y.theta, &eif);
            (c, inf.map(|v| scale.unscale_diff(v), |v| scale.unscale_diff(v)))
        })
        .collect();
    OneStep { contrasts, components }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSummary {
    pub frac_gt100: f64,
    /// Nearest-rank 75th percentile.
    pub p75: f64,
    pub max: f64,
}

impl TailSummary {
    pub fn of(ratios: &[f64]) -> Self {
        if ratios.is_empty() {
            return Self { frac_gt100: 0.0, p75: f64::NAN, max: f64::NAN };
        }
        let mut sorted = ratios.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = ((0.75 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            frac_gt100: sorted.iter().filter(|&&r| r > 100.0).count() as f64 / n as f64,
            p75: sorted[rank - 1],
            max: sorted[n - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// (1 − ĉ)/ĉ
    SelectionOdds,
    /// ĥ_M / ĝ(a' | w)
    MediatorWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTail {
    pub pair: ThetaPair,
    pub tail: TailSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub kind: WeightKind,
    pub overall: TailSummary,
    pub components: Vec<ComponentTail>,
}

impl WeightDiagnostics {
    /// Tail summary reported next to a contrast.
    pub fn for_contrast(&self, nf: &NuisanceFits, c: Contrast) -> TailSummary {
        match self.kind {
            WeightKind::SelectionOdds => self.overall,
            WeightKind::MediatorWeight => {
                let (p, q) = c.components();
                let ratios: Vec<f64> = [p, q]
                    .iter()
                    .filter_map(|&pair| nf.component(pair))
                    .flat_map(mediator_weights)
                    .collect();
                TailSummary::of(&ratios)
            }
        }
    }
}

fn mediator_weights(c: &crate::nuisance::ComponentFits) -> Vec<f64> {
    c.h_m.iter().zip(&c.g_aprime).map(|(h, g)| h / g).collect()
}

/// Weight-tail summary: (1 − ĉ)/ĉ when transporting, ĥ_M/ĝ(a'|w) otherwise.
pub fn weight_diagnostics(nf: &NuisanceFits) -> WeightDiagnostics {
    match &nf.c {
        Some(c) => {
            let odds: Vec<f64> = c.iter().map(|c| (1.0 - c) / c).collect();
            WeightDiagnostics { kind: WeightKind::SelectionOdds, overall: TailSummary::of(&odds), components: Vec::new() }
        }
        None => {
            let components: Vec<ComponentTail> = nf
                .components
                .iter()
                .map(|c| ComponentTail { pair: c.pair, tail: TailSummary::of(&mediator_weights(c)) })
                .collect();
            let pooled: Vec<f64> = nf.components.iter().flat_map(mediator_weights).collect();
            WeightDiagnostics { kind: WeightKind::MediatorWeight, overall: TailSummary::of(&pooled), components }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub contrast: Contrast,
    pub estimator: EstimatorKind,
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub tmle_iters: Option<usize>,
    pub tmle_converged: Option<bool>,
    pub wt_frac_gt100: f64,
    pub wt_p75: f64,
}

impl EffectEstimate {
    pub fn inference(&self) -> Inference {
        Inference { point: self.point, se: self.se, ci_lo: self.ci_lo, ci_hi: self.ci_hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimate {
    pub pair: ThetaPair,
    pub estimator: EstimatorKind,
    #[serde(flatten)]
    pub inference: Inference,
    /// Mean of the EIF at the solution (outcome scaled to [0, 1]).
    pub eif_mean: f64,
    pub d_y_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub family: EstimandFamily,
    pub n: usize,
    pub folds: usize,
    pub seed: u64,
    pub outcome_scale: OutcomeScale,
    pub estimates: Vec<EffectEstimate>,
    pub components: Vec<ComponentEstimate>,
    pub diagnostics: WeightDiagnostics,
    pub tmle: Vec<TmleLog>,
    pub warnings: Vec<String>,
}

pub const REPORT_CSV_HEADER: &str =
    "contrast,estimator,point,se,ci_lo,ci_hi,tmle_iters,tmle_converged,wt_frac_gt100,wt_p75";

impl EstimateReport {
    pub fn get(&self, contrast: Contrast, estimator: EstimatorKind) -> Option<&EffectEstimate> {
        self.estimates.iter().find(|e| e.contrast == contrast && e.estimator == estimator)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<String>| v.unwrap_or_default();
        for e in &self.estimates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                e.contrast.name(),
                e.estimator.name(),
                e.point,
                e.se,
                e.ci_lo,
                e.ci_hi,
                opt(e.tmle_iters.map(|v| v.to_string())),
                opt(e.tmle_converged.map(|v| v.to_string())),
                e.wt_frac_gt100,
                e.wt_p75
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

fn check_family(d: &Dataset, spec: &EffectSpec) -> Result<()> {
    if d.family() != spec.family {
        return Err(Error::Config(format!(
            "dataset was loaded as {:?} but the effect spec asks for {:?}",
            d.family(),
            spec.family
        )));
    }
    Ok(())
}

/// Fits the nuisance parameters only (outcome scaled internally).
pub fn fit_for(d: &Dataset, spec: &EffectSpec, config: &EstimationConfig) -> Result<(Dataset, OutcomeScale, NuisanceFits)> {
    check_family(d, spec)?;
    let (scaled, scale) = scale_outcome(d)?;
    let nf = fit_nuisance(&scaled, &spec.components(), &config.nuisance)?;
    Ok((scaled, scale, nf))
}

/// Weight diagnostics without effect estimation.
pub fn diagnose(d: &Dataset, spec: &EffectSpec, config: &EstimationConfig) -> Result<WeightDiagnostics> {
    let (_, _, nf) = fit_for(d, spec, config)?;
    Ok(weight_diagnostics(&nf))
}

/// Full pipeline: folds → density ratios → nuisances → estimators → report.
pub fn estimate(d: &Dataset, spec: &EffectSpec, config: &EstimationConfig) -> Result<EstimateReport> {
    let (scaled, scale, nf) = fit_for(d, spec, config)?;
    let diagnostics = weight_diagnostics(&nf);
    let selection = nf.c.as_deref().zip(nf.t);
    let mut estimates = Vec::new();
    let mut components = Vec::new();
    let mut logs = Vec::new();
    let mut warnings = Vec::new();

    for kind in config.estimator.kinds() {
        let mut eifs = Vec::with_capacity(nf.components.len());
        let mut kind_logs = Vec::new();
        for comp in &nf.components {
            let table = match kind {
                EstimatorKind::Onestep => assemble(&nf, comp, &scaled),
                EstimatorKind::Tmle => {
                    let (b, log) = tmle_target_b(comp, &scaled, selection, config.tmle_max_iter);
                    if !log.converged {
                        warnings.push(format!(
                            "partial TMLE for {} stopped after {} iterations with score {:.3e} > {:.3e}",
                            comp.pair.label(),
                            log.iterations,
                            log.final_score,
                            log.threshold
                        ));
                    }
                    let ctx = FitContext { data: &scaled, folds: &nf.folds, config: &config.nuisance };
                    let targeted = comp.with_outcome(&ctx, b)?;
                    kind_logs.push(log);
                    assemble(&nf, &targeted, &scaled)
                }
            };
            eifs.push(table);
        }
        let result = onestep(&eifs, spec, &scale);
        for (table, (pair, inference)) in eifs.iter().zip(result.components) {
            components.push(ComponentEstimate {
                pair,
                estimator: kind,
                inference,
                eif_mean: table.mean_total(),
                d_y_mean: table.mean_d_y(),
            });
        }
        for (contrast, inf) in result.contrasts {
            let tail = diagnostics.for_contrast(&nf, contrast);
            let (iters, converged) = if kind == EstimatorKind::Tmle {
                let (p, q) = contrast.components();
                let used: Vec<&TmleLog> = kind_logs.iter().filter(|l| l.pair == p || l.pair == q).collect();
                (
                    Some(used.iter().map(|l| l.iterations).max().unwrap_or(0)),
                    Some(used.iter().all(|l| l.converged)),
                )
            } else {
                (None, None)
            };
            estimates.push(EffectEstimate {
                contrast,
                estimator: kind,
                point: inf.point,
                se: inf.se,
                ci_lo: inf.ci_lo,
                ci_hi: inf.ci_hi,
                tmle_iters: iters,
                tmle_converged: converged,
                wt_frac_gt100: tail.frac_gt100,
                wt_p75: tail.p75,
            });
        }
        logs.extend(kind_logs);
    }

    Ok(EstimateReport {
        family: spec.family,
        n: d.n(),
        folds: nf.folds.folds(),
        seed: config.nuisance.seed,
        outcome_scale: scale,
        estimates,
        components,
        diagnostics,
        tmle: logs,
        warnings,
    })
}
