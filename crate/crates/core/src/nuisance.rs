//! Cross-fitted nuisance parameters: g, e, c, t, b and the sequential
//! pseudo-outcome regressions u, ū, v, v̄.

use serde::{Deserialize, Serialize};

use crate::crossfit::{crossfit_predict, make_folds, make_folds_stratified, CrossFitTask, FoldAssignment};
use crate::data::{Block, Dataset, EstimandFamily, ThetaPair};
use crate::density_ratio::{augment, compute_hm, estimate_hz, DEFAULT_RATIO_BOUNDS};
use crate::error::Result;
use crate::learners::{Family, Matrix, StackConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceConfig {
    pub folds: usize,
    /// Stack for every regression except the exposure model.
    pub stack: StackConfig,
    pub exposure_stack: StackConfig,
    pub ratio_bounds: (f64, f64),
    pub seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        let stack = StackConfig::default_ensemble();
        Self { folds: 10, exposure_stack: stack.clone(), stack, ratio_bounds: DEFAULT_RATIO_BOUNDS, seed: 0 }
    }
}

/// Shared inputs of every fit on one dataset.
#[derive(Debug, Clone, Copy)]
pub struct FitContext<'a> {
    pub data: &'a Dataset,
    pub folds: &'a FoldAssignment,
    pub config: &'a NuisanceConfig,
}

impl<'a> FitContext<'a> {
    fn fit(&self, name: &str, family: Family, stack: &StackConfig, fit: Fit<'_>) -> Result<Vec<f64>> {
        let task = CrossFitTask {
            name,
            family,
            x: &fit.x,
            y: fit.y,
            train: &fit.train,
            row_fold: self.folds.fold_of(),
            eval: &fit.eval,
            eval_fold: fit.eval_fold.unwrap_or(self.folds.fold_of()),
        };
        crossfit_predict(&task, self.folds.folds(), stack, self.config.seed)
    }
}

struct Fit<'a> {
    x: Matrix,
    y: &'a [f64],
    train: Vec<bool>,
    eval: Matrix,
    eval_fold: Option<&'a [usize]>,
}

/// Folds for a dataset; transported data are stratified on S.
pub fn folds_for(d: &Dataset, folds: usize, seed: u64) -> Result<FoldAssignment> {
    match (d.family(), d.s()) {
        (EstimandFamily::Transported, Some(s)) => make_folds_stratified(s, folds, seed),
        _ => make_folds(d.n(), folds, seed),
    }
}

/// ĝ(1 | w) per row, trained on the target population.
pub fn fit_exposure(ctx: &FitContext<'_>) -> Result<Vec<f64>> {
    let d = ctx.data;
    let x = d.matrix(&[Block::W], None);
    let fit = Fit { eval: x.clone(), x, y: d.a(), train: d.target_mask(), eval_fold: None };
    ctx.fit("g", Family::Binomial, &ctx.config.exposure_stack, fit)
}

/// ê(1 | m, w) per row, trained on the target population.
pub fn fit_e(ctx: &FitContext<'_>) -> Result<Vec<f64>> {
    let d = ctx.data;
    let x = d.matrix(&[Block::M, Block::W], None);
    let fit = Fit { eval: x.clone(), x, y: d.a(), train: d.target_mask(), eval_fold: None };
    ctx.fit("e", Family::Binomial, &ctx.config.stack, fit)
}

/// ĉ(a, z, m, w) = P(S = 1 | A, Z, M, W) per row, and t̂ = share of S = 0.
pub fn fit_selection(ctx: &FitContext<'_>) -> Result<(Vec<f64>, f64)> {
    let d = ctx.data;
    let s = d.s().ok_or(crate::Error::MissingSiteRole)?;
    let x = d.matrix(&[Block::A, Block::Z, Block::M, Block::W], None);
    let fit = Fit { eval: x.clone(), x, y: s, train: vec![true; d.n()], eval_fold: None };
    let c = ctx.fit("c", Family::Binomial, &ctx.config.stack, fit)?;
    let t = s.iter().filter(|&&v| v == 0.0).count() as f64 / d.n() as f64;
    Ok((c, t))
}

/// b̂(a', Z_i, M_i, W_i) per row for each requested a' from one set of fold models.
fn fit_outcome_levels(ctx: &FitContext<'_>, levels: &[u8]) -> Result<Vec<Vec<f64>>> {
    let d = ctx.data;
    let n = d.n();
    let blocks = [Block::A, Block::Z, Block::M, Block::W];
    let x = d.matrix(&blocks, None);
    let y = d.y();
    let train: Vec<bool> = match (d.family(), d.s()) {
        (EstimandFamily::Transported, Some(s)) => s.iter().map(|&v| v == 1.0).collect(),
        _ => vec![true; n],
    };
    let train: Vec<bool> = train.iter().zip(y).map(|(&t, v)| t && v.is_finite()).collect();
    let mut eval = Matrix::with_cols(x.ncols());
    let mut eval_fold = Vec::with_capacity(n * levels.len());
    for &a in levels {
        let xa = d.matrix(&blocks, Some(f64::from(a)));
        for i in 0..n {
            eval.push_row(xa.row(i));
        }
        eval_fold.extend_from_slice(ctx.folds.fold_of());
    }
    let fit = Fit { x, y, train, eval, eval_fold: Some(&eval_fold) };
    let pred = ctx.fit("b", Family::Binomial, &ctx.config.stack, fit)?;
    Ok(pred.chunks(n).map(<[f64]>::to_vec).collect())
}

/// b̂ evaluated at A = a'. The outcome must already lie in [0, 1].
pub fn fit_outcome_b(ctx: &FitContext<'_>, a_prime: u8) -> Result<Vec<f64>> {
    Ok(fit_outcome_levels(ctx, &[a_prime])?.remove(0))
}

/// Regresses `y` on `blocks` over the target population and predicts with A set to `a_eval`.
fn pseudo_regression(ctx: &FitContext<'_>, name: &str, y: &[f64], blocks: &[Block], a_eval: u8) -> Result<Vec<f64>> {
    let d = ctx.data;
    let fit = Fit {
        x: d.matrix(blocks, None),
        y,
        train: d.target_mask(),
        eval: d.matrix(blocks, Some(f64::from(a_eval))),
        eval_fold: None,
    };
    ctx.fit(name, Family::Gaussian, &ctx.config.stack, fit)
}

/// u = E[b h_M | Z, A = a', W] and ū = E[u | A = a', W].
pub fn fit_u_ubar(ctx: &FitContext<'_>, b: &[f64], h_m: &[f64], a_prime: u8) -> Result<(Vec<f64>, Vec<f64>)> {
    let pseudo: Vec<f64> = b.iter().zip(h_m).map(|(b, h)| b * h).collect();
    let u = pseudo_regression(ctx, &format!("u_{a_prime}"), &pseudo, &[Block::Z, Block::A, Block::W], a_prime)?;
    let ubar = pseudo_regression(ctx, &format!("ubar_{a_prime}"), &u, &[Block::A, Block::W], a_prime)?;
    Ok((u, ubar))
}

/// v = E[b h_Z | M, A = a', W] and v̄ = E[v | A = a*, W].
pub fn fit_v_vbar(
    ctx: &FitContext<'_>,
    b: &[f64],
    h_z: &[f64],
    a_prime: u8,
    a_star: u8,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pseudo: Vec<f64> = b.iter().zip(h_z).map(|(b, h)| b * h).collect();
    let v = pseudo_regression(ctx, &format!("v_{a_prime}"), &pseudo, &[Block::M, Block::A, Block::W], a_prime)?;
    let vbar =
        pseudo_regression(ctx, &format!("vbar_{a_prime}{a_star}"), &v, &[Block::A, Block::W], a_star)?;
    Ok((v, vbar))
}

/// Every per-observation nuisance value needed by one θ(a', a*).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFits {
    pub pair: ThetaPair,
    pub g_aprime: Vec<f64>,
    pub g_astar: Vec<f64>,
    pub e_aprime: Vec<f64>,
    pub e_astar: Vec<f64>,
    pub b: Vec<f64>,
    pub h_z: Vec<f64>,
    pub h_m: Vec<f64>,
    pub u: Vec<f64>,
    pub ubar: Vec<f64>,
    pub v: Vec<f64>,
    pub vbar: Vec<f64>,
}

impl ComponentFits {
    /// Recomputes the sequential regressions from a new outcome regression.
    pub fn with_outcome(&self, ctx: &FitContext<'_>, b: Vec<f64>) -> Result<Self> {
        let (ap, ast) = (self.pair.a_prime, self.pair.a_star);
        let (u, ubar) = fit_u_ubar(ctx, &b, &self.h_m, ap)?;
        let (v, vbar) = fit_v_vbar(ctx, &b, &self.h_z, ap, ast)?;
        Ok(Self { b, u, ubar, v, vbar, ..self.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFits {
    pub family: EstimandFamily,
    pub folds: FoldAssignment,
    /// ĝ(1 | w).
    pub g1: Vec<f64>,
    /// ê(1 | m, w).
    pub e1: Vec<f64>,
    /// ĉ(a, z, m, w); transported only.
    pub c: Option<Vec<f64>>,
    /// t̂ = P(S = 0); transported only.
    pub t: Option<f64>,
    pub components: Vec<ComponentFits>,
}

impl NuisanceFits {
    pub fn component(&self, pair: ThetaPair) -> Option<&ComponentFits> {
        self.components.iter().find(|c| c.pair == pair)
    }
}

fn level(p1: &[f64], a: u8) -> Vec<f64> {
    if a == 1 {
        p1.to_vec()
    } else {
        p1.iter().map(|p| 1.0 - p).collect()
    }
}

/// Fits everything for the requested components. `d` must carry an outcome on [0, 1].
pub fn fit_nuisance(d: &Dataset, pairs: &[ThetaPair], config: &NuisanceConfig) -> Result<NuisanceFits> {
    let folds = folds_for(d, config.folds, config.seed)?;
    let ctx = FitContext { data: d, folds: &folds, config };
    let g1 = fit_exposure(&ctx)?;
    let e1 = fit_e(&ctx)?;
    let (c, t) = match d.family() {
        EstimandFamily::Transported => {
            let (c, t) = fit_selection(&ctx)?;
            (Some(c), Some(t))
        }
        EstimandFamily::Nontransported => (None, None),
    };

    let mut levels: Vec<u8> = pairs.iter().map(|p| p.a_prime).collect();
    levels.sort_unstable();
    levels.dedup();
    let b_levels = fit_outcome_levels(&ctx, &levels)?;
    let aug = augment(d, &folds, config.seed.wrapping_add(1));
    let mut h_z_levels = Vec::with_capacity(levels.len());
    for &a in &levels {
        h_z_levels.push(estimate_hz(d, &aug, a, &config.stack, &folds, config.ratio_bounds)?);
    }

    let mut components = Vec::with_capacity(pairs.len());
    for &pair in pairs {
        let k = levels.iter().position(|&a| a == pair.a_prime).expect("level collected above");
        let (g_aprime, g_astar) = (level(&g1, pair.a_prime), level(&g1, pair.a_star));
        let (e_aprime, e_astar) = (level(&e1, pair.a_prime), level(&e1, pair.a_star));
        let h_z = h_z_levels[k].clone();
        let h_m: Vec<f64> = compute_hm(&h_z, &g_aprime, &g_astar, &e_aprime, &e_astar)
            .into_iter()
            .map(|h| h.clamp(config.ratio_bounds.0, config.ratio_bounds.1))
            .collect();
        let b = b_levels[k].clone();
        let (u, ubar) = fit_u_ubar(&ctx, &b, &h_m, pair.a_prime)?;
        let (v, vbar) = fit_v_vbar(&ctx, &b, &h_z, pair.a_prime, pair.a_star)?;
        components.push(ComponentFits { pair, g_aprime, g_astar, e_aprime, e_astar, b, h_z, h_m, u, ubar, v, vbar });
    }
    Ok(NuisanceFits { family: d.family(), folds, g1, e1, c, t, components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VariableRoles;
    use crate::learners::LearnerKind;
    use crate::simulation::{gcomp_oracle, DgmId, ExactModel};

    fn config(members: StackConfig, folds: usize) -> NuisanceConfig {
        NuisanceConfig {
            folds,
            stack: members,
            exposure_stack: StackConfig::single(LearnerKind::Mean),
            ratio_bounds: DEFAULT_RATIO_BOUNDS,
            seed: 7,
        }
    }

    fn saturated(folds: usize) -> NuisanceConfig {
        config(StackConfig::single(LearnerKind::GlmSaturated), folds)
    }

    fn small(a: Vec<f64>, m: Vec<f64>, y: Vec<f64>) -> Dataset {
        let n = a.len();
        let roles = VariableRoles {
            s: None,
            w: vec!["w".into()],
            a: "a".into(),
            z: vec!["z".into()],
            m: vec!["m".into()],
            y: "y".into(),
        };
        let w: Vec<f64> = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let z: Vec<f64> = (0..n).map(|i| (i % 5 < 2) as u8 as f64).collect();
        let cols = [("w", w), ("a", a), ("z", z), ("m", m), ("y", y)];
        Dataset::new(cols.into_iter().map(|(k, v)| (k.to_string(), v)), roles, EstimandFamily::Nontransported)
            .unwrap()
    }

    #[test]
    fn exposure_truncated_when_always_treated() {
        let n = 50;
        let d = small(vec![1.0; n], (0..n).map(|i| (i % 2) as f64).collect(), vec![0.5; n]);
        let cfg = saturated(5);
        let folds = folds_for(&d, 5, 0).unwrap();
        let ctx = FitContext { data: &d, folds: &folds, config: &cfg };
        let g = fit_exposure(&ctx).unwrap();
        assert!(g.iter().all(|&p| p == 0.999));
    }

    #[test]
    fn mean_exposure_model_is_closed_form() {
        let d = DgmId::BinaryNt.generate(10_000, 1);
        let cfg = saturated(5);
        let folds = folds_for(&d, 5, 0).unwrap();
        let ctx = FitContext { data: &d, folds: &folds, config: &cfg };
        let g = fit_exposure(&ctx).unwrap();
        let a = d.a();
        for j in 0..5 {
            let train: Vec<usize> = (0..d.n()).filter(|&i| folds.fold_of()[i] != j).collect();
            let mean = train.iter().map(|&i| a[i]).sum::<f64>() / train.len() as f64;
            for i in folds.validation(j) {
                assert!((g[i] - mean).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn outcome_copies_deterministic_mediator() {
        let n = 300;
        let m: Vec<f64> = (0..n).map(|i| ((i * 7) % 4 < 2) as u8 as f64).collect();
        let a: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let d = small(a, m.clone(), m.clone());
        let cfg = saturated(5);
        let folds = folds_for(&d, 5, 0).unwrap();
        let ctx = FitContext { data: &d, folds: &folds, config: &cfg };
        let b = fit_outcome_b(&ctx, 1).unwrap();
        for i in 0..n {
            assert!((b[i] - m[i]).abs() < 0.01, "{} vs {}", b[i], m[i]);
        }
    }

    #[test]
    fn constant_pseudo_outcomes() {
        let n = 200;
        let a: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let m: Vec<f64> = (0..n).map(|i| (i % 7 < 3) as u8 as f64).collect();
        let d = small(a, m, vec![0.7; n]);
        let cfg = saturated(4);
        let folds = folds_for(&d, 4, 0).unwrap();
        let ctx = FitContext { data: &d, folds: &folds, config: &cfg };
        let b = fit_outcome_b(&ctx, 1).unwrap();
        assert!(b.iter().all(|v| (v - 0.7).abs() < 1e-6));
        let ones = vec![1.0; n];
        let k = vec![0.35; n];
        let (u, ubar) = fit_u_ubar(&ctx, &k, &ones, 1).unwrap();
        let (v, vbar) = fit_v_vbar(&ctx, &k, &ones, 1, 0).unwrap();
        for arr in [&u, &ubar, &v, &vbar] {
            assert!(arr.iter().all(|x| (x - 0.35).abs() < 1e-6));
        }
    }

    #[test]
    fn selection_share() {
        let d = DgmId::BinaryT.generate(100, 3);
        let cfg = saturated(5);
        let folds = folds_for(&d, 5, 0).unwrap();
        let ctx = FitContext { data: &d, folds: &folds, config: &cfg };
        let (_, t) = fit_selection(&ctx).unwrap();
        let zeros = d.s().unwrap().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(t, zeros as f64 / 100.0);
    }

    #[test]
    fn binary_nt_fits_match_oracle() {
        let n = 10_000;
        let dgm = DgmId::BinaryNt;
        let d = dgm.generate(n, 31);
        let ex = ExactModel::new(dgm);
        let pairs = [ThetaPair::new(1, 0), ThetaPair::new(0, 0), ThetaPair::new(1, 1)];
        let nf = fit_nuisance(&d, &pairs, &saturated(5)).unwrap();
        let (z, m, w) = (d.z()[0], d.m()[0], d.w()[0]);
        let mae = |f: &dyn Fn(usize) -> (f64, f64)| (0..n).map(|i| { let (a, b) = f(i); (a - b).abs() }).sum::<f64>() / n as f64;

        assert!(mae(&|i| (nf.e1[i], ex.e1(&[m[i]], w[i]))) < 0.05);
        assert!(nf.g1.iter().all(|g| (g - 0.5).abs() < 0.03));
        for comp in &nf.components {
            let p = comp.pair;
            assert_eq!(comp.g_aprime.len(), n);
            for arr in [&comp.b, &comp.u, &comp.ubar, &comp.v, &comp.vbar, &comp.h_m] {
                assert!(arr.iter().all(|v| v.is_finite()));
            }
            if p.a_prime != p.a_star {
                assert!(comp.g_aprime.iter().zip(&comp.g_astar).all(|(a, b)| a + b == 1.0));
            }
            assert!(mae(&|i| (comp.b[i], ex.b(&[z[i]], &[m[i]], w[i]))) < 0.03, "{p:?} b");
            assert!(mae(&|i| (comp.ubar[i], ex.ubar(p, w[i]))) < 0.05, "{p:?} ubar");
            let mean_vbar = comp.vbar.iter().sum::<f64>() / n as f64;
            let theta = gcomp_oracle(dgm, p.a_prime, p.a_star);
            assert!((mean_vbar - theta).abs() < 0.01, "{p:?}: {mean_vbar} vs {theta}");
        }
    }

    #[test]
    fn transported_selection_matches_oracle() {
        let n = 10_000;
        let dgm = DgmId::BinaryT;
        let d = dgm.generate(n, 41);
        let ex = ExactModel::new(dgm);
        let cfg = saturated(5);
        let folds = folds_for(&d, 5, 0).unwrap();
        let ctx = FitContext { data: &d, folds: &folds, config: &cfg };
        let (c, t) = fit_selection(&ctx).unwrap();
        assert!(t > 0.0 && t < 1.0);
        let (a, z, m, w) = (d.a(), d.z()[0], d.m()[0], d.w()[0]);
        let mae = (0..n).map(|i| (c[i] - ex.c(a[i], &[z[i]], &[m[i]], w[i])).abs()).sum::<f64>() / n as f64;
        assert!(mae < 0.05, "{mae}");
    }
}
