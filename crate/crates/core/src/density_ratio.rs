//! h_Z and h_M through classification on a duplicated dataset.
//!
//! The copy with Λ = 1 has its mediator block replaced by whole M-rows drawn
//! from the empirical distribution. Then odds(Λ=1 | a', z, m, w) estimates
//! p̃(m) / p(m | a', z, w) and odds(Λ=0 | a', m, w) estimates p(m | a', w) / p̃(m);
//! their product is p(m | a', w) / p(m | a', z, w) = q(z | a', w) / r(z | a', m, w).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crossfit::{crossfit_predict, CrossFitTask, FoldAssignment};
use crate::data::{Block, Dataset};
use crate::error::Result;
use crate::learners::{Family, Matrix, StackConfig};

/// Default truncation of the final ratios.
pub const DEFAULT_RATIO_BOUNDS: (f64, f64) = (1e-3, 1e3);

/// Rows `0..n` are verbatim copies (Λ = 0); rows `n..2n` carry resampled M.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    lambda: Vec<f64>,
    original_index: Vec<usize>,
    m: Matrix,
    fold_of: Vec<usize>,
    seed: u64,
}

impl AugmentedDataset {
    pub fn nrows(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn original_index(&self) -> &[usize] {
        &self.original_index
    }

    /// Mediator block of every augmented row.
    pub fn m(&self) -> &Matrix {
        &self.m
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

pub fn augment(d: &Dataset, folds: &FoldAssignment, seed: u64) -> AugmentedDataset {
    let n = d.n();
    let m_obs = d.matrix(&[Block::M], None);
    let pool: Vec<usize> = d.target_mask().iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::with_cols(m_obs.ncols());
    for i in 0..n {
        m.push_row(m_obs.row(i));
    }
    for _ in 0..n {
        let j = pool[rng.random_range(0..pool.len())];
        m.push_row(m_obs.row(j));
    }
    let lambda = (0..2 * n).map(|i| if i < n { 0.0 } else { 1.0 }).collect();
    let original_index = (0..n).chain(0..n).collect();
    AugmentedDataset { lambda, original_index, m, fold_of: folds.duplicated(), seed }
}

/// Predictor rows `[Z?, M, W]` for augmented rows, with M taken from the augmentation.
fn augmented_predictors(d: &Dataset, aug: &AugmentedDataset, with_z: bool) -> Matrix {
    let zw = d.matrix(if with_z { &[Block::Z, Block::W] } else { &[Block::W] }, None);
    let nz = if with_z { d.z().len() } else { 0 };
    let mut x = Matrix::with_cols(zw.ncols() + aug.m.ncols());
    let mut row = Vec::with_capacity(x.ncols());
    for r in 0..aug.nrows() {
        let orig = zw.row(aug.original_index[r]);
        row.clear();
        row.extend_from_slice(&orig[..nz]);
        row.extend_from_slice(aug.m.row(r));
        row.extend_from_slice(&orig[nz..]);
        x.push_row(&row);
    }
    x
}

/// Cross-fitted h_Z(Z_i, M_i, W_i) at A = a' for every observation, truncated to `bounds`.
///
/// Both classifiers condition on A = a' (and S = 0 when transporting) by
/// restricting their training rows, so A itself is not a predictor.
pub fn estimate_hz(
    d: &Dataset,
    aug: &AugmentedDataset,
    a_prime: u8,
    stack: &StackConfig,
    folds: &FoldAssignment,
    bounds: (f64, f64),
) -> Result<Vec<f64>> {
    let target = d.target_mask();
    let a = d.a();
    let train: Vec<bool> =
        aug.original_index.iter().map(|&i| target[i] && a[i] == f64::from(a_prime)).collect();
    let odds = |with_z: bool| -> Result<Vec<f64>> {
        let x = augmented_predictors(d, aug, with_z);
        let eval = d.matrix(if with_z { &[Block::Z, Block::M, Block::W] } else { &[Block::M, Block::W] }, None);
        let name = format!("lambda_{}_{a_prime}", if with_z { "zmw" } else { "mw" });
        let task = CrossFitTask {
            name: &name,
            family: Family::Binomial,
            x: &x,
            y: &aug.lambda,
            train: &train,
            row_fold: &aug.fold_of,
            eval: &eval,
            eval_fold: folds.fold_of(),
        };
        let p = crossfit_predict(&task, folds.folds(), stack, aug.seed)?;
        Ok(p.into_iter().map(|p| p / (1.0 - p)).collect())
    };
    let full = odds(true)?;
    let marginal = odds(false)?;
    Ok(full.iter().zip(&marginal).map(|(f, m)| (f / m).clamp(bounds.0, bounds.1)).collect())
}

/// h_M = h_Z · g(a'|w)/g(a*|w) · e(a*|m,w)/e(a'|m,w), elementwise.
pub fn compute_hm(h_z: &[f64], g_aprime: &[f64], g_astar: &[f64], e_aprime: &[f64], e_astar: &[f64]) -> Vec<f64> {
    (0..h_z.len()).map(|i| h_z[i] * g_aprime[i] / g_astar[i] * e_astar[i] / e_aprime[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossfit::make_folds;
    use crate::data::{EstimandFamily, VariableRoles};
    use crate::learners::LearnerKind;
    use crate::simulation::{DgmId, ExactModel};

    fn table(cols: Vec<(&str, Vec<f64>)>, family: EstimandFamily) -> Dataset {
        let roles = VariableRoles {
            s: None,
            w: vec!["w".into()],
            a: "a".into(),
            z: vec!["z".into()],
            m: vec!["m".into()],
            y: "y".into(),
        };
        Dataset::new(cols.into_iter().map(|(k, v)| (k.to_string(), v)), roles, family).unwrap()
    }

    fn saturated() -> StackConfig {
        StackConfig::single(LearnerKind::GlmSaturated)
    }

    #[test]
    fn augmentation_shape() {
        let d = table(
            vec![
                ("w", vec![0.0, 1.0, 0.0]),
                ("a", vec![1.0, 0.0, 1.0]),
                ("z", vec![1.0, 1.0, 0.0]),
                ("m", vec![0.0, 1.0, 1.0]),
                ("y", vec![0.0, 1.0, 1.0]),
            ],
            EstimandFamily::Nontransported,
        );
        let folds = make_folds(3, 3, 0).unwrap();
        let aug = augment(&d, &folds, 4);
        assert_eq!(aug.nrows(), 6);
        assert_eq!(aug.lambda().iter().sum::<f64>(), 3.0);
        for i in 0..3 {
            assert_eq!(aug.m().row(i), &[d.m()[0][i]]);
            assert_eq!(aug.fold_of()[i + 3], folds.fold_of()[i]);
            assert_eq!(aug.original_index()[i + 3], i);
        }
        let again = augment(&d, &folds, 4);
        assert_eq!(aug.m(), again.m());
    }

    #[test]
    fn constant_mediator_gives_unit_ratio() {
        let n = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bit = || f64::from(u8::from(rng.random_bool(0.5)));
        let cols = vec![
            ("w", (0..n).map(|_| bit()).collect()),
            ("a", (0..n).map(|_| bit()).collect()),
            ("z", (0..n).map(|_| bit()).collect()),
            ("m", vec![1.0; n]),
            ("y", (0..n).map(|_| bit()).collect()),
        ];
        let d = table(cols, EstimandFamily::Nontransported);
        let folds = make_folds(n, 5, 0).unwrap();
        let aug = augment(&d, &folds, 1);
        for i in 0..n {
            assert_eq!(aug.m().row(n + i), &[1.0]);
        }
        let h = estimate_hz(&d, &aug, 1, &saturated(), &folds, DEFAULT_RATIO_BOUNDS).unwrap();
        assert!(h.iter().all(|v| (v - 1.0).abs() < 1e-6), "{:?}", &h[..5]);
    }

    #[test]
    fn independence_gives_unit_ratio() {
        let n = 5000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut w, mut a, mut z, mut m) = (vec![], vec![], vec![], vec![]);
        for _ in 0..n {
            let wi = f64::from(u8::from(rng.random_bool(0.4)));
            let ai = f64::from(u8::from(rng.random_bool(0.5)));
            // Z and M each depend on (A, W) but not on each other
            z.push(f64::from(u8::from(rng.random_bool(0.2 + 0.3 * ai + 0.2 * wi))));
            m.push(f64::from(u8::from(rng.random_bool(0.7 - 0.4 * ai + 0.1 * wi))));
            w.push(wi);
            a.push(ai);
        }
        let y = z.clone();
        let d = table(vec![("w", w), ("a", a), ("z", z), ("m", m), ("y", y)], EstimandFamily::Nontransported);
        let folds = make_folds(n, 5, 3).unwrap();
        let aug = augment(&d, &folds, 3);
        let h = estimate_hz(&d, &aug, 1, &saturated(), &folds, DEFAULT_RATIO_BOUNDS).unwrap();
        let mad = h.iter().map(|v| (v - 1.0).abs()).sum::<f64>() / n as f64;
        assert!(mad < 0.1, "mean abs deviation {mad}");
    }

    #[test]
    fn matches_enumeration_oracle() {
        // the error of a single fit is noisy at this n, so average a few replicates
        let n = 10_000;
        let dgm = DgmId::BinaryNt;
        let ex = ExactModel::new(dgm);
        let reps = 3;
        for a_prime in [0u8, 1] {
            let mut total = 0.0;
            for rep in 0..reps {
                let d = dgm.generate(n, 21 + rep);
                let folds = make_folds(n, 5, 21 + rep).unwrap();
                let aug = augment(&d, &folds, 22 + rep);
                let h = estimate_hz(&d, &aug, a_prime, &saturated(), &folds, DEFAULT_RATIO_BOUNDS).unwrap();
                assert!(h.iter().all(|v| *v > 0.0 && v.is_finite()));
                let (z, m, w) = (d.z()[0], d.m()[0], d.w()[0]);
                total += (0..n)
                    .map(|i| (h[i] - ex.h_z(f64::from(a_prime), &[z[i]], &[m[i]], w[i])).abs())
                    .sum::<f64>()
                    / n as f64;
            }
            let mae = total / reps as f64;
            assert!(mae < 0.05, "a'={a_prime}: mae {mae}");
        }
    }

    #[test]
    fn classifier_base_rate_is_half() {
        let n = 4000;
        let d = DgmId::BinaryNt.generate(n, 5);
        let folds = make_folds(n, 5, 5).unwrap();
        let aug = augment(&d, &folds, 6);
        let x = augmented_predictors(&d, &aug, true);
        let train = vec![true; 2 * n];
        let task = CrossFitTask {
            name: "base",
            family: Family::Binomial,
            x: &x,
            y: aug.lambda(),
            train: &train,
            row_fold: aug.fold_of(),
            eval: &x,
            eval_fold: aug.fold_of(),
        };
        let p = crossfit_predict(&task, 5, &saturated(), 0).unwrap();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn h_m_arithmetic() {
        let hm = compute_hm(&[2.0], &[0.5], &[0.5], &[0.75], &[0.25]);
        assert!((hm[0] - 2.0 / 3.0).abs() < 1e-15);
        // a' = a* leaves h_Z untouched
        let hz = [0.3, 1.7];
        let same = compute_hm(&hz, &[0.2, 0.6], &[0.2, 0.6], &[0.9, 0.1], &[0.9, 0.1]);
        assert!(same.iter().zip(hz).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
