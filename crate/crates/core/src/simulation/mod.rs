//! Data-generating mechanisms with known effects, exact enumeration oracles
//! and the Monte Carlo study harness.

mod oracle;
mod study;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EstimandFamily, VariableRoles};
use crate::error::{Error, Result};
use crate::learners::expit;

pub use oracle::{eif_variance, gcomp_oracle, EifVariance, ExactModel};
pub use study::{run_study, run_study_with, study_config, ReplicateRecord, StudyResult, StudyRow, STUDY_FOLDS};

/// Marginal P(S = 1) in the transported mechanisms.
pub const P_SITE1: f64 = 0.5;
const P_W1: f64 = 0.4;
const P_A1: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgmId {
    BinaryNt,
    BinaryT,
    MultiNt,
    MultiT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueValues {
    pub ide: f64,
    pub iie: f64,
    pub ide_bound: f64,
    pub iie_bound: f64,
}

impl DgmId {
    pub const ALL: [DgmId; 4] = [DgmId::BinaryNt, DgmId::BinaryT, DgmId::MultiNt, DgmId::MultiT];

    pub fn name(self) -> &'static str {
        match self {
            DgmId::BinaryNt => "binary_nt",
            DgmId::BinaryT => "binary_t",
            DgmId::MultiNt => "multi_nt",
            DgmId::MultiT => "multi_t",
        }
    }

    pub fn family(self) -> EstimandFamily {
        match self {
            DgmId::BinaryNt | DgmId::MultiNt => EstimandFamily::Nontransported,
            DgmId::BinaryT | DgmId::MultiT => EstimandFamily::Transported,
        }
    }

    pub fn is_multivariate(self) -> bool {
        matches!(self, DgmId::MultiNt | DgmId::MultiT)
    }

    /// Sizes of the Z and M blocks.
    pub fn dims(self) -> (usize, usize) {
        if self.is_multivariate() {
            (2, 2)
        } else {
            (1, 1)
        }
    }

    pub fn roles(self) -> VariableRoles {
        let names = |p: &str, k: usize| -> Vec<String> {
            if k == 1 {
                vec![p.to_string()]
            } else {
                (1..=k).map(|i| format!("{p}{i}")).collect()
            }
        };
        let (nz, nm) = self.dims();
        VariableRoles {
            s: (self.family() == EstimandFamily::Transported).then(|| "s".to_string()),
            w: vec!["w".to_string()],
            a: "a".to_string(),
            z: names("z", nz),
            m: names("m", nm),
            y: "y".to_string(),
        }
    }

    pub fn true_values(self) -> TrueValues {
        let (ide, iie, ide_bound, iie_bound) = match self {
            DgmId::BinaryNt => (0.1933, 0.0975, 1.4607, 0.3191),
            DgmId::BinaryT => (0.1347, 0.0522, 0.1742, 0.019),
            DgmId::MultiNt => (0.0314, 0.0177, 0.9951, 0.0749),
            DgmId::MultiT => (0.0313, 0.0177, 0.1093, 0.0083),
        };
        TrueValues { ide, iie, ide_bound, iie_bound }
    }

    /// Per-coordinate P(Z_k = 1 | A, W, S); coordinates are conditionally independent.
    pub fn z_probs(self, a: f64, w: f64, s: f64) -> Vec<f64> {
        let ln = f64::ln;
        match self {
            DgmId::BinaryNt => vec![expit(-ln(2.0) + ln(10.0) * a - ln(2.0) * w)],
            DgmId::BinaryT => vec![expit(-ln(2.0) + ln(4.0) * a - ln(2.0) * w + ln(1.4) * s)],
            DgmId::MultiNt => vec![0.25 + 0.1 * a + 0.2 * w, 0.4 + 0.1 * a - 0.1 * w],
            DgmId::MultiT => vec![0.25 + 0.1 * a + 0.2 * w + 0.05 * s, 0.4 + 0.1 * a - 0.1 * w + 0.075 * s],
        }
    }

    /// Per-coordinate P(M_k = 1 | Z, A, W, S).
    pub fn m_probs(self, z: &[f64], a: f64, w: f64, s: f64) -> Vec<f64> {
        let ln = f64::ln;
        match self {
            DgmId::BinaryNt => vec![expit(-ln(2.0) + ln(12.0) * z[0] - ln(1.4) * w)],
            DgmId::BinaryT => vec![expit(-ln(2.0) + ln(10.0) * z[0] - ln(1.4) * w + ln(0.3) * s)],
            DgmId::MultiNt | DgmId::MultiT => {
                let shift = if self == DgmId::MultiT { -0.05 * s } else { 0.0 };
                vec![
                    0.6 + 0.1 * z[0] + 0.05 * a - 0.3 * w,
                    0.33 + 0.22 * z[1] + 0.05 * a + 0.15 * w + shift,
                ]
            }
        }
    }

    /// P(Y = 1 | A, Z, M, W); the outcome does not depend on A or S directly.
    pub fn y_prob(self, z: &[f64], m: &[f64], w: f64) -> f64 {
        let ln = f64::ln;
        match self {
            DgmId::BinaryNt => expit(
                -ln(5.0) + ln(8.0) * z[0] + ln(10.0) * m[0] - ln(1.2) * w + ln(1.2) * z[0] * w,
            ),
            DgmId::BinaryT => expit(
                -ln(5.0) + ln(8.0) * z[0] + ln(6.0) * m[0] - ln(1.2) * w + ln(1.2) * z[0] * w,
            ),
            DgmId::MultiNt | DgmId::MultiT => expit(
                -ln(5.0) + ln(8.0) * z[0] + ln(4.0) * m[0] - ln(1.2) * w - ln(2.0) * z[1]
                    + ln(1.2) * m[1]
                    + ln(1.2) * w * z[0],
            ),
        }
    }

    /// Draws `n` observations. Transported mechanisms hide Y where S = 0.
    pub fn generate(self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nz, nm) = self.dims();
        let transported = self.family() == EstimandFamily::Transported;
        let mut s_col = Vec::with_capacity(n);
        let mut w_col = Vec::with_capacity(n);
        let mut a_col = Vec::with_capacity(n);
        let mut z_cols = vec![Vec::with_capacity(n); nz];
        let mut m_cols = vec![Vec::with_capacity(n); nm];
        let mut y_col = Vec::with_capacity(n);
        let draw = |p: f64, rng: &mut ChaCha8Rng| f64::from(u8::from(rng.random::<f64>() < p));
        for _ in 0..n {
            let s = if transported { draw(P_SITE1, &mut rng) } else { 0.0 };
            let w = draw(P_W1, &mut rng);
            let a = draw(P_A1, &mut rng);
            let z: Vec<f64> = self.z_probs(a, w, s).into_iter().map(|p| draw(p, &mut rng)).collect();
            let m: Vec<f64> = self.m_probs(&z, a, w, s).into_iter().map(|p| draw(p, &mut rng)).collect();
            let y = draw(self.y_prob(&z, &m, w), &mut rng);
            s_col.push(s);
            w_col.push(w);
            a_col.push(a);
            for k in 0..nz {
                z_cols[k].push(z[k]);
            }
            for k in 0..nm {
                m_cols[k].push(m[k]);
            }
            y_col.push(if transported && s == 0.0 { f64::NAN } else { y });
        }
        let roles = self.roles();
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        if let Some(s) = &roles.s {
            columns.push((s.clone(), s_col));
        }
        columns.push((roles.w[0].clone(), w_col));
        columns.push((roles.a.clone(), a_col));
        columns.extend(roles.z.iter().cloned().zip(z_cols));
        columns.extend(roles.m.iter().cloned().zip(m_cols));
        columns.push((roles.y.clone(), y_col));
        Dataset::new(columns, roles, self.family()).expect("generated data satisfy the role contract")
    }
}

impl std::fmt::Display for DgmId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DgmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DgmId::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dgm `{s}`")))
    }
}

/// Convenience wrapper around [`DgmId::generate`].
pub fn generate(dgm: DgmId, n: usize, seed: u64) -> Dataset {
    dgm.generate(n, seed)
}

pub fn true_values(dgm: DgmId) -> TrueValues {
    dgm.true_values()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freq(d: &Dataset, target: &str, cond: &[(&str, f64)]) -> f64 {
        let t = d.column(target).unwrap();
        let (mut hit, mut tot) = (0.0, 0.0);
        for i in 0..d.n() {
            if cond.iter().all(|(c, v)| d.column(c).unwrap()[i] == *v) {
                tot += 1.0;
                hit += t[i];
            }
        }
        hit / tot
    }

    #[test]
    fn treatment_is_balanced() {
        let d = generate(DgmId::BinaryNt, 20_000, 1);
        let mean = d.a().iter().sum::<f64>() / d.n() as f64;
        assert!((mean - 0.5).abs() < 0.015);
    }

    #[test]
    fn reference_confounder_probability() {
        assert!((DgmId::BinaryNt.z_probs(0.0, 0.0, 0.0)[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        for dgm in DgmId::ALL {
            let a = generate(dgm, 200, 5);
            let b = generate(dgm, 200, 5);
            for name in dgm.roles().all_columns() {
                let (x, y) = (a.column(name).unwrap(), b.column(name).unwrap());
                assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn transported_outcome_hidden_off_site() {
        let d = generate(DgmId::BinaryT, 2000, 3);
        let s = d.s().unwrap();
        for (i, y) in d.y().iter().enumerate() {
            assert_eq!(y.is_nan(), s[i] == 0.0);
        }
    }

    #[test]
    fn sampling_matches_structural_probabilities() {
        let n = 1_000_000;
        let d = generate(DgmId::MultiT, n, 11);
        for (a, w, s) in [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (1.0, 0.0, 1.0)] {
            let cond = [("a", a), ("w", w), ("s", s)];
            let p = DgmId::MultiT.z_probs(a, w, s);
            assert!((freq(&d, "z1", &cond) - p[0]).abs() < 0.005);
            assert!((freq(&d, "z2", &cond) - p[1]).abs() < 0.005);
        }
        let cond = [("a", 1.0), ("w", 0.0), ("s", 1.0), ("z2", 1.0)];
        let p = DgmId::MultiT.m_probs(&[0.0, 1.0], 1.0, 0.0, 1.0)[1];
        assert!((freq(&d, "m2", &cond) - p).abs() < 0.005);

        let d = generate(DgmId::BinaryNt, n, 12);
        let cond = [("z", 1.0), ("m", 1.0), ("w", 1.0)];
        assert!((freq(&d, "y", &cond) - DgmId::BinaryNt.y_prob(&[1.0], &[1.0], 1.0)).abs() < 0.005);
    }

    #[test]
    fn names_round_trip() {
        for d in DgmId::ALL {
            assert_eq!(d.name().parse::<DgmId>().unwrap(), d);
        }
        assert!("binary".parse::<DgmId>().is_err());
        assert_eq!(true_values(DgmId::BinaryT).iie_bound, 0.019);
        assert_eq!(true_values(DgmId::MultiT).ide, 0.0313);
    }
}
