//! Exact enumeration over the binary mechanisms.

use serde::{Deserialize, Serialize};

use super::{DgmId, P_A1, P_SITE1, P_W1};
use crate::data::{EstimandFamily, ThetaPair};

fn bern(p: f64, x: f64) -> f64 {
    if x == 1.0 {
        p
    } else {
        1.0 - p
    }
}

fn configs(k: usize) -> Vec<Vec<f64>> {
    (0..1usize << k).map(|bits| (0..k).map(|j| ((bits >> j) & 1) as f64).collect()).collect()
}

/// Closed-form nuisance functions of one mechanism, evaluated in the target
/// population (S = 0 for the transported mechanisms).
#[derive(Debug, Clone)]
pub struct ExactModel {
    pub dgm: DgmId,
    zs: Vec<Vec<f64>>,
    ms: Vec<Vec<f64>>,
}

impl ExactModel {
    pub fn new(dgm: DgmId) -> Self {
        let (nz, nm) = dgm.dims();
        Self { dgm, zs: configs(nz), ms: configs(nm) }
    }

    pub fn z_configs(&self) -> &[Vec<f64>] {
        &self.zs
    }

    pub fn m_configs(&self) -> &[Vec<f64>] {
        &self.ms
    }

    /// q(z | a, w) within site `s`.
    pub fn q(&self, z: &[f64], a: f64, w: f64, s: f64) -> f64 {
        self.dgm.z_probs(a, w, s).iter().zip(z).map(|(&p, &x)| bern(p, x)).product()
    }

    /// p(m | z, a, w) within site `s`.
    pub fn pm_given_z(&self, m: &[f64], z: &[f64], a: f64, w: f64, s: f64) -> f64 {
        self.dgm.m_probs(z, a, w, s).iter().zip(m).map(|(&p, &x)| bern(p, x)).product()
    }

    /// p(m | a, w) within site `s`.
    pub fn pm(&self, m: &[f64], a: f64, w: f64, s: f64) -> f64 {
        self.zs.iter().map(|z| self.pm_given_z(m, z, a, w, s) * self.q(z, a, w, s)).sum()
    }

    pub fn b(&self, z: &[f64], m: &[f64], w: f64) -> f64 {
        self.dgm.y_prob(z, m, w)
    }

    /// h_Z(z, m, w) = p(m | a', w) / p(m | a', z, w) in the target population.
    pub fn h_z(&self, a_prime: f64, z: &[f64], m: &[f64], w: f64) -> f64 {
        self.pm(m, a_prime, w, 0.0) / self.pm_given_z(m, z, a_prime, w, 0.0)
    }

    /// e(1 | m, w) in the target population.
    pub fn e1(&self, m: &[f64], w: f64) -> f64 {
        let p1 = self.pm(m, 1.0, w, 0.0) * P_A1;
        p1 / (p1 + self.pm(m, 0.0, w, 0.0) * (1.0 - P_A1))
    }

    /// c(a, z, m, w) = P(S = 1 | a, z, m, w); transported mechanisms only.
    pub fn c(&self, a: f64, z: &[f64], m: &[f64], w: f64) -> f64 {
        let joint = |s: f64| bern(P_SITE1, s) * self.q(z, a, w, s) * self.pm_given_z(m, z, a, w, s);
        joint(1.0) / (joint(1.0) + joint(0.0))
    }

    pub fn h_m(&self, pair: ThetaPair, z: &[f64], m: &[f64], w: f64) -> f64 {
        let (ap, ast) = (pair.a_prime as f64, pair.a_star as f64);
        let e = |a: f64| if a == 1.0 { self.e1(m, w) } else { 1.0 - self.e1(m, w) };
        self.h_z(ap, z, m, w) * e(ast) / e(ap)
    }

    /// r(z | a, m, w) in the target population.
    fn r(&self, z: &[f64], a: f64, m: &[f64], w: f64) -> f64 {
        self.pm_given_z(m, z, a, w, 0.0) * self.q(z, a, w, 0.0) / self.pm(m, a, w, 0.0)
    }

    pub fn u(&self, pair: ThetaPair, z: &[f64], w: f64) -> f64 {
        let ap = pair.a_prime as f64;
        self.ms.iter().map(|m| self.b(z, m, w) * self.h_m(pair, z, m, w) * self.pm_given_z(m, z, ap, w, 0.0)).sum()
    }

    pub fn ubar(&self, pair: ThetaPair, w: f64) -> f64 {
        let ap = pair.a_prime as f64;
        self.zs.iter().map(|z| self.u(pair, z, w) * self.q(z, ap, w, 0.0)).sum()
    }

    pub fn v(&self, pair: ThetaPair, m: &[f64], w: f64) -> f64 {
        let ap = pair.a_prime as f64;
        self.zs.iter().map(|z| self.b(z, m, w) * self.h_z(ap, z, m, w) * self.r(z, ap, m, w)).sum()
    }

    pub fn vbar(&self, pair: ThetaPair, w: f64) -> f64 {
        let ast = pair.a_star as f64;
        self.ms.iter().map(|m| self.v(pair, m, w) * self.pm(m, ast, w, 0.0)).sum()
    }

    /// Identification formula: sum of b q(z|a',w) p(m|a*,w) p(w).
    pub fn theta(&self, pair: ThetaPair) -> f64 {
        let (ap, ast) = (pair.a_prime as f64, pair.a_star as f64);
        let mut total = 0.0;
        for w in [0.0, 1.0] {
            for z in &self.zs {
                for m in &self.ms {
                    total += self.b(z, m, w) * self.q(z, ap, w, 0.0) * self.pm(m, ast, w, 0.0) * bern(P_W1, w);
                }
            }
        }
        total
    }
}

/// Exact θ(a', a*) (θᵀ for the transported mechanisms) by enumeration.
pub fn gcomp_oracle(dgm: DgmId, a_prime: u8, a_star: u8) -> f64 {
    ExactModel::new(dgm).theta(ThetaPair::new(a_prime, a_star))
}

/// Exact variance of the contrast EIFs, i.e. the efficiency bounds under the
/// mechanism as generated (randomized A, P(S = 1) = 0.5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EifVariance {
    pub ide: f64,
    pub iie: f64,
}

pub fn eif_variance(dgm: DgmId) -> EifVariance {
    let ex = ExactModel::new(dgm);
    let transported = dgm.family() == EstimandFamily::Transported;
    let sites: &[f64] = if transported { &[0.0, 1.0] } else { &[0.0] };
    let t = if transported { 1.0 - P_SITE1 } else { 1.0 };
    let g = P_A1;

    // (probability, per-pair EIF value) over every joint configuration
    let pairs = [ThetaPair::new(1, 0), ThetaPair::new(0, 0), ThetaPair::new(1, 1)];
    let thetas: Vec<f64> = pairs.iter().map(|&p| ex.theta(p)).collect();
    let mut cells: Vec<(f64, [f64; 3])> = Vec::new();
    for &s in sites {
        let ps = if transported { bern(P_SITE1, s) } else { 1.0 };
        for w in [0.0, 1.0] {
            for a in [0.0, 1.0] {
                for z in &ex.zs {
                    for m in &ex.ms {
                        let pj = ps * bern(P_W1, w) * bern(P_A1, a) * ex.q(z, a, w, s) * ex.pm_given_z(m, z, a, w, s);
                        for y in [0.0, 1.0] {
                            let pr = pj * bern(ex.b(z, m, w), y);
                            let mut vals = [0.0; 3];
                            for (k, &pair) in pairs.iter().enumerate() {
                                let (ap, ast) = (pair.a_prime as f64, pair.a_star as f64);
                                let resid = y - ex.b(z, m, w);
                                let hm = ex.h_m(pair, z, m, w);
                                let dz = ex.u(pair, z, w) - ex.ubar(pair, w);
                                let dm = ex.v(pair, m, w) - ex.vbar(pair, w);
                                let dw = ex.vbar(pair, w) - thetas[k];
                                let ind = |c: bool| f64::from(u8::from(c));
                                vals[k] = if transported {
                                    let c = ex.c(a, z, m, w);
                                    ind(s == 1.0 && a == ap) / (t * g) * (1.0 - c) / c * hm * resid
                                        + ind(s == 0.0 && a == ap) / (t * g) * dz
                                        + ind(s == 0.0 && a == ast) / (t * g) * dm
                                        + ind(s == 0.0) / t * dw
                                } else {
                                    ind(a == ap) / g * hm * resid + ind(a == ap) / g * dz + ind(a == ast) / g * dm + dw
                                };
                            }
                            cells.push((pr, vals));
                        }
                    }
                }
            }
        }
    }
    let var = |i: usize, j: usize| -> f64 {
        let mean: f64 = cells.iter().map(|(p, v)| p * (v[i] - v[j])).sum();
        cells.iter().map(|(p, v)| p * (v[i] - v[j] - mean).powi(2)).sum()
    };
    EifVariance { ide: var(0, 1), iie: var(2, 0) }
}
