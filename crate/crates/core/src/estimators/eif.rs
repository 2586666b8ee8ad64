//! Per-observation efficient influence functions.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ThetaPair};
use crate::nuisance::{ComponentFits, NuisanceFits};

fn indicator(c: bool) -> f64 {
    f64::from(u8::from(c))
}

/// EIF pieces for one θ(a', a*). `total` is evaluated at the solved `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EifTable {
    pub pair: ThetaPair,
    pub theta: f64,
    pub d_y: Vec<f64>,
    pub d_z: Vec<f64>,
    pub d_m: Vec<f64>,
    /// The W-term without θ: v̄, or 1{s=0}/t · v̄ when transporting.
    pub d_w_core: Vec<f64>,
    pub total: Vec<f64>,
}

impl EifTable {
    /// Solves mean(EIF) = 0 for θ. `w_weight` multiplies θ inside the W-term
    /// (1, or 1{s=0}/t, whose sample mean is one).
    fn solve(pair: ThetaPair, d_y: Vec<f64>, d_z: Vec<f64>, d_m: Vec<f64>, d_w_core: Vec<f64>, w_weight: &[f64]) -> Self {
        let n = d_y.len();
        let theta = (0..n).map(|i| d_y[i] + d_z[i] + d_m[i] + d_w_core[i]).sum::<f64>() / n as f64;
        let total = (0..n).map(|i| d_y[i] + d_z[i] + d_m[i] + d_w_core[i] - w_weight[i] * theta).collect();
        Self { pair, theta, d_y, d_z, d_m, d_w_core, total }
    }

    pub fn n(&self) -> usize {
        self.total.len()
    }

    pub fn mean_total(&self) -> f64 {
        self.total.iter().sum::<f64>() / self.n() as f64
    }

    pub fn mean_d_y(&self) -> f64 {
        self.d_y.iter().sum::<f64>() / self.n() as f64
    }
}

pub fn assemble_eif(comp: &ComponentFits, d: &Dataset) -> EifTable {
    let (a, y) = (d.a(), d.y());
    let (ap, ast) = (f64::from(comp.pair.a_prime), f64::from(comp.pair.a_star));
    let n = d.n();
    let mut d_y = vec![0.0; n];
    let mut d_z = vec![0.0; n];
    let mut d_m = vec![0.0; n];
    for i in 0..n {
        if a[i] == ap {
            d_y[i] = comp.h_m[i] / comp.g_aprime[i] * (y[i] - comp.b[i]);
            d_z[i] = (comp.u[i] - comp.ubar[i]) / comp.g_aprime[i];
        }
        d_m[i] = indicator(a[i] == ast) / comp.g_astar[i] * (comp.v[i] - comp.vbar[i]);
    }
    EifTable::solve(comp.pair, d_y, d_z, d_m, comp.vbar.clone(), &vec![1.0; n])
}

pub fn assemble_eif_transported(comp: &ComponentFits, d: &Dataset, c: &[f64], t: f64) -> EifTable {
    let (a, y) = (d.a(), d.y());
    let s = d.s().expect("transported data carry a site column");
    let (ap, ast) = (f64::from(comp.pair.a_prime), f64::from(comp.pair.a_star));
    let n = d.n();
    let mut d_y = vec![0.0; n];
    let mut d_z = vec![0.0; n];
    let mut d_m = vec![0.0; n];
    let mut d_w_core = vec![0.0; n];
    let mut w_weight = vec![0.0; n];
    for i in 0..n {
        if s[i] == 1.0 {
            // Y is only observed on site 1
            if a[i] == ap {
                d_y[i] = (1.0 - c[i]) / c[i] * comp.h_m[i] / (t * comp.g_aprime[i]) * (y[i] - comp.b[i]);
            }
            continue;
        }
        if a[i] == ap {
            d_z[i] = (comp.u[i] - comp.ubar[i]) / (t * comp.g_aprime[i]);
        }
        if a[i] == ast {
            d_m[i] = (comp.v[i] - comp.vbar[i]) / (t * comp.g_astar[i]);
        }
        w_weight[i] = 1.0 / t;
        d_w_core[i] = comp.vbar[i] / t;
    }
    EifTable::solve(comp.pair, d_y, d_z, d_m, d_w_core, &w_weight)
}

/// Dispatches on the estimand family of the fits.
pub fn assemble(nf: &NuisanceFits, comp: &ComponentFits, d: &Dataset) -> EifTable {
    match (&nf.c, nf.t) {
        (Some(c), Some(t)) => assemble_eif_transported(comp, d, c, t),
        _ => assemble_eif(comp, d),
    }
}
