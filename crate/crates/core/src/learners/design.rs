use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Saturated expansions above this many base columns are refused.
pub const MAX_SATURATED_COLUMNS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expansion {
    MeanOnly,
    MainEffects,
    TwoWay,
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub expansion: Expansion,
    pub standardize: bool,
}

impl DesignSpec {
    pub fn new(expansion: Expansion) -> Self {
        Self { expansion, standardize: true }
    }
}

/// An expansion bound to the base arity and the standardization learned from
/// training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub expansion: Expansion,
    k: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
}

pub(crate) fn is_binary(values: impl IntoIterator<Item = f64>) -> bool {
    values.into_iter().all(|v| v == 0.0 || v == 1.0)
}

impl Design {
    /// Learns per-column centering from `rows` (weighted when given). Binary
    /// columns are never rescaled.
    pub fn fit(spec: &DesignSpec, rows: &Matrix, weights: Option<&[f64]>) -> Result<Self> {
        let k = rows.ncols();
        let mut center = vec![0.0; k];
        let mut scale = vec![1.0; k];
        let binary: Vec<bool> = (0..k).map(|j| is_binary(rows.rows().map(|r| r[j]))).collect();
        if spec.expansion == Expansion::Saturated {
            if let Some(j) = binary.iter().position(|b| !b) {
                return Err(Error::SaturationOnContinuous(j));
            }
            if k > MAX_SATURATED_COLUMNS {
                return Err(Error::SaturationTooLarge(k));
            }
        } else if spec.standardize && spec.expansion != Expansion::MeanOnly {
            for j in (0..k).filter(|&j| !binary[j]) {
                let (mut sw, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for (i, r) in rows.rows().enumerate() {
                    let w = weights.map_or(1.0, |w| w[i]);
                    sw += w;
                    s1 += w * r[j];
                    s2 += w * r[j] * r[j];
                }
                if sw > 0.0 {
                    let mean = s1 / sw;
                    let var = (s2 / sw - mean * mean).max(0.0);
                    center[j] = mean;
                    if var.sqrt() > 1e-12 {
                        scale[j] = var.sqrt();
                    }
                }
            }
        }
        Ok(Self { expansion: spec.expansion, k, center, scale })
    }

    pub fn arity(&self) -> usize {
        self.k
    }

    pub fn ncols(&self) -> usize {
        let k = self.k;
        match self.expansion {
            Expansion::MeanOnly => 1,
            Expansion::MainEffects => 1 + k,
            Expansion::TwoWay => 1 + k + k * k.saturating_sub(1) / 2,
            Expansion::Saturated => 1 << k,
        }
    }

    /// Appends the expanded row to `out`.
    pub fn expand_row(&self, row: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(row.len(), self.k);
        match self.expansion {
            Expansion::MeanOnly => out.push(1.0),
            Expansion::MainEffects | Expansion::TwoWay => {
                out.push(1.0);
                let start = out.len();
                out.extend(row.iter().enumerate().map(|(j, v)| (v - self.center[j]) / self.scale[j]));
                if self.expansion == Expansion::TwoWay {
                    for a in 0..self.k {
                        for b in (a + 1)..self.k {
                            let p = out[start + a] * out[start + b];
                            out.push(p);
                        }
                    }
                }
            }
            Expansion::Saturated => {
                // Column for subset `mask` is the product of its members coded
                // ±1; near-orthogonal columns keep coordinate descent fast.
                let base = out.len();
                out.push(1.0);
                for j in 0..self.k {
                    let half = 1usize << j;
                    let x = 2.0 * row[j] - 1.0;
                    for mask in 0..half {
                        let v = out[base + mask] * x;
                        out.push(v);
                    }
                }
            }
        }
    }

    pub fn expand(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.ncols() != self.k {
            return Err(Error::ArityMismatch { expected: self.k, got: rows.ncols() });
        }
        let p = self.ncols();
        let mut data = Vec::with_capacity(rows.nrows() * p);
        for r in rows.rows() {
            self.expand_row(r, &mut data);
        }
        Ok(Matrix::new(rows.nrows(), p, data))
    }
}

/// Expands base columns into a regression design, standardizing continuous
/// columns with the rows' own statistics when requested.
pub fn expand_features(rows: &Matrix, spec: &DesignSpec) -> Result<Matrix> {
    Design::fit(spec, rows, None)?.expand(rows)
}
