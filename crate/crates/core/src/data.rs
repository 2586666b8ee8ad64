//! Observation table, variable roles and outcome scaling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimandFamily {
    Nontransported,
    Transported,
}

impl std::str::FromStr for EstimandFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nontransported" => Ok(Self::Nontransported),
            "transported" => Ok(Self::Transported),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

/// Maps data columns to the roles (S, W, A, Z, M, Y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableRoles {
    pub s: Option<String>,
    pub w: Vec<String>,
    pub a: String,
    pub z: Vec<String>,
    pub m: Vec<String>,
    pub y: String,
}

impl VariableRoles {
    pub fn validate(&self, family: EstimandFamily) -> Result<()> {
        if self.m.is_empty() {
            return Err(Error::EmptyMediatorSet);
        }
        if family == EstimandFamily::Transported && self.s.is_none() {
            return Err(Error::MissingSiteRole);
        }
        let mut seen = BTreeSet::new();
        for name in self.all_columns() {
            if !seen.insert(name) {
                return Err(Error::OverlappingRoles(name.to_string()));
            }
        }
        Ok(())
    }

    /// Every column referenced by a role, S first and Y last.
    pub fn all_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = Vec::new();
        cols.extend(self.s.as_deref());
        cols.extend(self.w.iter().map(String::as_str));
        cols.push(&self.a);
        cols.extend(self.z.iter().map(String::as_str));
        cols.extend(self.m.iter().map(String::as_str));
        cols.push(&self.y);
        cols
    }
}

/// Validated, immutable observation table. Missing outcome values are `NaN`.
#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    columns: BTreeMap<String, Vec<f64>>,
    roles: VariableRoles,
    family: EstimandFamily,
}

impl Dataset {
    pub fn new(
        columns: impl IntoIterator<Item = (String, Vec<f64>)>,
        roles: VariableRoles,
        family: EstimandFamily,
    ) -> Result<Self> {
        roles.validate(family)?;
        let columns: BTreeMap<String, Vec<f64>> = columns.into_iter().collect();
        let n = columns.get(&roles.a).map(Vec::len).ok_or_else(|| Error::MissingColumn(roles.a.clone()))?;
        for name in roles.all_columns() {
            let col = columns.get(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
            if col.len() != n {
                return Err(Error::Config(format!(
                    "column `{name}` has length {} but expected {n}",
                    col.len()
                )));
            }
        }
        let ds = Self { n, columns, roles, family };
        ds.check_values()?;
        Ok(ds)
    }

    fn check_values(&self) -> Result<()> {
        let roles = &self.roles;
        let complete = roles
            .s
            .iter()
            .chain(&roles.w)
            .chain(std::iter::once(&roles.a))
            .chain(&roles.z)
            .chain(&roles.m);
        for name in complete {
            if let Some(row) = self.columns[name].iter().position(|v| !v.is_finite()) {
                return Err(Error::MissingValue { column: name.clone(), row });
            }
        }
        for (row, &v) in self.a().iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryTreatment { column: roles.a.clone(), row, value: v });
            }
        }
        if let Some(s) = self.s() {
            for (row, &v) in s.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::NonBinarySite {
                        column: roles.s.clone().unwrap_or_default(),
                        row,
                        value: v,
                    });
                }
            }
        }
        let y = self.y();
        for row in 0..self.n {
            if y[row].is_finite() {
                continue;
            }
            let allowed = self.family == EstimandFamily::Transported
                && self.s().is_some_and(|s| s[row] == 0.0);
            if !allowed {
                return Err(Error::MissingValue { column: roles.y.clone(), row });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn roles(&self) -> &VariableRoles {
        &self.roles
    }

    pub fn family(&self) -> EstimandFamily {
        self.family
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn a(&self) -> &[f64] {
        &self.columns[&self.roles.a]
    }

    pub fn y(&self) -> &[f64] {
        &self.columns[&self.roles.y]
    }

    /// Site indicator; only present when the roles name one.
    pub fn s(&self) -> Option<&[f64]> {
        self.roles.s.as_ref().map(|s| self.columns[s].as_slice())
    }

    pub fn w(&self) -> Vec<&[f64]> {
        self.block(&self.roles.w)
    }

    pub fn z(&self) -> Vec<&[f64]> {
        self.block(&self.roles.z)
    }

    pub fn m(&self) -> Vec<&[f64]> {
        self.block(&self.roles.m)
    }

    fn block(&self, names: &[String]) -> Vec<&[f64]> {
        names.iter().map(|c| self.columns[c].as_slice()).collect()
    }

    /// Returns a copy with the outcome column replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        let mut columns = self.columns.clone();
        columns.insert(self.roles.y.clone(), y);
        Self::new(columns, self.roles.clone(), self.family)
    }
}

/// Variable blocks used to assemble regression predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    S,
    W,
    A,
    Z,
    M,
}

impl Dataset {
    /// Predictor matrix with the blocks' columns in order. When `a_value` is
    /// given, the treatment column is set to that level (counterfactual rows).
    pub fn matrix(&self, blocks: &[Block], a_value: Option<f64>) -> Matrix {
        let a_fixed = a_value.map(|v| vec![v; self.n]);
        let mut cols: Vec<&[f64]> = Vec::new();
        for b in blocks {
            match b {
                Block::S => cols.extend(self.s()),
                Block::W => cols.extend(self.w()),
                Block::A => cols.push(a_fixed.as_deref().unwrap_or(self.a())),
                Block::Z => cols.extend(self.z()),
                Block::M => cols.extend(self.m()),
            }
        }
        if cols.is_empty() {
            return Matrix::zeros(self.n, 0);
        }
        Matrix::from_columns(&cols)
    }

    /// Rows belonging to the target population: S = 0 when transporting,
    /// everyone otherwise.
    pub fn target_mask(&self) -> Vec<bool> {
        match (self.family, self.s()) {
            (EstimandFamily::Transported, Some(s)) => s.iter().map(|&v| v == 0.0).collect(),
            _ => vec![true; self.n],
        }
    }
}

impl Dataset {
    /// Role columns as CSV (S first, Y last); missing values are empty cells.
    pub fn to_csv(&self) -> Result<String> {
        let names = self.roles.all_columns();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&names)?;
        for i in 0..self.n {
            w.write_record(names.iter().map(|c| {
                let v = self.columns[*c][i];
                if v.is_nan() { String::new() } else { v.to_string() }
            }))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Reads a CSV file with a header row. Only role columns are parsed; an empty
/// cell is a missing value.
pub fn load_dataset(path: &Path, roles: &VariableRoles, family: EstimandFamily) -> Result<Dataset> {
    roles.validate(family)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let wanted = roles.all_columns();
    let mut index = Vec::with_capacity(wanted.len());
    for name in &wanted {
        let pos = headers
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        index.push(pos);
    }
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (k, &pos) in index.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("").trim();
            let value = if raw.is_empty() {
                f64::NAN
            } else {
                raw.parse::<f64>().map_err(|_| Error::BadValue {
                    column: wanted[k].to_string(),
                    row,
                    value: raw.to_string(),
                })?
            };
            data[k].push(value);
        }
    }
    let columns = wanted.iter().map(|s| s.to_string()).zip(data);
    Dataset::new(columns, roles.clone(), family)
}

/// Affine map of the outcome onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub y_min: f64,
    pub y_max: f64,
}

impl OutcomeScale {
    pub fn identity() -> Self {
        Self { y_min: 0.0, y_max: 1.0 }
    }

    pub fn range(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.y_min) / self.range()
    }

    /// Maps a mean on the scaled outcome back to the original units.
    pub fn unscale_level(&self, v: f64) -> f64 {
        self.y_min + v * self.range()
    }

    /// Maps a difference (contrast, standard error, EIF value) back.
    pub fn unscale_diff(&self, v: f64) -> f64 {
        v * self.range()
    }
}

pub fn scale_outcome(d: &Dataset) -> Result<(Dataset, OutcomeScale)> {
    let (lo, hi) = d
        .y()
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Err(Error::DegenerateOutcome);
    }
    let scale = OutcomeScale { y_min: lo, y_max: hi };
    let y = d.y().iter().map(|&v| if v.is_finite() { scale.scale(v) } else { v }).collect();
    Ok((d.with_outcome(y)?, scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Contrast {
    #[serde(rename = "IDE")]
    Ide,
    #[serde(rename = "IIE")]
    Iie,
}

impl Contrast {
    /// The (minuend, subtrahend) treatment-level pairs.
    pub fn components(self) -> (ThetaPair, ThetaPair) {
        match self {
            Contrast::Ide => (ThetaPair::new(1, 0), ThetaPair::new(0, 0)),
            Contrast::Iie => (ThetaPair::new(1, 1), ThetaPair::new(1, 0)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Contrast::Ide => "IDE",
            Contrast::Iie => "IIE",
        }
    }
}

impl std::str::FromStr for Contrast {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IDE" => Ok(Self::Ide),
            "IIE" => Ok(Self::Iie),
            other => Err(Error::Config(format!("unknown contrast `{other}`"))),
        }
    }
}

/// Treatment levels (a', a*) of one mean counterfactual component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ThetaPair {
    pub a_prime: u8,
    pub a_star: u8,
}

impl ThetaPair {
    pub fn new(a_prime: u8, a_star: u8) -> Self {
        Self { a_prime, a_star }
    }

    pub fn label(&self) -> String {
        format!("theta({},{})", self.a_prime, self.a_star)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSpec {
    pub family: EstimandFamily,
    pub contrasts: Vec<Contrast>,
}

impl EffectSpec {
    pub fn new(family: EstimandFamily, contrasts: Vec<Contrast>) -> Self {
        let mut contrasts = contrasts;
        contrasts.sort();
        contrasts.dedup();
        Self { family, contrasts }
    }

    pub fn both(family: EstimandFamily) -> Self {
        Self::new(family, vec![Contrast::Ide, Contrast::Iie])
    }

    /// Union of the components needed by the requested contrasts, sorted.
    pub fn components(&self) -> Vec<ThetaPair> {
        let set: BTreeSet<ThetaPair> = self
            .contrasts
            .iter()
            .flat_map(|c| {
                let (x, y) = c.components();
                [x, y]
            })
            .collect();
        set.into_iter().collect()
    }
}
