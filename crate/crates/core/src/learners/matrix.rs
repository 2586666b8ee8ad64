use std::collections::HashMap;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "matrix data length");
        Self { nrows, ncols, data }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::new(nrows, ncols, vec![0.0; nrows * ncols])
    }

    pub fn with_cols(ncols: usize) -> Self {
        Self { nrows: 0, ncols, data: Vec::new() }
    }

    /// Builds a matrix whose columns are the given slices.
    pub fn from_columns(cols: &[&[f64]]) -> Self {
        let ncols = cols.len();
        let nrows = cols.first().map_or(0, |c| c.len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for c in cols {
                data.push(c[i]);
            }
        }
        Self { nrows, ncols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut m = Self::with_cols(ncols);
        for r in rows {
            m.push_row(r);
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.ncols, "row length");
        self.data.extend_from_slice(row);
        self.nrows += 1;
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut m = Self::with_cols(self.ncols);
        m.data.reserve(idx.len() * self.ncols);
        for &i in idx {
            m.push_row(self.row(i));
        }
        m
    }

    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.nrows * cols.len());
        for i in 0..self.nrows {
            let r = self.row(i);
            data.extend(cols.iter().map(|&j| r[j]));
        }
        Self::new(self.nrows, cols.len(), data)
    }

    /// Replaces column `j` with a constant.
    pub fn set_column(&mut self, j: usize, value: f64) {
        for i in 0..self.nrows {
            self.data[i * self.ncols + j] = value;
        }
    }
}

/// Candidate training rows collapsed to their distinct predictor vectors.
///
/// Every fitter in this module depends on the response only through per-cell
/// sums (count, sum of y, sum of y squared), so the expensive parts of a fit
/// scale with the number of distinct rows rather than with n.
#[derive(Debug, Clone)]
pub struct Groups {
    pub distinct: Matrix,
    pub group_of: Vec<usize>,
    pub y: Vec<f64>,
}

impl Groups {
    pub fn build(x: &Matrix, y: &[f64]) -> Self {
        assert_eq!(x.nrows(), y.len());
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut distinct = Matrix::with_cols(x.ncols());
        let mut group_of = Vec::with_capacity(x.nrows());
        let mut key = Vec::with_capacity(x.ncols());
        for row in x.rows() {
            key.clear();
            // +0.0 folds -0.0 onto 0.0
            key.extend(row.iter().map(|v| (v + 0.0).to_bits()));
            let g = match index.get(&key) {
                Some(&g) => g,
                None => {
                    let g = distinct.nrows();
                    distinct.push_row(row);
                    index.insert(key.clone(), g);
                    g
                }
            };
            group_of.push(g);
        }
        Self { distinct, group_of, y: y.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.group_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of.is_empty()
    }

    /// Aggregates the given rows into per-group sufficient statistics.
    pub fn cells(&self, rows: &[usize]) -> Cells {
        let g = self.distinct.nrows();
        let mut cells = Cells { weight: vec![0.0; g], sum_y: vec![0.0; g], sum_yy: vec![0.0; g] };
        for &i in rows {
            let k = self.group_of[i];
            let y = self.y[i];
            cells.weight[k] += 1.0;
            cells.sum_y[k] += y;
            cells.sum_yy[k] += y * y;
        }
        cells
    }
}

/// Per-group sufficient statistics aligned with `Groups::distinct`.
#[derive(Debug, Clone)]
pub struct Cells {
    pub weight: Vec<f64>,
    pub sum_y: Vec<f64>,
    pub sum_yy: Vec<f64>,
}

impl Cells {
    pub fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// Indices of groups carrying positive weight.
    pub fn occupied(&self) -> Vec<usize> {
        (0..self.weight.len()).filter(|&g| self.weight[g] > 0.0).collect()
    }

    /// Compacts to the occupied groups: (rows, weights, mean responses).
    pub fn compact(&self, distinct: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
        let occ = self.occupied();
        let x = distinct.select_rows(&occ);
        let w = occ.iter().map(|&g| self.weight[g]).collect();
        let y = occ.iter().map(|&g| self.sum_y[g] / self.weight[g]).collect();
        (x, w, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_collapse_duplicates() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![-0.0, 1.0]]);
        let g = Groups::build(&x, &[1.0, 2.0, 3.0, 5.0]);
        assert_eq!(g.distinct.nrows(), 2);
        assert_eq!(g.group_of, vec![0, 1, 0, 0]);
        let c = g.cells(&[0, 1, 2, 3]);
        assert_eq!(c.weight, vec![3.0, 1.0]);
        assert_eq!(c.sum_y, vec![9.0, 2.0]);
        assert_eq!(c.sum_yy, vec![35.0, 4.0]);
        let c = g.cells(&[1]);
        assert_eq!(c.occupied(), vec![1]);
    }
}
