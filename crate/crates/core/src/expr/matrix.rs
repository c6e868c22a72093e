use std::sync::Arc;

use nalgebra::DMatrix;

use super::{ExprError, ExprTree};

/// Dense row-major grid of scalar expressions over a shared variable list.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixExpr {
    rows: usize,
    cols: usize,
    entries: Vec<ExprTree>,
    vars: Arc<[String]>,
}

impl MatrixExpr {
    pub fn new(rows: usize, cols: usize, entries: Vec<ExprTree>, vars: Arc<[String]>) -> Result<Self, ExprError> {
        if entries.len() != rows * cols {
            return Err(ExprError::Dimension { expected: rows * cols, got: entries.len() });
        }
        if let Some(e) = entries.iter().find(|e| e.vars() != &vars) {
            return Err(ExprError::Dimension { expected: vars.len(), got: e.nvars() });
        }
        Ok(MatrixExpr { rows, cols, entries, vars })
    }

    pub fn zeros(rows: usize, cols: usize, vars: Arc<[String]>) -> Self {
        let entries = vec![ExprTree::constant(0.0, vars.clone()); rows * cols];
        MatrixExpr { rows, cols, entries, vars }
    }

    pub fn from_constants(m: &DMatrix<f64>, vars: Arc<[String]>) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(ExprTree::constant(m[(i, j)], vars.clone()));
            }
        }
        MatrixExpr { rows: m.nrows(), cols: m.ncols(), entries, vars }
    }

    /// Parse a grid of expression strings. `cols` is needed when `grid` has no rows.
    pub fn parse<S: AsRef<str>>(grid: &[Vec<S>], cols: usize, vars: Arc<[String]>) -> Result<Self, ExprError> {
        let mut entries = Vec::new();
        for row in grid {
            if row.len() != cols {
                return Err(ExprError::Dimension { expected: cols, got: row.len() });
            }
            for s in row {
                entries.push(ExprTree::parse(s.as_ref(), &vars)?);
            }
        }
        Ok(MatrixExpr { rows: grid.len(), cols, entries, vars })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn vars(&self) -> &Arc<[String]> {
        &self.vars
    }

    pub fn get(&self, i: usize, j: usize) -> &ExprTree {
        &self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[ExprTree] {
        &self.entries
    }

    pub fn eval(&self, point: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self.get(i, j).eval(point)?;
            }
        }
        Ok(m)
    }

    pub fn to_strings(&self) -> Vec<Vec<String>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).to_string()).collect())
            .collect()
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.entries.iter().all(|e| e.simplified().is_zero())
    }

    pub fn map(&self, vars: Arc<[String]>, f: impl Fn(&ExprTree) -> Result<ExprTree, ExprError>) -> Result<Self, ExprError> {
        let entries = self.entries.iter().map(f).collect::<Result<Vec<_>, _>>()?;
        MatrixExpr::new(self.rows, self.cols, entries, vars)
    }

    /// Assemble from a closure over block positions.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        vars: Arc<[String]>,
        mut f: impl FnMut(usize, usize) -> Result<ExprTree, ExprError>,
    ) -> Result<Self, ExprError> {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j)?);
            }
        }
        MatrixExpr::new(rows, cols, entries, vars)
    }
}
