use nalgebra::{DMatrix, DVector};

use super::{ExprError, ExprTree, MatrixExpr, Node};

/// An expression with its gradient and Hessian trees built once up front.
#[derive(Debug, Clone)]
pub struct ScalarField {
    tree: ExprTree,
    grad: Vec<Node>,
    // lower triangle, row-major: hess[i][j] for j <= i
    hess: Vec<Vec<Node>>,
}

impl ScalarField {
    pub fn new(tree: ExprTree) -> Self {
        let tree = tree.simplified();
        let n = tree.nvars();
        let grad: Vec<Node> = (0..n).map(|i| tree.root().diff(i)).collect();
        let hess = (0..n).map(|i| (0..=i).map(|j| grad[i].diff(j)).collect()).collect();
        ScalarField { tree, grad, hess }
    }

    pub fn tree(&self) -> &ExprTree {
        &self.tree
    }

    pub fn nvars(&self) -> usize {
        self.tree.nvars()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.tree.eval(x)
    }

    pub fn gradient_tree(&self, i: usize) -> ExprTree {
        ExprTree { root: self.grad[i].clone(), vars: self.tree.vars.clone() }
    }

    pub fn grad(&self, x: &[f64]) -> Result<DVector<f64>, ExprError> {
        self.tree.check_point(x)?;
        let g = self.grad.iter().map(|d| d.eval(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(g))
    }

    pub fn partial(&self, i: usize, x: &[f64]) -> Result<f64, ExprError> {
        self.tree.check_point(x)?;
        self.grad[i].eval(x)
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        self.tree.check_point(x)?;
        let n = self.nvars();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.hess[i][j].eval(x)?;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }

    pub fn second_partial(&self, i: usize, j: usize, x: &[f64]) -> Result<f64, ExprError> {
        let (a, b) = if j <= i { (i, j) } else { (j, i) };
        self.hess[a][b].eval(x)
    }

    /// True when the `(i, j)` second partial is structurally zero.
    pub fn second_partial_is_zero(&self, i: usize, j: usize) -> bool {
        let (a, b) = if j <= i { (i, j) } else { (j, i) };
        self.hess[a][b].is_zero()
    }

    /// Whether the `(i, j)` second partial depends on variable `var`.
    pub fn second_partial_depends_on(&self, i: usize, j: usize, var: usize) -> bool {
        let (a, b) = if j <= i { (i, j) } else { (j, i) };
        self.hess[a][b].depends_on(var)
    }

    /// Whether the first partial `i` depends on variable `var`.
    pub fn partial_depends_on(&self, i: usize, var: usize) -> bool {
        self.grad[i].depends_on(var)
    }
}

/// Matrix of expressions with first derivatives of each entry cached.
#[derive(Debug, Clone)]
pub struct MatrixField {
    rows: usize,
    cols: usize,
    entries: Vec<Node>,
    // grads[e][l] = d entry_e / d x_l
    grads: Vec<Vec<Node>>,
    constant: bool,
}

impl MatrixField {
    pub fn new(m: &MatrixExpr) -> Self {
        let n = m.vars().len();
        let entries: Vec<Node> = m.entries().iter().map(|e| e.root().simplify()).collect();
        let grads: Vec<Vec<Node>> = entries.iter().map(|e| (0..n).map(|l| e.diff(l)).collect()).collect();
        let constant = grads.iter().flatten().all(Node::is_zero);
        MatrixField { rows: m.rows(), cols: m.cols(), entries, grads, constant }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (k, e) in self.entries.iter().enumerate() {
            m[(k / self.cols, k % self.cols)] = e.eval(x)?;
        }
        Ok(m)
    }

    /// Derivative of the matrix with respect to each coordinate, one matrix per coordinate.
    pub fn derivatives(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>, ExprError> {
        let n = x.len();
        let mut out = vec![DMatrix::zeros(self.rows, self.cols); n];
        if self.constant {
            return Ok(out);
        }
        for (k, g) in self.grads.iter().enumerate() {
            for (l, d) in g.iter().enumerate() {
                if !d.is_zero() {
                    out[l][(k / self.cols, k % self.cols)] = d.eval(x)?;
                }
            }
        }
        Ok(out)
    }
}
