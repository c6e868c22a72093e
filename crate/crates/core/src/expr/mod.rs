//! Scalar expressions over a declared, ordered variable list.
//!
//! Expressions are parsed from text, evaluated at points, and differentiated
//! structurally: the derivative of an [`ExprTree`] is another [`ExprTree`] over
//! the same variables, so gradients and Hessians can be built once and reused.

mod build;
mod field;
mod matrix;
mod parse;
mod print;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use field::{MatrixField, ScalarField};
pub use matrix::MatrixExpr;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown variable `{name}` at position {pos}")]
    UnknownVariable { name: String, pos: usize },
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Built-in unary functions. Application always requires parentheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> Result<f64, ExprError> {
        let y = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Tanh => x.tanh(),
            Func::Ln => {
                if x <= 0.0 {
                    return Err(ExprError::Domain(format!("ln({x})")));
                }
                x.ln()
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(ExprError::Domain(format!("sqrt({x})")));
                }
                x.sqrt()
            }
        };
        finite(y, || format!("{}({x})", self.name()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// A node of an expression graph. Variables are indices into the owning
/// tree's variable list.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Call(Func, Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    /// Power with a constant real exponent.
    Pow(Box<Node>, f64),
}

fn finite(y: f64, what: impl FnOnce() -> String) -> Result<f64, ExprError> {
    if y.is_finite() {
        Ok(y)
    } else {
        Err(ExprError::Domain(format!("non-finite value from {}", what())))
    }
}

pub(crate) fn pow_value(base: f64, exp: f64) -> Result<f64, ExprError> {
    let y = if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
        if base == 0.0 && exp < 0.0 {
            return Err(ExprError::Domain(format!("0^{exp}")));
        }
        base.powi(exp as i32)
    } else {
        if base < 0.0 {
            return Err(ExprError::Domain(format!("({base})^{exp}")));
        }
        if base == 0.0 && exp < 0.0 {
            return Err(ExprError::Domain(format!("0^{exp}")));
        }
        base.powf(exp)
    };
    finite(y, || format!("({base})^{exp}"))
}

impl Node {
    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Var(i) => Ok(point[*i]),
            Node::Neg(a) => Ok(-a.eval(point)?),
            Node::Call(f, a) => f.apply(a.eval(point)?),
            Node::Pow(a, p) => pow_value(a.eval(point)?, *p),
            Node::Binary(op, a, b) => {
                let (x, y) = (a.eval(point)?, b.eval(point)?);
                let v = match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(ExprError::Domain(format!("division of {x} by zero")));
                        }
                        x / y
                    }
                };
                finite(v, || "arithmetic".to_string())
            }
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(i) => *i == var,
            Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => a.depends_on(var),
            Node::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) | Node::Call(_, a) | Node::Pow(a, _) => a.max_var(),
            Node::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    /// Partial derivative with respect to variable `var`, with constant folding.
    pub fn diff(&self, var: usize) -> Node {
        use build::*;
        if !self.depends_on(var) {
            return Node::Const(0.0);
        }
        match self {
            Node::Const(_) => Node::Const(0.0),
            Node::Var(i) => Node::Const(if *i == var { 1.0 } else { 0.0 }),
            Node::Neg(a) => neg(a.diff(var)),
            Node::Call(f, a) => {
                let da = a.diff(var);
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Exp => call(Func::Exp, inner),
                    Func::Ln => div(Node::Const(1.0), inner),
                    Func::Sqrt => div(Node::Const(0.5), call(Func::Sqrt, inner)),
                    Func::Tanh => sub(Node::Const(1.0), pow(call(Func::Tanh, inner), 2.0)),
                };
                mul(outer, da)
            }
            Node::Pow(a, p) => {
                let da = a.diff(var);
                mul(mul(Node::Const(*p), pow((**a).clone(), p - 1.0)), da)
            }
            Node::Binary(op, a, b) => {
                let (da, db) = (a.diff(var), b.diff(var));
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, b), mul(a, db)),
                    BinOp::Div => sub(div(da, b.clone()), div(mul(a, db), pow(b, 2.0))),
                }
            }
        }
    }

    /// Rebuild bottom-up through the folding constructors.
    pub fn simplify(&self) -> Node {
        use build::*;
        match self {
            Node::Const(_) | Node::Var(_) => self.clone(),
            Node::Neg(a) => neg(a.simplify()),
            Node::Call(f, a) => call(*f, a.simplify()),
            Node::Pow(a, p) => pow(a.simplify(), *p),
            Node::Binary(op, a, b) => binary(*op, a.simplify(), b.simplify()),
        }
    }

    /// Replace every variable reference by a node from `subs`.
    pub fn substitute(&self, subs: &[Node]) -> Node {
        use build::*;
        match self {
            Node::Const(_) => self.clone(),
            Node::Var(i) => subs[*i].clone(),
            Node::Neg(a) => neg(a.substitute(subs)),
            Node::Call(f, a) => call(*f, a.substitute(subs)),
            Node::Pow(a, p) => pow(a.substitute(subs), *p),
            Node::Binary(op, a, b) => binary(*op, a.substitute(subs), b.substitute(subs)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Node::Const(c) if *c == 0.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            Node::Neg(a) => a.as_const().map(|c| -c),
            _ => None,
        }
    }
}

/// A parsed scalar field together with the variable list it is expressed over.
///
/// Trees are immutable once built and cheap to share between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprTree {
    root: Node,
    vars: Arc<[String]>,
}

impl ExprTree {
    pub fn parse<S: AsRef<str>>(src: &str, vars: &[S]) -> Result<ExprTree, ExprError> {
        let vars = var_list(vars)?;
        let root = parse::parse(src, &vars)?;
        Ok(ExprTree { root, vars })
    }

    pub fn from_node(root: Node, vars: Arc<[String]>) -> Result<ExprTree, ExprError> {
        if let Some(m) = root.max_var() {
            if m >= vars.len() {
                return Err(ExprError::Dimension { expected: vars.len(), got: m + 1 });
            }
        }
        Ok(ExprTree { root, vars })
    }

    pub fn constant(c: f64, vars: Arc<[String]>) -> ExprTree {
        ExprTree { root: Node::Const(c), vars }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn vars(&self) -> &Arc<[String]> {
        &self.vars
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    fn check_point(&self, point: &[f64]) -> Result<(), ExprError> {
        if point.len() != self.vars.len() {
            return Err(ExprError::Dimension { expected: self.vars.len(), got: point.len() });
        }
        Ok(())
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        self.check_point(point)?;
        self.root.eval(point)
    }

    pub fn derivative(&self, var: usize) -> ExprTree {
        ExprTree { root: self.root.diff(var), vars: self.vars.clone() }
    }

    pub fn gradient_trees(&self) -> Vec<ExprTree> {
        (0..self.nvars()).map(|i| self.derivative(i)).collect()
    }

    /// Exact gradient by structural differentiation.
    pub fn grad(&self, point: &[f64]) -> Result<DVector<f64>, ExprError> {
        self.check_point(point)?;
        let g = (0..self.nvars())
            .map(|i| self.root.diff(i).eval(point))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(g))
    }

    /// Exact Hessian; the lower triangle is computed and mirrored.
    pub fn hessian(&self, point: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        self.check_point(point)?;
        let n = self.nvars();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let di = self.root.diff(i);
            for j in 0..=i {
                let v = di.diff(j).eval(point)?;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }

    pub fn depends_on(&self, var: usize) -> bool {
        self.root.depends_on(var)
    }

    pub fn is_zero(&self) -> bool {
        self.root.is_zero()
    }

    pub fn simplified(&self) -> ExprTree {
        ExprTree { root: self.root.simplify(), vars: self.vars.clone() }
    }

    /// Re-express over `vars`, mapping old variable `i` to `subs[i]`.
    pub fn substitute(&self, subs: &[Node], vars: Arc<[String]>) -> Result<ExprTree, ExprError> {
        if subs.len() != self.nvars() {
            return Err(ExprError::Dimension { expected: self.nvars(), got: subs.len() });
        }
        ExprTree::from_node(self.root.substitute(subs), vars)
    }

    /// Re-express over `vars`, mapping old variable `i` to new variable `map[i]`.
    pub fn remap(&self, map: &[usize], vars: Arc<[String]>) -> Result<ExprTree, ExprError> {
        let subs: Vec<Node> = map.iter().map(|&j| Node::Var(j)).collect();
        self.substitute(&subs, vars)
    }

    pub fn map_root(&self, f: impl FnOnce(Node) -> Node) -> ExprTree {
        ExprTree { root: f(self.root.clone()), vars: self.vars.clone() }
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print::render(&self.root, &self.vars))
    }
}

pub fn var_list<S: AsRef<str>>(vars: &[S]) -> Result<Arc<[String]>, ExprError> {
    let mut out: Vec<String> = Vec::with_capacity(vars.len());
    for v in vars {
        let v = v.as_ref();
        if out.iter().any(|o| o == v) {
            return Err(ExprError::DuplicateVariable(v.to_string()));
        }
        out.push(v.to_string());
    }
    Ok(out.into())
}

pub use build::{add, binary, call, div, mul, neg, pow, sub};

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(src: &str, vars: &[&str]) -> ExprTree {
        ExprTree::parse(src, vars).unwrap()
    }

    #[test]
    fn parse_and_eval_examples() {
        let e = t("x1^2 + sin(x2)", &["x1", "x2"]);
        assert_eq!(e.eval(&[1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(
            ExprTree::parse("x1 +", &["x1"]),
            Err(ExprError::Syntax { pos: 4, .. })
        ));
        let zero = t("0", &["x1", "x2"]);
        assert_eq!(zero.eval(&[3.0, -7.0]).unwrap(), 0.0);
        assert_eq!(t("x1*x2", &["x1", "x2"]).eval(&[2.0, 3.0]).unwrap(), 6.0);
        assert!(matches!(t("ln(x1)", &["x1"]).eval(&[-1.0]), Err(ExprError::Domain(_))));
        assert_eq!(t("exp(x1)", &["x1"]).eval(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn unknown_variable_is_reported() {
        let err = ExprTree::parse("x1 + y", &["x1"]).unwrap_err();
        assert_eq!(err, ExprError::UnknownVariable { name: "y".into(), pos: 5 });
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        assert!(matches!(t("1/x", &["x"]).eval(&[0.0]), Err(ExprError::Domain(_))));
        assert!(matches!(t("x^-1", &["x"]).eval(&[0.0]), Err(ExprError::Domain(_))));
        assert!(matches!(t("x^0.5", &["x"]).eval(&[-1.0]), Err(ExprError::Domain(_))));
        assert_eq!(t("x^3", &["x"]).eval(&[-2.0]).unwrap(), -8.0);
    }

    #[test]
    fn power_binds_tighter_than_unary_minus() {
        assert_eq!(t("-x^2", &["x"]).eval(&[3.0]).unwrap(), -9.0);
        assert_eq!(t("(-x)^2", &["x"]).eval(&[3.0]).unwrap(), 9.0);
        assert_eq!(t("2^-1", &["x"]).eval(&[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn gradient_examples() {
        let e = t("x1^2 + sin(x2)", &["x1", "x2"]);
        let g = e.grad(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(g[0], 2.0);
        assert_abs_diff_eq!(g[1], 1.0);
        let c = t("4.5", &["x1", "x2"]);
        assert_eq!(c.grad(&[0.3, 0.2]).unwrap(), DVector::zeros(2));
        let g = t("x1*x2", &["x1", "x2"]).grad(&[2.0, 3.0]).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn hessian_examples() {
        let h = t("x1*x2", &["x1", "x2"]).hessian(&[5.0, -1.0]).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let h = t("x1^4", &["x1"]).hessian(&[1.0]).unwrap();
        assert_eq!(h[(0, 0)], 12.0);
        let h = t("x1 + x2", &["x1", "x2"]).hessian(&[1.0, 2.0]).unwrap();
        assert_eq!(h, DMatrix::zeros(2, 2));
    }

    #[test]
    fn derivative_of_constant_is_zero_tree() {
        let c = t("3*2 + 1", &["x"]);
        assert!(c.derivative(0).is_zero());
    }

    #[test]
    fn derivatives_fold_constants() {
        let h = t("0.5*x1^2 + 0.5*x2^2", &["x1", "x2"]);
        assert_eq!(h.derivative(0).to_string(), "x1");
        let g = t("x1^3", &["x1"]).derivative(0);
        assert_eq!(g.to_string(), "3*x1^2");
    }

    #[test]
    fn print_round_trips() {
        for src in [
            "0.5*x1^2 - 0.5*x2^2 + x1*x2",
            "-x1^2",
            "(-x1)^2",
            "x1 - (x2 - x1)",
            "x1/(x2*x1)",
            "sin(x1)^2 + cos(-x2)",
            "-(x1 + x2)*x2",
            "x1^-2 + tanh(x2)/sqrt(x1)",
            "2 - -x1",
            "exp(ln(x1))",
        ] {
            let tree = t(src, &["x1", "x2"]);
            let printed = tree.to_string();
            let again = t(&printed, &["x1", "x2"]);
            assert_eq!(again.to_string(), printed, "source {src}");
            let p = [0.7, -0.4];
            let (a, b) = (tree.eval(&p), again.eval(&p));
            match (a, b) {
                (Ok(a), Ok(b)) => assert_eq!(a, b, "source {src}"),
                (a, b) => assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }

    #[test]
    fn remap_moves_variables() {
        let v = t("0.5*x1^2 - 0.5*e_x2^2", &["x1", "e_x2"]);
        let vars = var_list(&["x1", "x2", "lam1"]).unwrap();
        let f = v.remap(&[0, 2], vars).unwrap();
        assert_eq!(f.to_string(), "0.5*x1^2 - 0.5*lam1^2");
    }
}
