use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{PHSystem, SystemError};
use crate::expr::{self, ExprTree, Node};
use crate::geometry::{lagrange_constraint_probe, multistart_points, GeometryError, StorageRelation};
use crate::numerics::{least_squares_newton, NewtonConfig, NumericsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintClass {
    Dirac,
    Lagrange,
}

/// How a constraint residual is evaluated at a state.
#[derive(Debug, Clone, PartialEq)]
pub enum Residual {
    /// Closed-form `g(x)` over the state variables.
    Symbolic(ExprTree),
    /// Column `a` of `Bᵀ(x) e_S`, with `e_S` found from the storage relation.
    DiracNumeric { column: usize },
    /// Least-squares distance of `x` from `π(L)` in the internal coordinates.
    Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeVerdict {
    pub point: Vec<f64>,
    /// `None` when every Newton start failed.
    pub feasible: Option<bool>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub class: ConstraintClass,
    pub residual: Residual,
}

impl Constraint {
    /// Human-readable form, e.g. `x1 - x2 = 0`.
    pub fn describe(&self) -> String {
        match &self.residual {
            Residual::Symbolic(t) => format!("{t} = 0"),
            Residual::DiracNumeric { column } => format!("(B^T e_S)_{} = 0", column + 1),
            Residual::Projection => "x in pi(L)".to_string(),
        }
    }

    pub fn evaluate(&self, sys: &PHSystem, x: &[f64]) -> Result<f64, SystemError> {
        match &self.residual {
            Residual::Symbolic(t) => Ok(t.eval(x)?),
            Residual::DiracNumeric { column } => {
                let (e, _) = sys.effort_at(x)?;
                let b = sys.dirac().b_field().eval(x)?;
                Ok(b.column(*column).dot(&e))
            }
            Residual::Projection => projection_residual(sys.storage(), x, sys.sampling().seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub constraints: Vec<Constraint>,
    /// Feasibility of `x ∈ π(L)` at the sample points; empty for explicit storage.
    pub probes: Vec<ProbeVerdict>,
}

impl ConstraintReport {
    pub fn count(&self, class: ConstraintClass) -> usize {
        self.constraints.iter().filter(|c| c.class == class).count()
    }

    pub fn inconclusive(&self) -> usize {
        self.probes.iter().filter(|p| p.feasible.is_none()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}

/// Trees `g_a(x) = Σ_i B_ia(x) ∂H/∂x_i`, one per column of `B`.
pub(crate) fn dirac_constraint_trees(sys: &PHSystem, h: &ExprTree) -> Vec<ExprTree> {
    let b = sys.dirac().b();
    let grads: Vec<Node> = (0..sys.n()).map(|i| h.root().diff(i)).collect();
    (0..sys.k())
        .map(|a| {
            let node = grads
                .iter()
                .enumerate()
                .fold(Node::Const(0.0), |acc, (i, g)| expr::add(acc, expr::mul(b.get(i, a).root().clone(), g.clone())));
            ExprTree::from_node(node.simplify(), h.vars().clone()).expect("same variables")
        })
        .collect()
}

/// Rows of the internal equation (`x_J + ∂V/∂e_J` or `∂F/∂λ`) that do not
/// involve the internal unknowns, re-expressed over the state variables.
/// Identically-zero rows are dropped.
pub(crate) fn structural_lagrange_rows(sys: &PHSystem) -> Vec<(usize, ExprTree)> {
    let names = sys.names().clone();
    let mut out = Vec::new();
    match sys.storage() {
        StorageRelation::Explicit { .. } => {}
        StorageRelation::Generating { split, v } => {
            let ni = split.i().len();
            let nz = v.nvars();
            let subs: Vec<Node> =
                (0..nz).map(|a| if a < ni { Node::Var(split.i()[a]) } else { Node::Const(0.0) }).collect();
            for (b, &j) in split.j().iter().enumerate() {
                if (ni..nz).any(|c| v.partial_depends_on(ni + b, c)) {
                    continue;
                }
                let row = expr::add(Node::Var(j), v.gradient_tree(ni + b).root().substitute(&subs)).simplify();
                if !row.is_zero() {
                    out.push((b, ExprTree::from_node(row, names.clone()).expect("state variables")));
                }
            }
        }
        StorageRelation::Morse { k, f } => {
            let n = sys.n();
            let subs: Vec<Node> = (0..n + k).map(|a| if a < n { Node::Var(a) } else { Node::Const(0.0) }).collect();
            for a in 0..*k {
                if (n..n + k).any(|c| f.partial_depends_on(n + a, c)) {
                    continue;
                }
                let row = f.gradient_tree(n + a).root().substitute(&subs).simplify();
                if !row.is_zero() {
                    out.push((a, ExprTree::from_node(row, names.clone()).expect("state variables")));
                }
            }
        }
    }
    out
}

/// Least-squares residual of the internal equation at `x`, minimized over the
/// internal unknowns from the multi-start lattice.
fn projection_residual(s: &StorageRelation, x: &[f64], seed: u64) -> Result<f64, SystemError> {
    let (dim, eval): (usize, Box<dyn Fn(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), NumericsError>>) = match s {
        StorageRelation::Explicit { .. } => return Ok(0.0),
        StorageRelation::Generating { split, v } => {
            let ni = split.i().len();
            let d = split.j().len();
            (
                d,
                Box::new(move |u: &DVector<f64>| {
                    let z: Vec<f64> = split.i().iter().map(|&i| x[i]).chain(u.iter().copied()).collect();
                    let g = v.grad(&z)?;
                    let h = v.hessian(&z)?;
                    let r = DVector::from_iterator(d, split.j().iter().enumerate().map(|(b, &j)| x[j] + g[ni + b]));
                    Ok((r, h.view((ni, ni), (d, d)).into_owned()))
                }),
            )
        }
        StorageRelation::Morse { k, f } => {
            let n = x.len();
            let k = *k;
            (
                k,
                Box::new(move |u: &DVector<f64>| {
                    let w: Vec<f64> = x.iter().copied().chain(u.iter().copied()).collect();
                    let g = f.grad(&w)?;
                    let h = f.hessian(&w)?;
                    Ok((g.rows(n, k).into_owned(), h.view((n, n), (k, k)).into_owned()))
                }),
            )
        }
    };
    let cfg = NewtonConfig { tolerance: 1e-13, ..NewtonConfig::default() };
    let mut best = f64::INFINITY;
    for start in multistart_points(dim, seed) {
        if let Ok(out) = least_squares_newton(|u| Ok(eval(u)?.0), |u| Ok(eval(u)?.1), &start, &cfg) {
            best = best.min(out.residual_norm);
        }
        if best <= cfg.tolerance {
            break;
        }
    }
    Ok(best)
}

/// Classify the algebraic constraints of `sys`.
///
/// Dirac constraints come from `Bᵀ e_S = 0` (closed form for explicit storage).
/// Lagrange constraints are rows of the internal equation that cannot be solved
/// for the internal unknowns; when none is structural, sampled probes of
/// `x ∈ π(L)` decide whether a numeric constraint is reported.
pub fn extract_constraints(sys: &PHSystem) -> Result<ConstraintReport, SystemError> {
    let mut constraints = Vec::new();
    match sys.storage() {
        StorageRelation::Explicit { h } => {
            for t in dirac_constraint_trees(sys, h.tree()) {
                constraints.push(Constraint { class: ConstraintClass::Dirac, residual: Residual::Symbolic(t) });
            }
        }
        _ => {
            for column in 0..sys.k() {
                constraints.push(Constraint { class: ConstraintClass::Dirac, residual: Residual::DiracNumeric { column } });
            }
        }
    }

    let mut probes = Vec::new();
    if !sys.storage().is_explicit() {
        let structural = structural_lagrange_rows(sys);
        for point in sys.sampling().points() {
            let verdict = match lagrange_constraint_probe(sys.storage(), &point, sys.sampling().seed) {
                Ok(p) => ProbeVerdict { point, feasible: Some(p.feasible), exact: p.exact },
                Err(GeometryError::Inconclusive { .. }) => ProbeVerdict { point, feasible: None, exact: false },
                Err(e) => return Err(e.into()),
            };
            probes.push(verdict);
        }
        if !structural.is_empty() {
            for (_, t) in structural {
                constraints.push(Constraint { class: ConstraintClass::Lagrange, residual: Residual::Symbolic(t) });
            }
        } else if probes.iter().any(|p| p.feasible == Some(false)) {
            constraints.push(Constraint { class: ConstraintClass::Lagrange, residual: Residual::Projection });
        }
    }
    Ok(ConstraintReport { constraints, probes })
}
