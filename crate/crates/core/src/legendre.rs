//! Legendre and partial Legendre transforms, `P̃(x) = xᵀ∇P(x) − P(x)` and the
//! effective Hamiltonian of a generating function.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{self, ExprError, ExprTree, Node, ScalarField};
use crate::numerics::{inf_norm, min_singular_value, newton_solve, NewtonConfig, NumericsError};

/// Hessian blocks with a smallest singular value below this are treated as
/// a loss of injectivity of `x ↦ ∇P(x)`.
pub const HESSIAN_SINGULAR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LegendreError {
    #[error("Hessian is singular at x = {point:?}; gradient map not locally invertible")]
    NonConvexPoint { point: Vec<f64> },
    #[error(transparent)]
    Numerics(NumericsError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl From<NumericsError> for LegendreError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::Expr(e) => LegendreError::Expr(e),
            e => LegendreError::Numerics(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegendreResult {
    /// `P*(e)`.
    pub value: f64,
    /// Solution of `e = ∇P(x)` (only the `J` block for partial transforms).
    pub point: Vec<f64>,
    pub iterations: usize,
}

/// Solve `∂P/∂x_J (x) = e_J` for the `J` coordinates, others held fixed.
fn invert_block(p: &ScalarField, base: &[f64], j: &[usize], e_j: &[f64], guess: &[f64]) -> Result<(Vec<f64>, usize), LegendreError> {
    let d = j.len();
    if e_j.len() != d || guess.len() != d {
        return Err(LegendreError::Dimension(format!("expected {d} coordinates in e and guess")));
    }
    let full = |u: &DVector<f64>| {
        let mut x = base.to_vec();
        for (a, &i) in j.iter().enumerate() {
            x[i] = u[a];
        }
        x
    };
    let singular = std::cell::Cell::new(None::<Vec<f64>>);
    let residual = |u: &DVector<f64>| -> Result<DVector<f64>, NumericsError> {
        let x = full(u);
        let mut r = DVector::zeros(d);
        for (a, &i) in j.iter().enumerate() {
            r[a] = p.partial(i, &x)? - e_j[a];
        }
        Ok(r)
    };
    let hessian_block = |x: &[f64]| -> Result<DMatrix<f64>, NumericsError> {
        let mut h = DMatrix::zeros(d, d);
        for (a, &ia) in j.iter().enumerate() {
            for (b, &ib) in j.iter().enumerate() {
                h[(a, b)] = p.second_partial(ia, ib, x)?;
            }
        }
        Ok(h)
    };
    let jacobian = |u: &DVector<f64>| -> Result<DMatrix<f64>, NumericsError> {
        let x = full(u);
        let h = hessian_block(&x)?;
        if min_singular_value(&h) < HESSIAN_SINGULAR_TOLERANCE {
            singular.set(Some(x));
            return Err(NumericsError::SingularMatrix { column: 0, pivot: 0.0 });
        }
        Ok(h)
    };
    let u0 = DVector::from_column_slice(guess);
    match newton_solve(residual, jacobian, &u0, &NewtonConfig::default()) {
        Ok(sol) => {
            let x = full(&sol.x);
            if min_singular_value(&hessian_block(&x)?) < HESSIAN_SINGULAR_TOLERANCE {
                return Err(LegendreError::NonConvexPoint { point: x });
            }
            Ok((sol.x.iter().copied().collect(), sol.iterations))
        }
        Err(NumericsError::SingularMatrix { .. }) => {
            let point = singular.take().unwrap_or_else(|| full(&u0));
            Err(LegendreError::NonConvexPoint { point })
        }
        Err(e) => Err(e.into()),
    }
}

/// `P*(e) = eᵀx − P(x)` with `x` solved from `e = ∇P(x)`, starting at `x_guess`
/// (zero when `None`).
pub fn legendre(p: &ScalarField, e: &[f64], x_guess: Option<&[f64]>) -> Result<LegendreResult, LegendreError> {
    let n = p.nvars();
    if e.len() != n {
        return Err(LegendreError::Dimension(format!("e has {} coordinates, P has {n} variables", e.len())));
    }
    let zero = vec![0.0; n];
    let guess = x_guess.unwrap_or(&zero);
    let all: Vec<usize> = (0..n).collect();
    let (x, iterations) = invert_block(p, &zero, &all, e, guess)?;
    let value = e.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - p.value(&x)?;
    Ok(LegendreResult { value, point: x, iterations })
}

/// `‖x* − x‖∞` where `x*` inverts `∇P` at `e = ∇P(x)`.
pub fn legendre_inverse_check(p: &ScalarField, x: &[f64]) -> Result<f64, LegendreError> {
    let e: Vec<f64> = p.grad(x)?.iter().copied().collect();
    let r = legendre(p, &e, Some(x))?;
    Ok(r.point.iter().zip(x).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
}

/// Expression tree of `Σ x_i ∂P/∂x_i − P`.
pub fn tilde_tree(p: &ExprTree) -> ExprTree {
    let sum = (0..p.nvars()).fold(Node::Const(0.0), |acc, i| expr::add(acc, expr::mul(Node::Var(i), p.root().diff(i))));
    p.map_root(|root| expr::sub(sum, root))
}

/// `P̃(x) = xᵀ∇P(x) − P(x)`.
pub fn tilde(p: &ScalarField, x: &[f64]) -> Result<f64, LegendreError> {
    let g = p.grad(x)?;
    Ok(g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - p.value(x)?)
}

/// `‖∇P̃(x) − ∇²P(x)·x‖∞`, with `∇P̃` taken structurally from [`tilde_tree`].
pub fn tilde_grad_check(p: &ScalarField, x: &[f64]) -> Result<f64, LegendreError> {
    let t = tilde_tree(p.tree());
    let lhs = t.grad(x)?;
    let rhs = p.hessian(x)? * DVector::from_column_slice(x);
    Ok(inf_norm(&(lhs - rhs)))
}

/// Partial transform in the coordinates `j`: solves `e_J = ∂P/∂x_J` at fixed
/// `x_I` and returns `e_Jᵀx_J* − P(x_I, x_J*)` with `point = x_J*`.
///
/// `x` supplies the fixed coordinates; its `J` entries are ignored.
pub fn partial_legendre(
    p: &ScalarField,
    j: &[usize],
    x: &[f64],
    e_j: &[f64],
    x_j_guess: Option<&[f64]>,
) -> Result<LegendreResult, LegendreError> {
    let n = p.nvars();
    if x.len() != n || j.iter().any(|&i| i >= n) {
        return Err(LegendreError::Dimension(format!("point must have {n} coordinates and J indices below {n}")));
    }
    let default: Vec<f64> = j.iter().map(|&i| x[i]).collect();
    let guess = x_j_guess.unwrap_or(&default);
    let (xj, iterations) = invert_block(p, x, j, e_j, guess)?;
    let mut full = x.to_vec();
    for (a, &i) in j.iter().enumerate() {
        full[i] = xj[a];
    }
    let value = e_j.iter().zip(&xj).map(|(a, b)| a * b).sum::<f64>() - p.value(&full)?;
    Ok(LegendreResult { value, point: xj, iterations })
}

/// Tree of `H̃ = V − Σ_j e_j ∂V/∂e_j` for `V` over `(x_I, e_J)`, where the last
/// `n_j` variables are the costates.
pub fn effective_hamiltonian_tree(v: &ExprTree, n_j: usize) -> ExprTree {
    let start = v.nvars() - n_j;
    let sum = (start..v.nvars()).fold(Node::Const(0.0), |acc, i| expr::add(acc, expr::mul(Node::Var(i), v.root().diff(i))));
    v.map_root(|root| expr::sub(root, sum))
}

/// `H̃(x_I, e_J)` evaluated at `z = (x_I, e_J)`.
pub fn effective_hamiltonian(v: &ScalarField, n_j: usize, z: &[f64]) -> Result<f64, LegendreError> {
    let g = v.grad(z)?;
    let start = v.nvars() - n_j;
    let s: f64 = (start..v.nvars()).map(|i| z[i] * g[i]).sum();
    Ok(v.value(z)? - s)
}

/// `P**(x)`: the transform of `e ↦ P*(e)` evaluated at `x`, by an outer Newton
/// iteration on `∇P*(e) = x` using `∇²P*(e) = (∇²P(x*(e)))⁻¹`.
pub fn biconjugate(p: &ScalarField, x: &[f64], e_guess: &[f64]) -> Result<f64, LegendreError> {
    let n = p.nvars();
    let inner = |e: &DVector<f64>| legendre(p, e.as_slice(), Some(x)).map_err(|err| match err {
        LegendreError::Numerics(e) => e,
        LegendreError::Expr(e) => NumericsError::Expr(e),
        _ => NumericsError::SingularMatrix { column: 0, pivot: 0.0 },
    });
    let residual = |e: &DVector<f64>| -> Result<DVector<f64>, NumericsError> {
        let r = inner(e)?;
        Ok(DVector::from_iterator(n, r.point.iter().zip(x).map(|(a, b)| a - b)))
    };
    let jacobian = |e: &DVector<f64>| -> Result<DMatrix<f64>, NumericsError> {
        let r = inner(e)?;
        let h = p.hessian(&r.point)?;
        h.try_inverse().ok_or(NumericsError::SingularMatrix { column: 0, pivot: 0.0 })
    };
    let sol = newton_solve(residual, jacobian, &DVector::from_column_slice(e_guess), &NewtonConfig::default())?;
    let pstar = legendre(p, sol.x.as_slice(), Some(x))?.value;
    Ok(x.iter().zip(sol.x.iter()).map(|(a, b)| a * b).sum::<f64>() - pstar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(src: &str, vars: &[&str]) -> ScalarField {
        ScalarField::new(ExprTree::parse(src, vars).unwrap())
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn transform_examples() {
        let r = legendre(&field("0.5*x^2", &["x"]), &[2.0], None).unwrap();
        close(r.point[0], 2.0, 1e-12);
        close(r.value, 2.0, 1e-12);
        let r = legendre(&field("x^2", &["x"]), &[2.0], None).unwrap();
        close(r.point[0], 1.0, 1e-12);
        close(r.value, 1.0, 1e-12);
        let r = legendre(&field("exp(x)", &["x"]), &[1.0], None).unwrap();
        close(r.point[0], 0.0, 1e-12);
        close(r.value, -1.0, 1e-12);
    }

    #[test]
    fn singular_hessian_is_non_convex_point() {
        let err = legendre(&field("x^3", &["x"]), &[0.0], None).unwrap_err();
        assert!(matches!(err, LegendreError::NonConvexPoint { .. }), "{err:?}");
        let err = legendre(&field("x^3", &["x"]), &[1.0], None).unwrap_err();
        assert!(matches!(err, LegendreError::NonConvexPoint { ref point } if point == &vec![0.0]), "{err:?}");
    }

    #[test]
    fn inverse_check_examples() {
        assert!(legendre_inverse_check(&field("0.5*x^2", &["x"]), &[3.0]).unwrap() <= 1e-10);
        assert!(legendre_inverse_check(&field("x^4", &["x"]), &[1.0]).unwrap() <= 1e-9);
        assert!(legendre_inverse_check(&field("x^2 + exp(x)", &["x"]), &[0.5]).unwrap() <= 1e-9);
    }

    #[test]
    fn tilde_examples() {
        close(tilde(&field("x^2", &["x"]), &[3.0]).unwrap(), 9.0, 1e-12);
        close(tilde(&field("x^4", &["x"]), &[1.0]).unwrap(), 3.0, 1e-12);
        close(tilde(&field("2*x + 1", &["x"]), &[5.0]).unwrap(), -1.0, 1e-12);
        let t = tilde_tree(&ExprTree::parse("x^4", &["x"]).unwrap());
        close(t.eval(&[2.0]).unwrap(), 48.0, 1e-12);
    }

    #[test]
    fn tilde_grad_examples() {
        assert!(tilde_grad_check(&field("x^4", &["x"]), &[1.0]).unwrap() <= 1e-12);
        assert_eq!(tilde_grad_check(&field("0.5*(2*x1^2 + 2*x1*x2 + 3*x2^2)", &["x1", "x2"]), &[0.7, -1.3]).unwrap(), 0.0);
        assert!(tilde_grad_check(&field("sin(x)", &["x"]), &[0.3]).unwrap() <= 1e-10);
    }

    #[test]
    fn partial_examples() {
        let p = field("0.5*x1^2 + 0.5*x2^2 + x1*x2", &["x1", "x2"]);
        let r = partial_legendre(&p, &[1], &[1.0, 0.0], &[2.0], None).unwrap();
        close(r.point[0], 1.0, 1e-12);
        close(r.value, 0.0, 1e-12);

        let p = field("0.5*x1^2 + 0.5*x2^2", &["x1", "x2"]);
        // the x_I part passes through with a sign flip: value = ½b² − ½a²
        for a in [-2.0, 0.0, 3.5] {
            let r = partial_legendre(&p, &[1], &[a, 0.0], &[1.5], None).unwrap();
            close(r.point[0], 1.5, 1e-12);
            close(r.value, 0.5 * 1.5 * 1.5 - 0.5 * a * a, 1e-12);
        }

        let p = field("x2^4 + x1", &["x1", "x2"]);
        let r = partial_legendre(&p, &[1], &[0.0, 0.5], &[4.0], None).unwrap();
        close(r.point[0], 1.0, 1e-10);
        close(r.value, 3.0, 1e-10);
    }

    #[test]
    fn effective_hamiltonian_examples() {
        let v = field("0.5*x1^2 - 0.5*e_x2^2", &["x1", "e_x2"]);
        close(effective_hamiltonian(&v, 1, &[1.0, 3.0]).unwrap(), 5.0, 1e-12);
        let t = effective_hamiltonian_tree(v.tree(), 1);
        close(t.eval(&[-2.0, 0.5]).unwrap(), 2.125, 1e-12);

        let v = field("x1^2 + x2", &["x1", "x2", "e_x3"]);
        close(effective_hamiltonian(&v, 1, &[1.5, 2.0, -4.0]).unwrap(), 4.25, 1e-12);

        let v = field("e_x2*x1", &["x1", "e_x2"]);
        close(effective_hamiltonian(&v, 1, &[2.0, 5.0]).unwrap(), 0.0, 1e-12);
    }

    #[test]
    fn involution_on_grid() {
        let p = field("0.25*x^4 + 0.5*x^2 + 0.1*x^3", &["x"]);
        for i in 0..21 {
            let x = -1.0 + 0.1 * i as f64;
            let e = p.grad(&[x]).unwrap()[0];
            let pp = biconjugate(&p, &[x], &[e + 0.3]).unwrap();
            close(pp, p.value(&[x]).unwrap(), 1e-7);
        }
    }

    #[test]
    fn numeric_transform_matches_closed_form() {
        let p = field("x1^4 + x1^2 + x2^2 + 0.5*x1*x2 + x2^4", &["x1", "x2"]);
        for i in 0..21 {
            let t = -1.0 + 0.1 * i as f64;
            let x = [t, 0.5 * t - 0.2];
            let e: Vec<f64> = p.grad(&x).unwrap().iter().copied().collect();
            let r = legendre(&p, &e, None).unwrap();
            close(r.value, tilde(&p, &x).unwrap(), 1e-8);
        }
    }

    #[test]
    fn generating_identity_with_empty_i() {
        // V(e) − eᵀ∇V(e) = −Ṽ(e)
        let v = field("e_x1^4 - 0.5*e_x1*e_x2 + e_x2^2", &["e_x1", "e_x2"]);
        let h = effective_hamiltonian_tree(v.tree(), 2);
        let t = tilde_tree(v.tree());
        for k in 0..21 {
            let z = [-1.0 + 0.1 * k as f64, 0.3];
            close(h.eval(&z).unwrap() + t.eval(&z).unwrap(), 0.0, 1e-12);
        }
    }

    #[test]
    fn effective_hamiltonian_is_minus_partial_transform() {
        // x2 = -dV/de2 = e2 + e2^3 is invertible everywhere
        let v = field("0.5*x1^2 - 0.5*e_x2^2 - 0.25*e_x2^4", &["x1", "e_x2"]);
        for a in 0..21 {
            let x1 = -1.0 + 0.1 * a as f64;
            let x2 = 0.7 * x1;
            let r = partial_legendre(&v, &[1], &[x1, 0.0], &[-x2], None).unwrap();
            let h = effective_hamiltonian(&v, 1, &[x1, r.point[0]]).unwrap();
            close(h, -r.value, 1e-8);
        }
    }
}
