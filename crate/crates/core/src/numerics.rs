//! Dense linear solves, damped Newton iteration and finite-difference oracles.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("singular matrix: pivot {pivot:e} in column {column} below threshold")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e}): {reason}")]
    NoConvergence { iterations: usize, residual: f64, reason: &'static str },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Relative pivot magnitude below which a matrix is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting on scaled rows.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, NumericsError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(NumericsError::Dimension { expected: n, got: a.ncols() });
    }
    if b.len() != n {
        return Err(NumericsError::Dimension { expected: n, got: b.len() });
    }
    let mut m = a.clone();
    let mut rhs = b.clone();
    let scale: Vec<f64> = (0..n).map(|i| m.row(i).iter().fold(0.0_f64, |s, v| s.max(v.abs()))).collect();
    let mut row_scale = scale.clone();

    for col in 0..n {
        let (piv, piv_ratio) = (col..n)
            .map(|r| {
                let s = row_scale[r];
                (r, if s > 0.0 { m[(r, col)].abs() / s } else { 0.0 })
            })
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_ratio < PIVOT_TOLERANCE {
            return Err(NumericsError::SingularMatrix { column: col, pivot: m[(piv, col)] });
        }
        if piv != col {
            m.swap_rows(piv, col);
            rhs.swap_rows(piv, col);
            row_scale.swap(piv, col);
        }
        let p = m[(col, col)];
        for r in col + 1..n {
            let f = m[(r, col)] / p;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m[(col, c)];
                m[(r, c)] -= f * v;
            }
            let v = rhs[col];
            rhs[r] -= f * v;
        }
    }

    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= m[(i, j)] * x[j];
        }
        x[i] = s / m[(i, i)];
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Infinity-norm residual tolerance.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tolerance: 1e-10, max_iterations: 50, max_halvings: 20 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tolerance > 0.0) {
            return Err(format!("newton tolerance must be positive, got {}", self.tolerance));
        }
        if self.max_iterations < 1 {
            return Err("newton needs at least one iteration".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Damped Newton iteration for a square system.
///
/// A step is accepted only if it lowers the infinity norm of the residual;
/// otherwise it is halved, at most `max_halvings` times. Errors returned by the
/// closures are propagated unchanged. A singular Jacobian at the starting point
/// is reported as [`NumericsError::SingularMatrix`]; at a later iterate it ends
/// the iteration as [`NumericsError::NoConvergence`].
pub fn newton_solve<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: &DVector<f64>,
    cfg: &NewtonConfig,
) -> Result<NewtonSolution, NumericsError>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>, NumericsError>,
    J: FnMut(&DVector<f64>) -> Result<DMatrix<f64>, NumericsError>,
{
    let mut x = x0.clone();
    let mut r = residual(&x)?;
    if r.len() != x.len() {
        return Err(NumericsError::Dimension { expected: x.len(), got: r.len() });
    }
    let mut rn = inf_norm(&r);
    for it in 0..cfg.max_iterations {
        if rn <= cfg.tolerance {
            return Ok(NewtonSolution { x, iterations: it, residual_norm: rn });
        }
        let jac = jacobian(&x)?;
        let dx = match solve_linear(&jac, &(-&r)) {
            Ok(dx) => dx,
            Err(e @ NumericsError::SingularMatrix { .. }) if it == 0 => return Err(e),
            Err(NumericsError::SingularMatrix { .. }) => {
                return Err(NumericsError::NoConvergence {
                    iterations: it,
                    residual: rn,
                    reason: "Jacobian became singular",
                })
            }
            Err(e) => return Err(e),
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial = &x + &dx * alpha;
            if let Ok(rt) = residual(&trial) {
                let tn = inf_norm(&rt);
                if tn < rn {
                    x = trial;
                    r = rt;
                    rn = tn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(NumericsError::NoConvergence {
                iterations: it + 1,
                residual: rn,
                reason: "line search could not reduce the residual",
            });
        }
    }
    if rn <= cfg.tolerance {
        return Ok(NewtonSolution { x, iterations: cfg.max_iterations, residual_norm: rn });
    }
    Err(NumericsError::NoConvergence {
        iterations: cfg.max_iterations,
        residual: rn,
        reason: "iteration budget exhausted",
    })
}

/// Result of a least-squares Newton run; always carries the best iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresOutcome {
    pub x: DVector<f64>,
    /// Infinity norm of the residual at `x`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve `a x = b` in the minimum-norm least-squares sense.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, s| m.max(*s));
    if smax == 0.0 {
        return DVector::zeros(a.ncols());
    }
    svd.solve(b, smax * 1e-14).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Gauss-Newton with minimum-norm steps, for rectangular or rank-deficient
/// systems. Over-determined systems converge to a least-squares point,
/// under-determined ones to a nearby solution.
pub fn least_squares_newton<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: &DVector<f64>,
    cfg: &NewtonConfig,
) -> Result<LeastSquaresOutcome, NumericsError>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>, NumericsError>,
    J: FnMut(&DVector<f64>) -> Result<DMatrix<f64>, NumericsError>,
{
    let mut x = x0.clone();
    let mut r = residual(&x)?;
    let mut rn2 = r.norm();
    let mut iterations = 0;
    while iterations < cfg.max_iterations && inf_norm(&r) > cfg.tolerance {
        let jac = jacobian(&x)?;
        let dx = pinv_solve(&jac, &(-&r));
        if dx.iter().all(|v| *v == 0.0) {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial = &x + &dx * alpha;
            if let Ok(rt) = residual(&trial) {
                let tn = rt.norm();
                if tn < rn2 {
                    x = trial;
                    r = rt;
                    rn2 = tn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    let residual_norm = inf_norm(&r);
    Ok(LeastSquaresOutcome { x, residual_norm, iterations, converged: residual_norm <= cfg.tolerance })
}

/// Central-difference gradient. Test oracle only; production paths
/// differentiate expressions structurally.
pub fn finite_diff_grad<E>(
    mut f: impl FnMut(&[f64]) -> Result<f64, E>,
    x: &[f64],
    h: f64,
) -> Result<DVector<f64>, E> {
    let mut g = DVector::zeros(x.len());
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let fp = f(&p)?;
        p[i] = x[i] - h;
        let fm = f(&p)?;
        p[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Smallest of the `min(rows, cols)` singular values; `+inf` for an empty matrix.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(f64::INFINITY)
}

/// Numerical rank with singular values below `rel_tol * largest` discarded.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|v| **v > rel_tol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis (as columns) of the orthogonal complement of the column
/// space of `b` (`n x k`), i.e. of `ker b^T`.
pub fn left_null_space(b: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = b.nrows();
    if b.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = b.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, s| m.max(*s));
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > rel_tol * smax && smax > 0.0).collect();
    let mut proj = DMatrix::<f64>::identity(n, n);
    for &i in &keep {
        let c = u.column(i);
        proj -= c * c.transpose();
    }
    let eig = proj.symmetric_eigen();
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar(f: impl Fn(f64) -> f64) -> impl FnMut(&DVector<f64>) -> Result<DVector<f64>, NumericsError> {
        move |x| Ok(DVector::from_element(1, f(x[0])))
    }

    fn scalar_jac(f: impl Fn(f64) -> f64) -> impl FnMut(&DVector<f64>) -> Result<DMatrix<f64>, NumericsError> {
        move |x| Ok(DMatrix::from_element(1, 1, f(x[0])))
    }

    #[test]
    fn solve_linear_examples() {
        let x = solve_linear(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(x.as_slice(), &[3.0, 4.0]);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let x = solve_linear(&a, &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            solve_linear(&s, &DVector::from_vec(vec![1.0, 0.0])),
            Err(NumericsError::SingularMatrix { .. })
        ));
    }

    #[test]
    fn newton_examples() {
        let cfg = NewtonConfig::default();
        let x0 = DVector::from_element(1, 3.0);
        let sol = newton_solve(scalar(|x| x * x - 4.0), scalar_jac(|x| 2.0 * x), &x0, &cfg).unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-10);

        let x0 = DVector::from_element(1, 0.0);
        let sol = newton_solve(scalar(|x| 2.0 * x - 4.0), scalar_jac(|_| 2.0), &x0, &cfg).unwrap();
        assert_eq!(sol.x[0], 2.0);
        assert_eq!(sol.iterations, 1);

        let x0 = DVector::from_element(1, 1.0);
        let err = newton_solve(scalar(|x| x * x + 1.0), scalar_jac(|x| 2.0 * x), &x0, &cfg).unwrap_err();
        assert!(matches!(err, NumericsError::NoConvergence { .. }), "{err:?}");
    }

    #[test]
    fn newton_singular_start() {
        let x0 = DVector::from_element(1, 0.0);
        let err =
            newton_solve(scalar(|x| x * x + 1.0), scalar_jac(|x| 2.0 * x), &x0, &NewtonConfig::default()).unwrap_err();
        assert!(matches!(err, NumericsError::SingularMatrix { .. }));
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_diff_grad(|x: &[f64]| Ok::<_, ()>(x[0] * x[0]), &[1.0], DEFAULT_FD_STEP).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-8);
        let g = finite_diff_grad(|_: &[f64]| Ok::<_, ()>(7.0), &[1.0, 2.0], DEFAULT_FD_STEP).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-12));
        let g = finite_diff_grad(|x: &[f64]| Ok::<_, ()>(x[0].sin()), &[0.0], DEFAULT_FD_STEP).unwrap();
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn finite_difference_propagates_errors() {
        let r = finite_diff_grad(|x: &[f64]| if x[0] < 0.0 { Err("domain") } else { Ok(x[0].ln()) }, &[0.0], 1e-6);
        assert_eq!(r.unwrap_err(), "domain");
    }

    #[test]
    fn least_squares_handles_rectangular_systems() {
        // x = 3 and x = 5 simultaneously: best fit 4
        let r = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0] - 3.0, x[0] - 5.0]));
        let j = |_: &DVector<f64>| Ok(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let out = least_squares_newton(r, j, &DVector::zeros(1), &NewtonConfig::default()).unwrap();
        assert!(!out.converged);
        assert_abs_diff_eq!(out.x[0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.residual_norm, 1.0, epsilon = 1e-12);

        // one equation, two unknowns: minimum-norm correction
        let r = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0] + x[1] - 2.0]));
        let j = |_: &DVector<f64>| Ok(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        let out = least_squares_newton(r, j, &DVector::zeros(2), &NewtonConfig::default()).unwrap();
        assert!(out.converged);
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn left_null_space_of_column() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let k = left_null_space(&b, 1e-8);
        assert_eq!(k.ncols(), 1);
        assert!((b.transpose() * &k).norm() < 1e-14);
        let full = left_null_space(&DMatrix::identity(2, 2), 1e-8);
        assert_eq!(full.ncols(), 0);
    }

    proptest! {
        // monotone cubic a x^3 + b x + c with a, b > 0; the root is bracketed in [-L, L]
        #[test]
        fn newton_converges_on_monotone_cubics(
            a in 0.1f64..3.0, b in 0.1f64..3.0, c in -5.0f64..5.0, t in 0.0f64..1.0,
        ) {
            let lo = -10.0;
            let hi = 10.0;
            let f = move |x: f64| a * x * x * x + b * x + c;
            prop_assume!(f(lo) < 0.0 && f(hi) > 0.0);
            let x0 = DVector::from_element(1, lo + t * (hi - lo));
            let sol = newton_solve(scalar(f), scalar_jac(move |x| 3.0 * a * x * x + b), &x0,
                &NewtonConfig::default()).unwrap();
            prop_assert!(f(sol.x[0]).abs() <= 1e-10);
        }

        #[test]
        fn solve_linear_residual_is_small(
            entries in proptest::collection::vec(-1.0f64..1.0, 16),
            rhs in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let a = DMatrix::from_row_slice(4, 4, &entries) + DMatrix::identity(4, 4) * 3.0;
            let s = singular_values(&a);
            prop_assume!(s[0] / s[3] < 1e6);
            let b = DVector::from_vec(rhs);
            let x = solve_linear(&a, &b).unwrap();
            prop_assert!((&a * &x - &b).norm() <= 1e-9 * (1.0 + b.norm()));
        }
    }
}
