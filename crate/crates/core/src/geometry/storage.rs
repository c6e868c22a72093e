use nalgebra::{DMatrix, DVector};

use super::{
    multistart_points, GeometryError, ReportKind, SampleResult, ValidationReport, MORSE_RANK_TOLERANCE,
};
use crate::expr::{ExprTree, ScalarField};
use crate::numerics::{
    inf_norm, least_squares_newton, min_singular_value, newton_solve, pinv_solve, NewtonConfig, NumericsError,
};

/// A partition `I ∪ J` of the state indices `0..n` (zero-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSplit {
    i: Vec<usize>,
    j: Vec<usize>,
}

impl IndexSplit {
    pub fn new(i: Vec<usize>, j: Vec<usize>) -> Result<Self, GeometryError> {
        let n = i.len() + j.len();
        let mut seen = vec![false; n];
        for &idx in i.iter().chain(&j) {
            if idx >= n || seen[idx] {
                return Err(GeometryError::BadSplit { n });
            }
            seen[idx] = true;
        }
        Ok(IndexSplit { i, j })
    }

    pub fn i(&self) -> &[usize] {
        &self.i
    }
    pub fn j(&self) -> &[usize] {
        &self.j
    }
    pub fn n(&self) -> usize {
        self.i.len() + self.j.len()
    }
}

/// Local representation of the energy-storing Lagrangian submanifold.
#[derive(Debug, Clone)]
pub enum StorageRelation {
    /// `L = graph ∇H`, `H` over the `n` state variables.
    Explicit { h: ScalarField },
    /// `e_I = ∂V/∂x_I`, `x_J = -∂V/∂e_J`, `V` over `(x_I, e_J)` in that order.
    Generating { split: IndexSplit, v: ScalarField },
    /// `e = ∂F/∂x` on `∂F/∂λ = 0`, `F` over `(x, λ)` with `λ ∈ R^k`.
    Morse { k: usize, f: ScalarField },
}

impl StorageRelation {
    pub fn explicit(h: ExprTree) -> Self {
        StorageRelation::Explicit { h: ScalarField::new(h) }
    }

    pub fn generating(split: IndexSplit, v: ExprTree) -> Result<Self, GeometryError> {
        if v.nvars() != split.n() {
            return Err(GeometryError::Dimension(format!(
                "generating function has {} variables, split covers {}",
                v.nvars(),
                split.n()
            )));
        }
        Ok(StorageRelation::Generating { split, v: ScalarField::new(v) })
    }

    pub fn morse(k: usize, f: ExprTree) -> Result<Self, GeometryError> {
        if k == 0 || f.nvars() <= k {
            return Err(GeometryError::Dimension(format!(
                "Morse family needs 1 <= k < #variables, got k = {k} over {} variables",
                f.nvars()
            )));
        }
        Ok(StorageRelation::Morse { k, f: ScalarField::new(f) })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            StorageRelation::Explicit { h } => h.nvars(),
            StorageRelation::Generating { split, .. } => split.n(),
            StorageRelation::Morse { k, f } => f.nvars() - k,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StorageRelation::Explicit { .. } => "explicit Hamiltonian",
            StorageRelation::Generating { .. } => "generating function",
            StorageRelation::Morse { .. } => "Morse family",
        }
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self, StorageRelation::Explicit { .. })
    }
}

fn check_len(x: &[f64], n: usize, what: &str) -> Result<(), GeometryError> {
    if x.len() != n {
        return Err(GeometryError::Dimension(format!("{what} has {} coordinates, expected {n}", x.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub residual: f64,
    /// Internal coordinates (`λ` for Morse families) realizing the residual.
    pub witness: Option<Vec<f64>>,
}

/// Distance-like residual of `(x, e)` from the storage submanifold.
pub fn lagrangian_membership(
    s: &StorageRelation,
    x: &[f64],
    e: &[f64],
    tol: f64,
    seed: u64,
) -> Result<Membership, GeometryError> {
    let n = s.state_dim();
    check_len(x, n, "state")?;
    check_len(e, n, "effort")?;
    match s {
        StorageRelation::Explicit { h } => {
            let g = h.grad(x)?;
            let residual = e.iter().zip(g.iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            Ok(Membership { member: residual <= tol, residual, witness: None })
        }
        StorageRelation::Generating { split, v } => {
            let z: Vec<f64> = split.i().iter().map(|&i| x[i]).chain(split.j().iter().map(|&j| e[j])).collect();
            let g = v.grad(&z)?;
            let ni = split.i().len();
            let mut residual = 0.0_f64;
            for (a, &i) in split.i().iter().enumerate() {
                residual = residual.max((e[i] - g[a]).abs());
            }
            for (b, &j) in split.j().iter().enumerate() {
                residual = residual.max((x[j] + g[ni + b]).abs());
            }
            Ok(Membership { member: residual <= tol, residual, witness: None })
        }
        StorageRelation::Morse { k, f } => {
            let k = *k;
            let point = |lam: &DVector<f64>| -> Vec<f64> { x.iter().copied().chain(lam.iter().copied()).collect() };
            let residual = |lam: &DVector<f64>| -> Result<DVector<f64>, NumericsError> {
                let g = f.grad(&point(lam))?;
                let mut r = DVector::zeros(k + n);
                for a in 0..k {
                    r[a] = g[n + a];
                }
                for i in 0..n {
                    r[k + i] = g[i] - e[i];
                }
                Ok(r)
            };
            let jacobian = |lam: &DVector<f64>| -> Result<DMatrix<f64>, NumericsError> {
                let h = f.hessian(&point(lam))?;
                let mut jm = DMatrix::zeros(k + n, k);
                for b in 0..k {
                    for a in 0..k {
                        jm[(a, b)] = h[(n + a, n + b)];
                    }
                    for i in 0..n {
                        jm[(k + i, b)] = h[(i, n + b)];
                    }
                }
                Ok(jm)
            };
            let cfg = NewtonConfig { tolerance: 1e-13, ..NewtonConfig::default() };
            let mut best: Option<(f64, DVector<f64>)> = None;
            for start in multistart_points(k, seed) {
                let Ok(out) = least_squares_newton(&residual, &jacobian, &start, &cfg) else { continue };
                if best.as_ref().is_none_or(|(r, _)| out.residual_norm < *r) {
                    best = Some((out.residual_norm, out.x));
                }
                if best.as_ref().is_some_and(|(r, _)| *r <= tol) {
                    break;
                }
            }
            match best {
                Some((residual, lam)) => {
                    Ok(Membership { member: residual <= tol, residual, witness: Some(lam.iter().copied().collect()) })
                }
                None => Err(GeometryError::Inconclusive { point: x.to_vec() }),
            }
        }
    }
}

/// Outcome of a `x ∈ π(L)` probe.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub feasible: bool,
    /// `e_J` for generating functions, `λ` for Morse families.
    pub witness: Option<Vec<f64>>,
    /// True when the verdict was reached by linear algebra on an affine equation.
    pub exact: bool,
}

/// Solve a square system `r(u) = 0` for existence. Affine systems are decided
/// exactly; otherwise multi-start Newton is tried from the seeded lattice.
fn probe_square<R, J>(dim: usize, affine: bool, residual: R, jacobian: J, seed: u64) -> Result<Option<Probe>, GeometryError>
where
    R: Fn(&DVector<f64>) -> Result<DVector<f64>, NumericsError>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>, NumericsError>,
{
    if dim == 0 {
        return Ok(Some(Probe { feasible: true, witness: Some(Vec::new()), exact: true }));
    }
    if affine {
        let u0 = DVector::zeros(dim);
        let c = residual(&u0)?;
        let a = jacobian(&u0)?;
        let u = pinv_solve(&a, &(-&c));
        let res = inf_norm(&(&a * &u + &c));
        let feasible = res <= 1e-10 * (1.0 + inf_norm(&c));
        return Ok(Some(Probe { feasible, witness: feasible.then(|| u.iter().copied().collect()), exact: true }));
    }
    let cfg = NewtonConfig::default();
    for start in multistart_points(dim, seed) {
        if let Ok(sol) = newton_solve(&residual, &jacobian, &start, &cfg) {
            return Ok(Some(Probe { feasible: true, witness: Some(sol.x.iter().copied().collect()), exact: false }));
        }
    }
    Ok(None)
}

/// Decide whether `x` lies in the projection of the storage submanifold.
pub fn lagrange_constraint_probe(s: &StorageRelation, x: &[f64], seed: u64) -> Result<Probe, GeometryError> {
    let n = s.state_dim();
    check_len(x, n, "state")?;
    let probe = match s {
        StorageRelation::Explicit { .. } => Some(Probe { feasible: true, witness: None, exact: true }),
        StorageRelation::Generating { split, v } => {
            let ni = split.i().len();
            let d = split.j().len();
            let z = |u: &DVector<f64>| -> Vec<f64> {
                split.i().iter().map(|&i| x[i]).chain(u.iter().copied()).collect()
            };
            let affine = (0..d).all(|a| (0..d).all(|b| (0..d).all(|c| !v.second_partial_depends_on(ni + a, ni + b, ni + c))));
            probe_square(
                d,
                affine,
                |u| {
                    let g = v.grad(&z(u))?;
                    Ok(DVector::from_iterator(d, split.j().iter().enumerate().map(|(b, &j)| x[j] + g[ni + b])))
                },
                |u| {
                    let zz = z(u);
                    let mut jm = DMatrix::zeros(d, d);
                    for a in 0..d {
                        for b in 0..d {
                            jm[(a, b)] = v.second_partial(ni + a, ni + b, &zz)?;
                        }
                    }
                    Ok(jm)
                },
                seed,
            )?
        }
        StorageRelation::Morse { k, f } => {
            let k = *k;
            let w = |u: &DVector<f64>| -> Vec<f64> { x.iter().copied().chain(u.iter().copied()).collect() };
            let affine = (0..k).all(|a| (0..k).all(|b| (0..k).all(|c| !f.second_partial_depends_on(n + a, n + b, n + c))));
            probe_square(
                k,
                affine,
                |u| {
                    let g = f.grad(&w(u))?;
                    Ok(DVector::from_iterator(k, (0..k).map(|a| g[n + a])))
                },
                |u| {
                    let h = f.hessian(&w(u))?;
                    Ok(h.view((n, n), (k, k)).into_owned())
                },
                seed,
            )?
        }
    };
    probe.ok_or_else(|| GeometryError::Inconclusive { point: x.to_vec() })
}

/// Locate points of the zero set `∂F/∂λ = 0` near each sample and check the
/// rank of the `k x (n + k)` block `∂²F/∂λ∂(x, λ)` there.
pub fn validate_morse(s: &StorageRelation, samples: &[Vec<f64>], seed: u64) -> Result<ValidationReport, GeometryError> {
    let StorageRelation::Morse { k, f } = s else {
        return Err(GeometryError::WrongStorage("Morse family"));
    };
    let k = *k;
    let n = f.nvars() - k;
    let residual = |w: &DVector<f64>| -> Result<DVector<f64>, NumericsError> {
        let g = f.grad(w.as_slice())?;
        Ok(DVector::from_iterator(k, (0..k).map(|a| g[n + a])))
    };
    let jacobian = |w: &DVector<f64>| -> Result<DMatrix<f64>, NumericsError> {
        let h = f.hessian(w.as_slice())?;
        Ok(h.rows(n, k).into_owned())
    };
    let locate = NewtonConfig::default();
    let polish = NewtonConfig { tolerance: 1e-30, max_iterations: 200, ..NewtonConfig::default() };
    let mut out = Vec::new();
    for x in samples {
        check_len(x, n, "sample")?;
        for start in multistart_points(k, seed) {
            let w0 = DVector::from_iterator(n + k, x.iter().copied().chain(start.iter().copied()));
            let Ok(found) = least_squares_newton(&residual, &jacobian, &w0, &locate) else { continue };
            if !found.converged {
                continue;
            }
            let w = least_squares_newton(&residual, &jacobian, &found.x, &polish).map(|p| p.x).unwrap_or(found.x);
            let block = jacobian(&w)?;
            let sigma = min_singular_value(&block);
            out.push(SampleResult {
                point: w.iter().copied().collect(),
                isotropy: None,
                skewness: None,
                dimension: None,
                expected_dimension: None,
                morse_sigma_min: Some(sigma),
                passed: sigma >= MORSE_RANK_TOLERANCE,
            });
            break;
        }
    }
    if out.is_empty() {
        return Err(GeometryError::NoZeroSetPointFound);
    }
    Ok(ValidationReport::new(ReportKind::Morse, out))
}
