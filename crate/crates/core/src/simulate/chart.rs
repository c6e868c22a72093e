//! Local coordinates `z` on the storage submanifold: `z = x` for an explicit
//! Hamiltonian, `z = (x_I, e_J)` for a generating function.

use nalgebra::{DMatrix, DVector};

use crate::expr::ScalarField;
use crate::geometry::{IndexSplit, StorageRelation};
use crate::legendre::effective_hamiltonian_tree;
use crate::numerics::{min_singular_value, solve_linear, NumericsError};
use crate::phsystem::PHSystem;

/// Chart map evaluated at a point, with first derivatives.
#[derive(Debug, Clone)]
pub(crate) struct ChartPoint {
    pub x: DVector<f64>,
    pub e: DVector<f64>,
    /// `∂x/∂z`
    pub dx: DMatrix<f64>,
    /// `∂e/∂z`
    pub de: DMatrix<f64>,
}

#[derive(Debug, Clone)]
enum Kind {
    Identity { h: ScalarField },
    Generating { split: IndexSplit, v: ScalarField, energy: ScalarField },
}

#[derive(Debug, Clone)]
pub(crate) struct Chart {
    kind: Kind,
    n: usize,
    /// State rows `j ∈ J` whose chart coordinate `x_j = −∂V/∂e_j` is constant
    /// and which carry no multiplier, port or dissipation coupling; along
    /// solutions `(J e)_j = 0` must hold there.
    hidden: Vec<usize>,
}

impl Chart {
    /// `None` for Morse-family storage, which is simulated after conversion.
    pub fn new(sys: &PHSystem) -> Option<Chart> {
        let n = sys.n();
        match sys.storage() {
            StorageRelation::Explicit { h } => Some(Chart { kind: Kind::Identity { h: h.clone() }, n, hidden: Vec::new() }),
            StorageRelation::Generating { split, v } => {
                let ni = split.i().len();
                let d = sys.dirac();
                let zero_row = |m: &crate::expr::MatrixExpr, r: usize| (0..m.cols()).all(|c| m.get(r, c).simplified().is_zero());
                let hidden = split
                    .j()
                    .iter()
                    .enumerate()
                    .filter(|&(b, &j)| {
                        (0..v.nvars()).all(|c| !v.partial_depends_on(ni + b, c))
                            && zero_row(d.b(), j)
                            && zero_row(d.g(), j)
                            && zero_row(d.g_r(), j)
                    })
                    .map(|(_, &j)| j)
                    .collect();
                let energy = ScalarField::new(effective_hamiltonian_tree(v.tree(), split.j().len()));
                Some(Chart { kind: Kind::Generating { split: split.clone(), v: v.clone(), energy }, n, hidden })
            }
            StorageRelation::Morse { .. } => None,
        }
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn split(&self) -> Option<&IndexSplit> {
        match &self.kind {
            Kind::Identity { .. } => None,
            Kind::Generating { split, .. } => Some(split),
        }
    }

    pub fn x(&self, z: &[f64]) -> Result<DVector<f64>, NumericsError> {
        match &self.kind {
            Kind::Identity { .. } => Ok(DVector::from_column_slice(z)),
            Kind::Generating { split, v, .. } => {
                let ni = split.i().len();
                let mut x = DVector::zeros(self.n);
                for (a, &i) in split.i().iter().enumerate() {
                    x[i] = z[a];
                }
                for (b, &j) in split.j().iter().enumerate() {
                    x[j] = -v.partial(ni + b, z)?;
                }
                Ok(x)
            }
        }
    }

    pub fn eval(&self, z: &[f64]) -> Result<ChartPoint, NumericsError> {
        let n = self.n;
        match &self.kind {
            Kind::Identity { h } => Ok(ChartPoint {
                x: DVector::from_column_slice(z),
                e: h.grad(z)?,
                dx: DMatrix::identity(n, n),
                de: h.hessian(z)?,
            }),
            Kind::Generating { split, v, .. } => {
                let ni = split.i().len();
                let g = v.grad(z)?;
                let hs = v.hessian(z)?;
                let mut p = ChartPoint {
                    x: DVector::zeros(n),
                    e: DVector::zeros(n),
                    dx: DMatrix::zeros(n, n),
                    de: DMatrix::zeros(n, n),
                };
                for (a, &i) in split.i().iter().enumerate() {
                    p.x[i] = z[a];
                    p.e[i] = g[a];
                    p.dx[(i, a)] = 1.0;
                    p.de.row_mut(i).copy_from(&hs.row(a));
                }
                for (b, &j) in split.j().iter().enumerate() {
                    p.x[j] = -g[ni + b];
                    p.e[j] = z[ni + b];
                    p.dx.row_mut(j).copy_from(&(-hs.row(ni + b)));
                    p.de[(j, ni + b)] = 1.0;
                }
                Ok(p)
            }
        }
    }

    /// Stored energy: `H(x)`, or `H̃ = V − e_Jᵀ∂V/∂e_J` in a generating chart.
    pub fn energy(&self, z: &[f64]) -> Result<f64, NumericsError> {
        match &self.kind {
            Kind::Identity { h } => Ok(h.value(z)?),
            Kind::Generating { energy, .. } => Ok(energy.value(z)?),
        }
    }

    /// True when the `∂²V/∂e_J²` block is singular at `z`.
    pub fn costate_block_singular(&self, z: &[f64]) -> Result<bool, NumericsError> {
        match &self.kind {
            Kind::Identity { .. } => Ok(false),
            Kind::Generating { split, v, .. } => {
                let ni = split.i().len();
                let d = split.j().len();
                let h = v.hessian(z)?;
                Ok(min_singular_value(&h.view((ni, ni), (d, d)).into_owned()) < 1e-12)
            }
        }
    }

    /// Initial chart point for a state: `z = x`, or `(x_I, e_J)` with `e_J` given.
    pub fn z_from(&self, x: &[f64], internal: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Identity { .. } => x.to_vec(),
            Kind::Generating { split, .. } => split.i().iter().map(|&i| x[i]).chain(internal.iter().copied()).collect(),
        }
    }
}

/// `σ_min` of the constraint block `(∂c/∂z)(∂x/∂z)⁻¹B` with `c(z) = Bᵀ(x(z))e(z)`,
/// which reduces to `Bᵀ∇²H B` for an explicit Hamiltonian and constant `B`.
/// Falls back to `σ_min [[∂x/∂z, −B], [∂c/∂z, 0]]` if the chart map is singular.
pub(crate) fn index_sigma(
    p: &ChartPoint,
    b: &DMatrix<f64>,
    db: &[DMatrix<f64>],
) -> f64 {
    let (n, k) = b.shape();
    if k == 0 {
        return f64::INFINITY;
    }
    let dc = constraint_jacobian(p, b, db);
    if min_singular_value(&p.dx) >= 1e-12 {
        let mut cols = DMatrix::zeros(n, k);
        let mut ok = true;
        for a in 0..k {
            match solve_linear(&p.dx, &b.column(a).into_owned()) {
                Ok(c) => cols.set_column(a, &c),
                Err(_) => ok = false,
            }
        }
        if ok {
            return min_singular_value(&(&dc * cols));
        }
    }
    let mut aug = DMatrix::zeros(n + k, n + k);
    aug.view_mut((0, 0), (n, n)).copy_from(&p.dx);
    aug.view_mut((0, n), (n, k)).copy_from(&(-b));
    aug.view_mut((n, 0), (k, n)).copy_from(&dc);
    min_singular_value(&aug)
}

/// `∂/∂z [Bᵀ(x(z)) e(z)]`, given `B` and its coordinate derivatives at `x(z)`.
pub(crate) fn constraint_jacobian(p: &ChartPoint, b: &DMatrix<f64>, db: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (n, k) = b.shape();
    let mut cx = DMatrix::zeros(k, n);
    for (i, d) in db.iter().enumerate() {
        if d.iter().any(|v| *v != 0.0) {
            cx.set_column(i, &(d.transpose() * &p.e));
        }
    }
    cx * &p.dx + b.transpose() * &p.de
}
