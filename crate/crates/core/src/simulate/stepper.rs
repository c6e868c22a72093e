use nalgebra::{DMatrix, DVector};

use super::chart::{constraint_jacobian, index_sigma, Chart, ChartPoint};
use super::{SimError, StepError, INDEX_TOLERANCE};
use crate::expr::{ExprTree, ScalarField};
use crate::geometry::{GeometryError, RANK_TOLERANCE};
use crate::numerics::{least_squares_newton, newton_solve, numerical_rank, NewtonConfig, NumericsError};
use crate::phsystem::PHSystem;

/// Structure matrices and their coordinate derivatives at a state.
struct Frame {
    j: DMatrix<f64>,
    b: DMatrix<f64>,
    g_r: DMatrix<f64>,
    g: DMatrix<f64>,
    dj: Vec<DMatrix<f64>>,
    db: Vec<DMatrix<f64>>,
    dg_r: Vec<DMatrix<f64>>,
    dg: Vec<DMatrix<f64>>,
}

/// One chart state along a trajectory.
#[derive(Debug, Clone)]
pub(crate) struct State {
    pub z: DVector<f64>,
    /// Scaled multiplier `dt·λ*` from the last step, used as a warm start.
    pub nu: DVector<f64>,
}

/// Per-step quantities for diagnostics.
#[derive(Debug, Clone)]
pub(crate) struct StepReport {
    pub lambda: DVector<f64>,
    pub port_power: f64,
    /// `e_Rᵀ f_R = −f_Rᵀ R̄ f_R`
    pub dissipation_power: f64,
    pub sigma: f64,
}

pub(crate) struct Stepper<'a> {
    sys: &'a PHSystem,
    chart: Chart,
    inputs: Vec<ExprTree>,
    newton: NewtonConfig,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a PHSystem, inputs: Vec<ExprTree>, newton: NewtonConfig) -> Option<Self> {
        Some(Stepper { sys, chart: Chart::new(sys)?, inputs, newton })
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn input(&self, t: f64) -> Result<DVector<f64>, NumericsError> {
        let m = self.sys.m_p();
        if self.inputs.is_empty() {
            return Ok(DVector::zeros(m));
        }
        let u = self.inputs.iter().map(|s| s.eval(&[t])).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(u))
    }

    fn frame(&self, x: &[f64], derivatives: bool) -> Result<Frame, NumericsError> {
        let d = self.sys.dirac();
        let der = |f: &crate::expr::MatrixField| -> Result<Vec<DMatrix<f64>>, NumericsError> {
            if derivatives {
                Ok(f.derivatives(x)?)
            } else {
                Ok(Vec::new())
            }
        };
        Ok(Frame {
            j: d.j_field().eval(x)?,
            b: d.b_field().eval(x)?,
            g_r: d.g_r_field().eval(x)?,
            g: d.g_field().eval(x)?,
            dj: der(d.j_field())?,
            db: der(d.b_field())?,
            dg_r: der(d.g_r_field())?,
            dg: der(d.g_field())?,
        })
    }

    /// `J − G_R R̄ G_Rᵀ`
    fn m(&self, f: &Frame) -> DMatrix<f64> {
        &f.j - &f.g_r * self.sys.rbar() * f.g_r.transpose()
    }

    /// `∂/∂x_i` of `(J − G_R R̄ G_Rᵀ)`
    fn dm(&self, f: &Frame, i: usize) -> DMatrix<f64> {
        let rb = self.sys.rbar();
        let mut d = f.dj[i].clone();
        if f.g_r.ncols() > 0 {
            d -= &f.dg_r[i] * rb * f.g_r.transpose() + &f.g_r * rb * f.dg_r[i].transpose();
        }
        d
    }

    pub fn index_sigma_at(&self, z: &[f64]) -> Result<f64, NumericsError> {
        if self.sys.k() == 0 {
            return Ok(f64::INFINITY);
        }
        let p = self.chart.eval(z)?;
        let f = self.frame(p.x.as_slice(), true)?;
        Ok(index_sigma(&p, &f.b, &f.db))
    }

    /// One implicit-midpoint step from `s` over `[t, t + dt]`.
    ///
    /// Unknowns are `z⁺` and `ν = dt·λ*`; the residual is
    /// `[x(z⁺) − x(z) − dt((J − R)e + Gu)(z_m) − B(x_m)ν ; Bᵀ(x(z⁺))e(z⁺)]`.
    pub fn step(&self, s: &State, t: f64, dt: f64) -> Result<(State, StepReport), StepError> {
        let n = self.sys.n();
        let k = self.sys.k();
        let z0 = &s.z;
        let x0 = self.chart.x(z0.as_slice()).map_err(|e| StepError::from_numerics(t, e))?;
        let tm = t + 0.5 * dt;
        let u = self.input(tm).map_err(|e| StepError::from_numerics(t, e))?;

        let residual = |w: &DVector<f64>| -> Result<DVector<f64>, NumericsError> {
            let zp = w.rows(0, n);
            let nu = w.rows(n, k);
            let zm: DVector<f64> = (z0 + zp) * 0.5;
            let pm = self.chart.eval(zm.as_slice())?;
            let fm = self.frame(pm.x.as_slice(), false)?;
            let pp = self.chart.eval(zp.as_slice())?;
            let fp = self.frame(pp.x.as_slice(), false)?;
            let mut r = DVector::zeros(n + k);
            let r1 = &pp.x - &x0 - (self.m(&fm) * &pm.e + &fm.g * &u) * dt - &fm.b * nu;
            r.rows_mut(0, n).copy_from(&r1);
            if k > 0 {
                r.rows_mut(n, k).copy_from(&(fp.b.transpose() * &pp.e));
            }
            Ok(r)
        };
        let jacobian = |w: &DVector<f64>| -> Result<DMatrix<f64>, NumericsError> {
            let zp = w.rows(0, n);
            let nu = w.rows(n, k).into_owned();
            let zm: DVector<f64> = (z0 + zp) * 0.5;
            let pm = self.chart.eval(zm.as_slice())?;
            let fm = self.frame(pm.x.as_slice(), true)?;
            let pp = self.chart.eval(zp.as_slice())?;
            let fp = self.frame(pp.x.as_slice(), k > 0)?;
            let mm = self.m(&fm);
            // ∂/∂x of dt(M e + G u) + B ν at the midpoint, e held fixed
            let mut wx = DMatrix::zeros(n, n);
            for i in 0..n {
                let mut col = self.dm(&fm, i) * &pm.e * dt;
                if fm.g.ncols() > 0 {
                    col += &fm.dg[i] * &u * dt;
                }
                if k > 0 {
                    col += &fm.db[i] * &nu;
                }
                wx.set_column(i, &col);
            }
            let mut jac = DMatrix::zeros(n + k, n + k);
            let d1 = &pp.dx - (wx * &pm.dx + mm * &pm.de * dt) * 0.5;
            jac.view_mut((0, 0), (n, n)).copy_from(&d1);
            if k > 0 {
                jac.view_mut((0, n), (n, k)).copy_from(&(-&fm.b));
                jac.view_mut((n, 0), (k, n)).copy_from(&constraint_jacobian(&pp, &fp.b, &fp.db));
            }
            Ok(jac)
        };

        let mut w0 = DVector::zeros(n + k);
        w0.rows_mut(0, n).copy_from(z0);
        w0.rows_mut(n, k).copy_from(&s.nu);
        let sol = match newton_solve(residual, jacobian, &w0, &self.newton) {
            Ok(sol) => sol,
            Err(e @ NumericsError::SingularMatrix { .. }) => {
                if self.chart.costate_block_singular(z0.as_slice()).unwrap_or(false) {
                    return Err(StepError::ChartBreakdown { t });
                }
                if let Ok(sigma) = self.index_sigma_at(z0.as_slice()) {
                    if sigma < INDEX_TOLERANCE {
                        return Err(StepError::IndexViolation { t, sigma });
                    }
                }
                return Err(StepError::from_numerics(t, e));
            }
            Err(e) => return Err(StepError::from_numerics(t, e)),
        };

        let zp = sol.x.rows(0, n).into_owned();
        let nu = sol.x.rows(n, k).into_owned();
        let zm: DVector<f64> = (z0 + &zp) * 0.5;
        let pm = self.chart.eval(zm.as_slice()).map_err(|e| StepError::from_numerics(t, e))?;
        let fm = self.frame(pm.x.as_slice(), k > 0).map_err(|e| StepError::from_numerics(t, e))?;
        let sigma = if k > 0 { index_sigma(&pm, &fm.b, &fm.db) } else { f64::INFINITY };
        if sigma < INDEX_TOLERANCE {
            return Err(StepError::IndexViolation { t: tm, sigma });
        }
        let report = StepReport {
            lambda: &nu / dt,
            port_power: u.dot(&(fm.g.transpose() * &pm.e)),
            dissipation_power: self.dissipation(&fm, &pm),
            sigma,
        };
        Ok((State { z: zp, nu }, report))
    }

    fn dissipation(&self, f: &Frame, p: &ChartPoint) -> f64 {
        if f.g_r.ncols() == 0 {
            return 0.0;
        }
        let fr = f.g_r.transpose() * &p.e;
        -fr.dot(&(self.sys.rbar() * &fr))
    }

    /// Port and dissipation power at a single chart point (used for the first row).
    pub fn powers_at(&self, z: &[f64], t: f64) -> Result<(f64, f64), NumericsError> {
        let p = self.chart.eval(z)?;
        let f = self.frame(p.x.as_slice(), false)?;
        let u = self.input(t)?;
        Ok((u.dot(&(f.g.transpose() * &p.e)), self.dissipation(&f, &p)))
    }

    /// `‖Bᵀ(x(z)) e(z)‖∞`.
    pub fn constraint_residual(&self, z: &[f64]) -> Result<f64, NumericsError> {
        if self.sys.k() == 0 {
            return Ok(0.0);
        }
        let p = self.chart.eval(z)?;
        let b = self.sys.dirac().b_field().eval(p.x.as_slice())?;
        Ok((b.transpose() * &p.e).amax())
    }

    /// Constraints a chart state must satisfy: `Bᵀe` and the hidden rows `(J e)_j`.
    fn init_constraints(&self, z: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>), NumericsError> {
        let n = self.sys.n();
        let k = self.sys.k();
        let hidden = self.chart.hidden();
        let p = self.chart.eval(z)?;
        let f = self.frame(p.x.as_slice(), true)?;
        let rows = k + hidden.len();
        let mut c = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, n);
        if k > 0 {
            c.rows_mut(0, k).copy_from(&(f.b.transpose() * &p.e));
            jac.view_mut((0, 0), (k, n)).copy_from(&constraint_jacobian(&p, &f.b, &f.db));
        }
        for (r, &j) in hidden.iter().enumerate() {
            c[k + r] = f.j.row(j).dot(&p.e.transpose());
            let mut cx = DVector::zeros(n);
            for i in 0..n {
                cx[i] = f.dj[i].row(j).dot(&p.e.transpose());
            }
            let row = cx.transpose() * &p.dx + f.j.row(j) * &p.de;
            jac.row_mut(k + r).copy_from(&row);
        }
        Ok((c, jac))
    }

    /// Consistent chart state near the guess.
    ///
    /// Explicit storage: Newton on the optimality conditions of
    /// `min ‖x − x_g‖²` s.t. `Bᵀ∇H = 0`. Generating charts: `x_I = x_g,I`, then
    /// `e_J` fitted to `x_g,J` in least squares, then a minimum-norm Newton
    /// correction onto the constraint set.
    pub fn consistent_init(&self, x_guess: &[f64], e_guess: &[f64]) -> Result<DVector<f64>, SimError> {
        let n = self.sys.n();
        if x_guess.len() != n {
            return Err(SimError::InvalidConfig(format!("initial state has {} entries, expected {n}", x_guess.len())));
        }
        let z = match self.chart.split() {
            None => self.project_explicit(x_guess)?,
            Some(split) => {
                let ni = split.i().len();
                let d = split.j().len();
                let mut z = DVector::from_vec(self.chart.z_from(x_guess, &vec![0.0; d]));
                if e_guess.len() == d {
                    z.rows_mut(ni, d).copy_from(&DVector::from_column_slice(e_guess));
                }
                if d > 0 {
                    let fixed = z.rows(0, ni).into_owned();
                    let target: DVector<f64> = DVector::from_iterator(d, split.j().iter().map(|&j| x_guess[j]));
                    let full = |u: &DVector<f64>| {
                        let mut zz = DVector::zeros(n);
                        zz.rows_mut(0, ni).copy_from(&fixed);
                        zz.rows_mut(ni, d).copy_from(u);
                        zz
                    };
                    let res = |u: &DVector<f64>| -> Result<DVector<f64>, NumericsError> {
                        let x = self.chart.x(full(u).as_slice())?;
                        Ok(DVector::from_iterator(d, split.j().iter().enumerate().map(|(b, &j)| x[j] - target[b])))
                    };
                    let jac = |u: &DVector<f64>| -> Result<DMatrix<f64>, NumericsError> {
                        let p = self.chart.eval(full(u).as_slice())?;
                        let mut m = DMatrix::zeros(d, d);
                        for (b, &j) in split.j().iter().enumerate() {
                            m.row_mut(b).copy_from(&p.dx.view((j, ni), (1, d)));
                        }
                        Ok(m)
                    };
                    let out = least_squares_newton(res, jac, &z.rows(ni, d).into_owned(), &self.newton)
                        .map_err(SimError::Init)?;
                    z.rows_mut(ni, d).copy_from(&out.x);
                }
                if self.sys.k() + self.chart.hidden().len() > 0 {
                    let cfg = NewtonConfig { tolerance: 1e-12, ..self.newton };
                    let out = least_squares_newton(
                        |zz| Ok(self.init_constraints(zz.as_slice())?.0),
                        |zz| Ok(self.init_constraints(zz.as_slice())?.1),
                        &z,
                        &cfg,
                    )
                    .map_err(SimError::Init)?;
                    z = out.x;
                }
                z
            }
        };
        let (c, _) = self.init_constraints(z.as_slice()).map_err(SimError::Init)?;
        let resid = c.amax();
        if resid > 1e-10 {
            return Err(SimError::Init(NumericsError::NoConvergence {
                iterations: self.newton.max_iterations,
                residual: resid,
                reason: "could not reach the constraint set from the initial guess",
            }));
        }
        Ok(z)
    }

    fn project_explicit(&self, x_guess: &[f64]) -> Result<DVector<f64>, SimError> {
        let n = self.sys.n();
        let k = self.sys.k();
        let xg = DVector::from_column_slice(x_guess);
        if k == 0 {
            return Ok(xg);
        }
        let crate::geometry::StorageRelation::Explicit { h } = self.sys.storage() else {
            unreachable!("identity chart implies explicit storage")
        };
        let g: Vec<ScalarField> =
            crate::phsystem::dirac_constraint_trees(self.sys, h.tree()).into_iter().map(ScalarField::new).collect();
        let residual = |w: &DVector<f64>| -> Result<DVector<f64>, NumericsError> {
            let x = w.rows(0, n);
            let mut r = DVector::zeros(n + k);
            let mut top = x - &xg;
            for (a, ga) in g.iter().enumerate() {
                top += ga.grad(x.as_slice())? * w[n + a];
                r[n + a] = ga.value(x.as_slice())?;
            }
            r.rows_mut(0, n).copy_from(&top);
            Ok(r)
        };
        let jacobian = |w: &DVector<f64>| -> Result<DMatrix<f64>, NumericsError> {
            let x = w.rows(0, n);
            let mut jac = DMatrix::zeros(n + k, n + k);
            let mut top = DMatrix::identity(n, n);
            for (a, ga) in g.iter().enumerate() {
                top += ga.hessian(x.as_slice())? * w[n + a];
                let grad = ga.grad(x.as_slice())?;
                jac.view_mut((0, n + a), (n, 1)).copy_from(&grad);
                jac.view_mut((n + a, 0), (1, n)).copy_from(&grad.transpose());
            }
            jac.view_mut((0, 0), (n, n)).copy_from(&top);
            Ok(jac)
        };
        let mut w0 = DVector::zeros(n + k);
        w0.rows_mut(0, n).copy_from(&xg);
        let sol = newton_solve(residual, jacobian, &w0, &NewtonConfig { tolerance: 1e-12, ..self.newton })
            .map_err(|e| match e {
                e @ NumericsError::SingularMatrix { .. } => {
                    let rank = self
                        .sys
                        .dirac()
                        .b_field()
                        .eval(x_guess)
                        .map(|b| numerical_rank(&b, RANK_TOLERANCE))
                        .unwrap_or(0);
                    if rank < k {
                        SimError::Geometry(GeometryError::RankDeficientConstraint { rank, k, point: x_guess.to_vec() })
                    } else {
                        SimError::Init(e)
                    }
                }
                e => SimError::Init(e),
            })?;
        Ok(sol.x.rows(0, n).into_owned())
    }
}
