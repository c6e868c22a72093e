//! Generalized port-Hamiltonian systems `(D, L, R)`: assembly and validation,
//! constraint classification, and the two state-extension conversions.

mod constraints;
mod convert;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::expr::{self, ExprError, ExprTree, MatrixExpr, Node};
use crate::geometry::{
    lagrange_constraint_probe, validate_dirac, validate_morse, DiracStructure, GeometryError, SamplingConfig,
    StorageRelation, ValidationReport,
};

pub(crate) use constraints::dirac_constraint_trees;
pub use constraints::{extract_constraints, Constraint, ConstraintClass, ConstraintReport, ProbeVerdict, Residual};
pub use convert::{
    build_optimal_control, canonical_morse_family, dirac_to_lagrange, lagrange_to_dirac, membership_equivalence,
    sample_lagrangian,
};

/// Lowest eigenvalue tolerated in `R̄` before it is rejected as indefinite.
pub const RBAR_EIGEN_TOLERANCE: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("validation failed: {reason}")]
    ValidationFailed { reason: String, report: Option<Box<ValidationReport>> },
    #[error("Morse family fails the rank condition on its zero set{}", .report.as_ref().map_or(String::new(), |r| r.worst().map_or(String::new(), |w| format!(" (worst sample {:?})", w.point))))]
    MorseRankFailure { report: Option<Box<ValidationReport>> },
    #[error("system has no Dirac algebraic constraints to convert")]
    NothingToConvert,
    #[error("operation requires {0} storage")]
    WrongStorage(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// A validated system. Immutable once assembled.
#[derive(Debug, Clone)]
pub struct PHSystem {
    names: Arc<[String]>,
    dirac: DiracStructure,
    storage: StorageRelation,
    rbar: DMatrix<f64>,
    sampling: SamplingConfig,
    dirac_report: ValidationReport,
    morse_report: Option<ValidationReport>,
}

/// Input-state-output form `ẋ = (J − R)∇H + Gu`, `y = Gᵀ∇H`.
#[derive(Debug, Clone)]
pub struct IsoForm {
    /// `J − G_R R̄ G_Rᵀ`.
    pub j_minus_r: MatrixExpr,
    pub g: MatrixExpr,
    pub h: ExprTree,
}

impl PHSystem {
    /// Validate and bundle a system. The Dirac structure is checked at the
    /// sampled points, and Morse-family storage additionally on its zero set.
    pub fn assemble(
        dirac: DiracStructure,
        storage: StorageRelation,
        rbar: DMatrix<f64>,
        sampling: SamplingConfig,
    ) -> Result<PHSystem, SystemError> {
        let n = dirac.n();
        let names = dirac.j().vars().clone();
        if storage.state_dim() != n {
            return Err(SystemError::DimensionMismatch(format!(
                "storage is over {} states, Dirac structure over {n}",
                storage.state_dim()
            )));
        }
        if sampling.bounds.len() != n {
            return Err(SystemError::DimensionMismatch(format!(
                "sample box has {} intervals, expected {n}",
                sampling.bounds.len()
            )));
        }
        if let StorageRelation::Explicit { h } = &storage {
            if h.tree().vars() != &names {
                return Err(SystemError::DimensionMismatch("Hamiltonian is not expressed over the state names".into()));
            }
        }
        check_rbar(&rbar, dirac.m_r())?;

        let samples = sampling.points();
        let dirac_report = validate_dirac(&dirac, &samples, sampling.seed)?;
        if !dirac_report.passed {
            let worst = dirac_report.worst().map(|w| format!(" (worst sample {:?})", w.point)).unwrap_or_default();
            return Err(SystemError::ValidationFailed {
                reason: format!("Dirac structure check failed{worst}"),
                report: Some(Box::new(dirac_report)),
            });
        }
        let morse_report = match &storage {
            StorageRelation::Morse { .. } => match validate_morse(&storage, &samples, sampling.seed) {
                Ok(r) if r.passed => Some(r),
                Ok(r) => return Err(SystemError::MorseRankFailure { report: Some(Box::new(r)) }),
                Err(GeometryError::NoZeroSetPointFound) => return Err(SystemError::MorseRankFailure { report: None }),
                Err(e) => return Err(e.into()),
            },
            _ => None,
        };
        Ok(PHSystem { names, dirac, storage, rbar, sampling, dirac_report, morse_report })
    }

    pub fn names(&self) -> &Arc<[String]> {
        &self.names
    }
    pub fn n(&self) -> usize {
        self.dirac.n()
    }
    pub fn k(&self) -> usize {
        self.dirac.k()
    }
    pub fn m_r(&self) -> usize {
        self.dirac.m_r()
    }
    pub fn m_p(&self) -> usize {
        self.dirac.m_p()
    }
    pub fn dirac(&self) -> &DiracStructure {
        &self.dirac
    }
    pub fn storage(&self) -> &StorageRelation {
        &self.storage
    }
    pub fn rbar(&self) -> &DMatrix<f64> {
        &self.rbar
    }
    pub fn sampling(&self) -> &SamplingConfig {
        &self.sampling
    }
    pub fn dirac_report(&self) -> &ValidationReport {
        &self.dirac_report
    }
    pub fn morse_report(&self) -> Option<&ValidationReport> {
        self.morse_report.as_ref()
    }

    /// True iff there are no multipliers and storage is an explicit Hamiltonian.
    pub fn is_input_state_output(&self) -> bool {
        self.k() == 0 && self.storage.is_explicit()
    }

    pub fn iso_form(&self) -> Option<IsoForm> {
        let StorageRelation::Explicit { h } = &self.storage else { return None };
        if self.k() > 0 {
            return None;
        }
        let (n, mr) = (self.n(), self.m_r());
        let gr = self.dirac.g_r();
        let j = self.dirac.j();
        let j_minus_r = MatrixExpr::from_fn(n, n, self.names.clone(), |i, l| {
            let mut acc = j.get(i, l).root().clone();
            for a in 0..mr {
                for b in 0..mr {
                    let r = self.rbar[(a, b)];
                    if r != 0.0 {
                        let term = expr::mul(
                            Node::Const(r),
                            expr::mul(gr.get(i, a).root().clone(), gr.get(l, b).root().clone()),
                        );
                        acc = expr::sub(acc, term);
                    }
                }
            }
            ExprTree::from_node(acc, self.names.clone())
        })
        .ok()?;
        Some(IsoForm { j_minus_r, g: self.dirac.g().clone(), h: h.tree().clone() })
    }

    /// Storage effort `e_S` paired with the state `x`, plus internal coordinates
    /// (`e_J` or `λ`) when the storage is implicit. Fails if `x ∉ π(L)`.
    pub fn effort_at(&self, x: &[f64]) -> Result<(DVector<f64>, Vec<f64>), SystemError> {
        match &self.storage {
            StorageRelation::Explicit { h } => Ok((h.grad(x)?, Vec::new())),
            StorageRelation::Generating { split, v } => {
                let probe = lagrange_constraint_probe(&self.storage, x, self.sampling.seed)?;
                let Some(ej) = probe.witness.filter(|_| probe.feasible) else {
                    return Err(GeometryError::Inconclusive { point: x.to_vec() }.into());
                };
                let z: Vec<f64> = split.i().iter().map(|&i| x[i]).chain(ej.iter().copied()).collect();
                let g = v.grad(&z)?;
                let mut e = DVector::zeros(x.len());
                for (a, &i) in split.i().iter().enumerate() {
                    e[i] = g[a];
                }
                for (b, &j) in split.j().iter().enumerate() {
                    e[j] = ej[b];
                }
                Ok((e, ej))
            }
            StorageRelation::Morse { f, .. } => {
                let probe = lagrange_constraint_probe(&self.storage, x, self.sampling.seed)?;
                let Some(lam) = probe.witness.filter(|_| probe.feasible) else {
                    return Err(GeometryError::Inconclusive { point: x.to_vec() }.into());
                };
                let w: Vec<f64> = x.iter().copied().chain(lam.iter().copied()).collect();
                let g = f.grad(&w)?;
                Ok((g.rows(0, x.len()).into_owned(), lam))
            }
        }
    }
}

fn check_rbar(rbar: &DMatrix<f64>, m_r: usize) -> Result<(), SystemError> {
    if rbar.nrows() != m_r || rbar.ncols() != m_r {
        return Err(SystemError::DimensionMismatch(format!(
            "Rbar is {}x{}, expected {m_r}x{m_r}",
            rbar.nrows(),
            rbar.ncols()
        )));
    }
    if m_r == 0 {
        return Ok(());
    }
    let asym = (rbar - rbar.transpose()).amax();
    if asym > 1e-12 * (1.0 + rbar.amax()) {
        return Err(SystemError::ValidationFailed { reason: format!("Rbar is not symmetric (asymmetry {asym:e})"), report: None });
    }
    let min_eig = SymmetricEigen::new(rbar.clone()).eigenvalues.min();
    if min_eig < RBAR_EIGEN_TOLERANCE {
        return Err(SystemError::ValidationFailed {
            reason: format!("Rbar has negative eigenvalue {min_eig}; dissipation must be passive"),
            report: None,
        });
    }
    Ok(())
}

/// Fresh multiplier names `lam1, lam2, ...` that avoid the given state names.
pub(crate) fn multiplier_names(existing: &[String], count: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    let mut i = 1;
    while out.len() < count {
        let name = format!("lam{i}");
        if !existing.contains(&name) {
            out.push(name);
        }
        i += 1;
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::expr::var_list;
    use crate::geometry::IndexSplit;

    pub(crate) fn grid(rows: &[&[&str]], n: usize, vars: &Arc<[String]>) -> MatrixExpr {
        let cols = rows.first().map_or(0, |r| r.len());
        let rows: Vec<Vec<&str>> = if cols == 0 { vec![vec![]; n] } else { rows.iter().map(|r| r.to_vec()).collect() };
        MatrixExpr::parse(&rows, cols, vars.clone()).unwrap()
    }

    pub(crate) fn system(
        names: &[&str],
        j: &[&[&str]],
        b: &[&[&str]],
        g_r: &[&[&str]],
        g: &[&[&str]],
        rbar: DMatrix<f64>,
        storage: impl FnOnce(&Arc<[String]>) -> StorageRelation,
    ) -> Result<PHSystem, SystemError> {
        let n = names.len();
        let vars = var_list(names).unwrap();
        let d = DiracStructure::new(grid(j, n, &vars), grid(b, n, &vars), grid(g_r, n, &vars), grid(g, n, &vars))?;
        PHSystem::assemble(d, storage(&vars), rbar, SamplingConfig::unit_box(n))
    }

    pub(crate) fn explicit(src: &'static str) -> impl FnOnce(&Arc<[String]>) -> StorageRelation {
        move |vars| StorageRelation::explicit(ExprTree::parse(src, vars).unwrap())
    }

    pub(crate) fn oscillator() -> PHSystem {
        system(&["x1", "x2"], &[&["0", "1"], &["-1", "0"]], &[], &[], &[&["0"], &["1"]], DMatrix::zeros(0, 0), explicit("0.5*(x1^2 + x2^2)")).unwrap()
    }

    pub(crate) fn two_capacitor() -> PHSystem {
        system(
            &["x1", "x2"],
            &[&["0", "0"], &["0", "0"]],
            &[&["1"], &["-1"]],
            &[],
            &[&["1"], &["0"]],
            DMatrix::zeros(0, 0),
            explicit("0.5*(x1^2 + x2^2)"),
        )
        .unwrap()
    }

    pub(crate) fn implicit_oscillator() -> PHSystem {
        system(&["x1", "x2"], &[&["0", "1"], &["-1", "0"]], &[], &[], &[], DMatrix::zeros(0, 0), |_| {
            let split = IndexSplit::new(vec![0], vec![1]).unwrap();
            StorageRelation::generating(split, ExprTree::parse("0.5*x1^2 - 0.5*e_x2^2", &["x1", "e_x2"]).unwrap()).unwrap()
        })
        .unwrap()
    }

    #[test]
    fn assemble_examples() {
        let osc = oscillator();
        assert!(osc.is_input_state_output());
        assert!(osc.dirac_report().passed);
        let cap = two_capacitor();
        assert!(!cap.is_input_state_output());
        assert_eq!(cap.k(), 1);

        let err = system(
            &["x1", "x2"],
            &[&["0", "1"], &["-1", "0"]],
            &[],
            &[&["0"], &["1"]],
            &[],
            DMatrix::from_element(1, 1, -1.0),
            explicit("0.5*(x1^2 + x2^2)"),
        )
        .unwrap_err();
        assert!(matches!(err, SystemError::ValidationFailed { .. }), "{err:?}");
    }

    #[test]
    fn non_skew_structure_is_rejected() {
        let err = system(&["x1", "x2"], &[&["0", "1"], &["1", "0"]], &[], &[], &[], DMatrix::zeros(0, 0), explicit("x1^2"))
            .unwrap_err();
        let SystemError::ValidationFailed { report: Some(report), .. } = err else { panic!("{err:?}") };
        assert!(report.max_skewness() >= 2.0 - 1e-12);
    }

    #[test]
    fn dimension_mismatches() {
        let err = system(&["x1", "x2"], &[&["0", "1"], &["-1", "0"]], &[], &[&["0"], &["1"]], &[], DMatrix::zeros(0, 0), explicit("x1^2"))
            .unwrap_err();
        assert!(matches!(err, SystemError::DimensionMismatch(_)));
    }

    #[test]
    fn iso_form_of_damped_oscillator() {
        let sys = system(
            &["x1", "x2"],
            &[&["0", "1"], &["-1", "0"]],
            &[],
            &[&["0"], &["1"]],
            &[],
            DMatrix::from_element(1, 1, 1.0),
            explicit("0.5*(x1^2 + x2^2)"),
        )
        .unwrap();
        let iso = sys.iso_form().unwrap();
        assert_eq!(iso.j_minus_r.eval(&[0.0, 0.0]).unwrap(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]));
        assert!(two_capacitor().iso_form().is_none());
        assert!(!implicit_oscillator().is_input_state_output());
    }

    #[test]
    fn effort_for_generating_storage() {
        let sys = implicit_oscillator();
        let (e, ej) = sys.effort_at(&[0.4, -0.7]).unwrap();
        assert!((e[0] - 0.4).abs() < 1e-12 && (e[1] + 0.7).abs() < 1e-12);
        assert_eq!(ej.len(), 1);
    }

    #[test]
    fn fresh_multiplier_names() {
        let existing = vec!["x".to_string(), "lam1".to_string()];
        assert_eq!(multiplier_names(&existing, 2), vec!["lam2", "lam3"]);
    }
}
