use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, ReportKind, SampleResult, ValidationReport, DIRAC_TOLERANCE, RANK_TOLERANCE};
use crate::expr::{MatrixExpr, MatrixField};
use crate::numerics::{left_null_space, numerical_rank};

/// Graph-form modulated Dirac structure on `T X x F_R x F_P`:
///
/// ```text
/// -f_S = J(x) e_S + B(x) lambda* + G_R(x) e_R + G(x) e_P
///  f_R = G_R(x)^T e_S,   f_P = G(x)^T e_S,   0 = B(x)^T e_S
/// ```
#[derive(Debug, Clone)]
pub struct DiracStructure {
    j: MatrixExpr,
    b: MatrixExpr,
    g_r: MatrixExpr,
    g: MatrixExpr,
    fields: [MatrixField; 4],
}

/// The four structure matrices evaluated at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracMatrices {
    pub j: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g_r: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

/// Spanning pairs of `D(x)`: column `c` of `flows` pairs with column `c` of `efforts`.
/// Both are ordered `(storage, dissipation, external)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracBasis {
    pub flows: DMatrix<f64>,
    pub efforts: DMatrix<f64>,
}

impl DiracBasis {
    /// Symmetrized power pairing matrix; zero iff the span is isotropic.
    pub fn pairing(&self) -> DMatrix<f64> {
        let p = self.efforts.transpose() * &self.flows;
        (&p + p.transpose()) * 0.5
    }

    pub fn rank(&self) -> usize {
        let (n, c) = self.flows.shape();
        let mut stacked = DMatrix::zeros(2 * n, c);
        stacked.rows_mut(0, n).copy_from(&self.flows);
        stacked.rows_mut(n, n).copy_from(&self.efforts);
        numerical_rank(&stacked, RANK_TOLERANCE)
    }
}

impl DiracStructure {
    pub fn new(j: MatrixExpr, b: MatrixExpr, g_r: MatrixExpr, g: MatrixExpr) -> Result<Self, GeometryError> {
        let n = j.rows();
        let vars = j.vars().clone();
        if j.cols() != n || vars.len() != n {
            return Err(GeometryError::Dimension(format!(
                "J must be {n}x{n} over {n} state variables, got {}x{} over {}",
                j.rows(),
                j.cols(),
                vars.len()
            )));
        }
        for (name, m) in [("B", &b), ("G_R", &g_r), ("G", &g)] {
            if m.rows() != n {
                return Err(GeometryError::Dimension(format!("{name} has {} rows, expected {n}", m.rows())));
            }
            if m.vars() != &vars {
                return Err(GeometryError::Dimension(format!("{name} is not expressed over the state variables")));
            }
        }
        let fields = [MatrixField::new(&j), MatrixField::new(&b), MatrixField::new(&g_r), MatrixField::new(&g)];
        Ok(DiracStructure { j, b, g_r, g, fields })
    }

    pub fn n(&self) -> usize {
        self.j.rows()
    }
    pub fn k(&self) -> usize {
        self.b.cols()
    }
    pub fn m_r(&self) -> usize {
        self.g_r.cols()
    }
    pub fn m_p(&self) -> usize {
        self.g.cols()
    }
    /// `dim F = n + m_R + m_P`.
    pub fn flow_dim(&self) -> usize {
        self.n() + self.m_r() + self.m_p()
    }

    pub fn j(&self) -> &MatrixExpr {
        &self.j
    }
    pub fn b(&self) -> &MatrixExpr {
        &self.b
    }
    pub fn g_r(&self) -> &MatrixExpr {
        &self.g_r
    }
    pub fn g(&self) -> &MatrixExpr {
        &self.g
    }

    pub fn j_field(&self) -> &MatrixField {
        &self.fields[0]
    }
    pub fn b_field(&self) -> &MatrixField {
        &self.fields[1]
    }
    pub fn g_r_field(&self) -> &MatrixField {
        &self.fields[2]
    }
    pub fn g_field(&self) -> &MatrixField {
        &self.fields[3]
    }

    pub fn eval(&self, x: &[f64]) -> Result<DiracMatrices, GeometryError> {
        if x.len() != self.n() {
            return Err(GeometryError::Dimension(format!("point has {} coordinates, expected {}", x.len(), self.n())));
        }
        Ok(DiracMatrices {
            j: self.fields[0].eval(x)?,
            b: self.fields[1].eval(x)?,
            g_r: self.fields[2].eval(x)?,
            g: self.fields[3].eval(x)?,
        })
    }

    /// `n + m_R + m_P` independent pairs spanning `D(x)`, built by sweeping
    /// admissible storage efforts (`B^T e = 0`), unit multipliers, and unit
    /// dissipation and port efforts.
    pub fn sample_basis(&self, x: &[f64]) -> Result<DiracBasis, GeometryError> {
        let m = self.eval(x)?;
        let (n, k, mr, mp) = (self.n(), self.k(), self.m_r(), self.m_p());
        if k > 0 {
            let rank = numerical_rank(&m.b, RANK_TOLERANCE);
            if rank < k {
                return Err(GeometryError::RankDeficientConstraint { rank, k, point: x.to_vec() });
            }
        }
        let dim = n + mr + mp;
        let mut flows = DMatrix::zeros(dim, dim);
        let mut efforts = DMatrix::zeros(dim, dim);
        let mut col = 0;

        let kernel = left_null_space(&m.b, RANK_TOLERANCE);
        for v in kernel.column_iter() {
            let v: DVector<f64> = v.into_owned();
            efforts.view_mut((0, col), (n, 1)).copy_from(&v);
            flows.view_mut((0, col), (n, 1)).copy_from(&(-&m.j * &v));
            flows.view_mut((n, col), (mr, 1)).copy_from(&(m.g_r.transpose() * &v));
            flows.view_mut((n + mr, col), (mp, 1)).copy_from(&(m.g.transpose() * &v));
            col += 1;
        }
        for a in 0..k {
            flows.view_mut((0, col), (n, 1)).copy_from(&(-m.b.column(a)));
            col += 1;
        }
        for r in 0..mr {
            efforts[(n + r, col)] = 1.0;
            flows.view_mut((0, col), (n, 1)).copy_from(&(-m.g_r.column(r)));
            col += 1;
        }
        for p in 0..mp {
            efforts[(n + mr + p, col)] = 1.0;
            flows.view_mut((0, col), (n, 1)).copy_from(&(-m.g.column(p)));
            col += 1;
        }
        debug_assert_eq!(col, dim);
        Ok(DiracBasis { flows, efforts })
    }
}

/// Check power conservation, dimension and skewness of `J` at every sample.
///
/// The isotropy residual is the largest entry of the symmetrized pairing
/// matrix of the basis, combined with the pairing of a few seeded random
/// combinations of basis pairs.
pub fn validate_dirac(d: &DiracStructure, samples: &[Vec<f64>], seed: u64) -> Result<ValidationReport, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples.len());
    for x in samples {
        let basis = d.sample_basis(x)?;
        let j = d.j_field().eval(x)?;
        let skewness = (&j + j.transpose()).amax();
        let sym = basis.pairing();
        let mut isotropy = sym.amax();
        let dim = basis.flows.ncols();
        for _ in 0..8 {
            let c = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            let f = &basis.flows * &c;
            let e = &basis.efforts * &c;
            isotropy = isotropy.max(e.dot(&f).abs());
        }
        let dimension = basis.rank();
        let expected = d.flow_dim();
        let passed = isotropy <= DIRAC_TOLERANCE && skewness <= DIRAC_TOLERANCE && dimension == expected;
        out.push(SampleResult {
            point: x.clone(),
            isotropy: Some(isotropy),
            skewness: Some(skewness),
            dimension: Some(dimension),
            expected_dimension: Some(expected),
            morse_sigma_min: None,
            passed,
        });
    }
    Ok(ValidationReport::new(ReportKind::Dirac, out))
}
