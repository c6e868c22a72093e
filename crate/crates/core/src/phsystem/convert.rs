use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{multiplier_names, PHSystem, SystemError};
use crate::expr::{self, var_list, ExprTree, MatrixExpr, Node};
use crate::geometry::{
    lagrangian_membership, validate_morse, DiracStructure, GeometryError, IndexSplit, SamplingConfig, StorageRelation,
};
use crate::numerics::{least_squares_newton, NewtonConfig, NumericsError};

fn zero(vars: &Arc<[String]>) -> ExprTree {
    ExprTree::constant(0.0, vars.clone())
}

/// Lift an `n x c` matrix over the original states to `(n + k) x c` over the
/// extended states, padding with zero rows.
fn lift_rows(m: &MatrixExpr, k: usize, vars: &Arc<[String]>) -> Result<MatrixExpr, SystemError> {
    let n = m.rows();
    let map: Vec<usize> = (0..n).collect();
    Ok(MatrixExpr::from_fn(n + k, m.cols(), vars.clone(), |i, c| {
        if i < n {
            m.get(i, c).remap(&map, vars.clone())
        } else {
            Ok(zero(vars))
        }
    })?)
}

fn extended_sampling(sys: &PHSystem, k: usize) -> SamplingConfig {
    let mut s = sys.sampling().clone();
    s.bounds.extend(std::iter::repeat_n((-1.0, 1.0), k));
    s
}

/// Trade the `k` Dirac constraints of an explicit-Hamiltonian system for the
/// Lagrange constraint `λ = 0` on the extended state `(x, λ)`.
///
/// The extended Dirac structure is the graph of `[[J, B], [−Bᵀ, 0]]` with no
/// multipliers; storage is the generating function `V(x, e_λ) = H(x)`.
pub fn dirac_to_lagrange(sys: &PHSystem) -> Result<PHSystem, SystemError> {
    let StorageRelation::Explicit { h } = sys.storage() else {
        return Err(SystemError::WrongStorage("explicit Hamiltonian"));
    };
    let (n, k) = (sys.n(), sys.k());
    if k == 0 {
        return Err(SystemError::NothingToConvert);
    }
    let lam = multiplier_names(sys.names(), k);
    let ext: Vec<String> = sys.names().iter().cloned().chain(lam.iter().cloned()).collect();
    let vars = var_list(&ext)?;
    let map: Vec<usize> = (0..n).collect();
    let (j, b) = (sys.dirac().j(), sys.dirac().b());
    let je = MatrixExpr::from_fn(n + k, n + k, vars.clone(), |r, c| match (r < n, c < n) {
        (true, true) => j.get(r, c).remap(&map, vars.clone()),
        (true, false) => b.get(r, c - n).remap(&map, vars.clone()),
        (false, true) => Ok(b.get(c, r - n).remap(&map, vars.clone())?.map_root(expr::neg)),
        (false, false) => Ok(zero(&vars)),
    })?;
    let be = MatrixExpr::zeros(n + k, 0, vars.clone());
    let d = DiracStructure::new(
        je,
        be,
        lift_rows(sys.dirac().g_r(), k, &vars)?,
        lift_rows(sys.dirac().g(), k, &vars)?,
    )?;

    let z: Vec<String> = sys.names().iter().cloned().chain(lam.iter().map(|l| format!("e_{l}"))).collect();
    let zvars = var_list(&z)?;
    let v = h.tree().remap(&map, zvars)?;
    let split = IndexSplit::new((0..n).collect(), (n..n + k).collect())?;
    let storage = StorageRelation::generating(split, v)?;
    PHSystem::assemble(d, storage, sys.rbar().clone(), extended_sampling(sys, k))
}

/// Morse family `F(x, λ)` representing the storage of `sys`, over the state
/// names followed by multiplier names. Generating functions give
/// `F = V(x_I, λ) + λᵀx_J`; Morse storage is returned as is.
pub fn canonical_morse_family(sys: &PHSystem) -> Result<(usize, ExprTree), SystemError> {
    match sys.storage() {
        StorageRelation::Explicit { .. } => Err(SystemError::NothingToConvert),
        StorageRelation::Morse { k, f } => Ok((*k, f.tree().clone())),
        StorageRelation::Generating { split, v } => {
            let n = sys.n();
            let k = split.j().len();
            let ni = split.i().len();
            let lam = multiplier_names(sys.names(), k);
            let ext: Vec<String> = sys.names().iter().cloned().chain(lam).collect();
            let vars = var_list(&ext)?;
            let subs: Vec<Node> = (0..v.nvars())
                .map(|a| if a < ni { Node::Var(split.i()[a]) } else { Node::Var(n + a - ni) })
                .collect();
            let mut f = v.tree().root().substitute(&subs);
            for (b, &j) in split.j().iter().enumerate() {
                f = expr::add(f, expr::mul(Node::Var(n + b), Node::Var(j)));
            }
            Ok((k, ExprTree::from_node(f, vars)?))
        }
    }
}

/// Turn the Lagrange constraint of an implicit-storage system into the Dirac
/// constraint `∂F/∂λ = 0` of an explicit system with Hamiltonian `F(x, λ)`.
///
/// The extended Dirac structure is `D` times the trivial structure `e_λ = 0`.
pub fn lagrange_to_dirac(sys: &PHSystem) -> Result<PHSystem, SystemError> {
    let (km, f) = canonical_morse_family(sys)?;
    let n = sys.n();
    let family = StorageRelation::morse(km, f.clone())?;
    match validate_morse(&family, &sys.sampling().points(), sys.sampling().seed) {
        Ok(r) if r.passed => {}
        Ok(r) => return Err(SystemError::MorseRankFailure { report: Some(Box::new(r)) }),
        Err(GeometryError::NoZeroSetPointFound) => return Err(SystemError::MorseRankFailure { report: None }),
        Err(e) => return Err(e.into()),
    }
    let vars = f.vars().clone();
    let map: Vec<usize> = (0..n).collect();
    let (j, b) = (sys.dirac().j(), sys.dirac().b());
    let k = sys.k();
    let je = MatrixExpr::from_fn(n + km, n + km, vars.clone(), |r, c| {
        if r < n && c < n {
            j.get(r, c).remap(&map, vars.clone())
        } else {
            Ok(zero(&vars))
        }
    })?;
    let be = MatrixExpr::from_fn(n + km, k + km, vars.clone(), |r, c| match (r < n, c < k) {
        (true, true) => b.get(r, c).remap(&map, vars.clone()),
        (false, false) if r - n == c - k => Ok(ExprTree::constant(1.0, vars.clone())),
        _ => Ok(zero(&vars)),
    })?;
    let d = DiracStructure::new(
        je,
        be,
        lift_rows(sys.dirac().g_r(), km, &vars)?,
        lift_rows(sys.dirac().g(), km, &vars)?,
    )?;
    PHSystem::assemble(d, StorageRelation::explicit(f), sys.rbar().clone(), extended_sampling(sys, km))
}

fn costate_name(q: &str) -> String {
    match q.strip_prefix('q') {
        Some(rest) => format!("p{rest}"),
        None => format!("p_{q}"),
    }
}

/// Pontryagin systems for `q̇ = f(q, u)` with running cost `L(q, u)`.
///
/// `f` is `n x 1` and, like `L`, expressed over `(q, u)` with the first `n`
/// variables the states. With `K = pᵀf + L`, returns the explicit form on
/// `(q, p, u)` (constraint `∂K/∂u = 0`) and the implicit form on `(q, p)` with
/// Morse family `K(q, p, λ)`.
pub fn build_optimal_control(f: &MatrixExpr, l: &ExprTree) -> Result<(PHSystem, PHSystem), SystemError> {
    let n = f.rows();
    let qu = f.vars();
    if f.cols() != 1 || l.vars() != qu || qu.len() <= n {
        return Err(SystemError::DimensionMismatch(
            "f must be n x 1 and share the (q, u) variables with L, with at least one input".into(),
        ));
    }
    let m = qu.len() - n;
    let q: Vec<String> = qu[..n].to_vec();
    let u: Vec<String> = qu[n..].to_vec();
    let p: Vec<String> = q.iter().map(|s| costate_name(s)).collect();
    let names: Vec<String> = q.iter().chain(&p).chain(&u).cloned().collect();
    let vars = var_list(&names)?;

    // (q, u) -> (q, p, u) positions
    let subs: Vec<Node> = (0..n + m).map(|a| if a < n { Node::Var(a) } else { Node::Var(n + a) }).collect();
    let mut k_node = l.root().substitute(&subs);
    for i in 0..n {
        k_node = expr::add(k_node, expr::mul(Node::Var(n + i), f.get(i, 0).root().substitute(&subs)));
    }
    let k_tree = ExprTree::from_node(k_node.simplify(), vars.clone())?;

    let dim = 2 * n + m;
    let konst = |v: f64, vars: &Arc<[String]>| ExprTree::constant(v, vars.clone());
    let j_explicit = MatrixExpr::from_fn(dim, dim, vars.clone(), |r, c| {
        Ok(if r < n && c == r + n {
            konst(1.0, &vars)
        } else if (n..2 * n).contains(&r) && c + n == r {
            konst(-1.0, &vars)
        } else {
            konst(0.0, &vars)
        })
    })?;
    let b_explicit =
        MatrixExpr::from_fn(dim, m, vars.clone(), |r, c| Ok(konst(if r == 2 * n + c { 1.0 } else { 0.0 }, &vars)))?;
    let d = DiracStructure::new(
        j_explicit,
        b_explicit,
        MatrixExpr::zeros(dim, 0, vars.clone()),
        MatrixExpr::zeros(dim, 0, vars.clone()),
    )?;
    let explicit = PHSystem::assemble(
        d,
        StorageRelation::explicit(k_tree.clone()),
        DMatrix::zeros(0, 0),
        SamplingConfig::unit_box(dim),
    )?;

    let lam = multiplier_names(&names, m);
    let fam_names: Vec<String> = q.iter().chain(&p).chain(&lam).cloned().collect();
    let fam_vars = var_list(&fam_names)?;
    let family = ExprTree::from_node(k_tree.root().clone(), fam_vars)?;
    let state_vars = var_list(&fam_names[..2 * n])?;
    let j_implicit = MatrixExpr::from_fn(2 * n, 2 * n, state_vars.clone(), |r, c| {
        Ok(if r < n && c == r + n {
            konst(1.0, &state_vars)
        } else if r >= n && c + n == r {
            konst(-1.0, &state_vars)
        } else {
            konst(0.0, &state_vars)
        })
    })?;
    let d = DiracStructure::new(
        j_implicit,
        MatrixExpr::zeros(2 * n, 0, state_vars.clone()),
        MatrixExpr::zeros(2 * n, 0, state_vars.clone()),
        MatrixExpr::zeros(2 * n, 0, state_vars.clone()),
    )?;
    let implicit = PHSystem::assemble(
        d,
        StorageRelation::morse(m, family)?,
        DMatrix::zeros(0, 0),
        SamplingConfig::unit_box(2 * n),
    )?;
    Ok((explicit, implicit))
}

/// Seeded points `(x, e)` on the Lagrangian submanifold. Chart coordinates
/// (and Morse parameters) are drawn from `bounds` extended by `[-1, 1]`.
pub fn sample_lagrangian(s: &StorageRelation, count: usize, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>, SystemError> {
    let n = s.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |d: usize| -> Vec<f64> { (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let mut out = Vec::with_capacity(count);
    match s {
        StorageRelation::Explicit { h } => {
            for _ in 0..count {
                let x = draw(n);
                let e = h.grad(&x)?.iter().copied().collect();
                out.push((x, e));
            }
        }
        StorageRelation::Generating { split, v } => {
            let ni = split.i().len();
            for _ in 0..count {
                let z = draw(n);
                let g = v.grad(&z)?;
                let (mut x, mut e) = (vec![0.0; n], vec![0.0; n]);
                for (a, &i) in split.i().iter().enumerate() {
                    x[i] = z[a];
                    e[i] = g[a];
                }
                for (b, &j) in split.j().iter().enumerate() {
                    x[j] = -g[ni + b];
                    e[j] = z[ni + b];
                }
                out.push((x, e));
            }
        }
        StorageRelation::Morse { k, f } => {
            let k = *k;
            let residual = |w: &DVector<f64>| -> Result<DVector<f64>, NumericsError> {
                Ok(f.grad(w.as_slice())?.rows(n, k).into_owned())
            };
            let jacobian =
                |w: &DVector<f64>| -> Result<DMatrix<f64>, NumericsError> { Ok(f.hessian(w.as_slice())?.rows(n, k).into_owned()) };
            let cfg = NewtonConfig { tolerance: 1e-13, ..NewtonConfig::default() };
            let mut attempts = 0;
            while out.len() < count && attempts < 10 * count {
                attempts += 1;
                let w0 = DVector::from_vec(draw(n + k));
                let Ok(sol) = least_squares_newton(residual, jacobian, &w0, &cfg) else { continue };
                if !sol.converged {
                    continue;
                }
                let g = f.grad(sol.x.as_slice())?;
                out.push((sol.x.rows(0, n).iter().copied().collect(), g.rows(0, n).iter().copied().collect()));
            }
        }
    }
    Ok(out)
}

/// Largest membership residual of points sampled on either submanifold when
/// tested against the other representation.
pub fn membership_equivalence(a: &StorageRelation, b: &StorageRelation, count: usize, seed: u64) -> Result<f64, SystemError> {
    if a.state_dim() != b.state_dim() {
        return Err(SystemError::DimensionMismatch("storage relations live on different state spaces".into()));
    }
    let mut worst = 0.0_f64;
    for (from, to) in [(a, b), (b, a)] {
        for (x, e) in sample_lagrangian(from, count, seed)? {
            let m = lagrangian_membership(to, &x, &e, 1e-8, seed)?;
            worst = worst.max(m.residual);
        }
    }
    Ok(worst)
}
