use phdae_core::legendre::{biconjugate, legendre, legendre_inverse_check, partial_legendre, tilde_grad_check, LegendreError};
use phdae_core::{ExprTree, IndexSplit, ScalarField};

use crate::Failure;

/// Residual bound for `--check`.
const CHECK_TOLERANCE: f64 = 1e-7;

pub struct Args {
    pub p: String,
    pub vars: String,
    pub at: Option<String>,
    pub grid: Option<String>,
    pub partial: Option<String>,
    pub check: bool,
}

fn numbers(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Failure::usage(format!("{what}: '{}' is not a number", t.trim()))))
        .collect()
}

/// `lo:hi:count` along each of `dim` coordinates, as a tensor grid.
fn grid_points(spec: &str, dim: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let bad = || Failure::usage(format!("--grid expects lo:hi:count, got '{spec}'"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, count] = parts[..] else { return Err(bad()) };
    let (lo, hi): (f64, f64) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
    let count: usize = count.parse().map_err(|_| bad())?;
    if count == 0 || !(lo <= hi) {
        return Err(bad());
    }
    let axis: Vec<f64> =
        (0..count).map(|i| if count == 1 { lo } else { lo + (hi - lo) * i as f64 / (count - 1) as f64 }).collect();
    let mut points = vec![Vec::new()];
    for _ in 0..dim {
        points = points.into_iter().flat_map(|p| axis.iter().map(move |&a| [p.clone(), vec![a]].concat())).collect();
    }
    Ok(points)
}

fn one_based(list: &str, n: usize) -> Result<Vec<usize>, Failure> {
    list.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t.parse::<usize>() {
            Ok(k) if (1..=n).contains(&k) => Ok(k - 1),
            _ => Err(Failure::usage(format!("--partial: '{t}' is not an index in 1..={n}"))),
        })
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(",")
}

fn failure(e: LegendreError) -> Failure {
    match e {
        LegendreError::NonConvexPoint { point } => {
            Failure::math(format!("NonConvexPoint: Hessian of P is singular at x = [{}]", join(&point)))
        }
        LegendreError::Expr(e) => Failure::usage(e.to_string()),
        e => Failure::math(e.to_string()),
    }
}

pub fn run(args: &Args) -> Result<(), Failure> {
    let vars: Vec<String> = args.vars.split(',').map(|s| s.trim().to_string()).collect();
    let tree = ExprTree::parse(&args.p, &vars).map_err(|e| Failure::usage(format!("--P: {e}")))?;
    let p = ScalarField::new(tree);
    let n = vars.len();
    let points = match (&args.at, &args.grid) {
        (Some(at), _) => vec![numbers(at, "--at")?],
        (None, Some(g)) => grid_points(g, n)?,
        (None, None) => return Err(Failure::usage("one of --at or --grid is required")),
    };
    if let Some(bad) = points.iter().find(|pt| pt.len() != n) {
        return Err(Failure::usage(format!("point has {} coordinates, expected {n}", bad.len())));
    }
    let split = match &args.partial {
        Some(spec) => {
            let (i, j) = spec.split_once('/').ok_or_else(|| Failure::usage("--partial expects I/J"))?;
            let split = IndexSplit::new(one_based(i, n)?, one_based(j, n)?).map_err(|e| Failure::usage(format!("--partial: {e}")))?;
            Some(split)
        }
        None => None,
    };

    let mut worst = 0.0_f64;
    match &split {
        None => {
            let check_cols = if args.check { "\tr_grad\tr_inverse\tr_tilde\tr_biconjugate" } else { "" };
            println!("e\tx*\tP*{check_cols}");
            let mut guess: Option<Vec<f64>> = None;
            for e in &points {
                let r = legendre(&p, e, guess.as_deref()).or_else(|_| legendre(&p, e, None)).map_err(failure)?;
                let mut line = format!("{}\t{}\t{:.12e}", join(e), join(&r.point), r.value);
                if args.check {
                    let g = p.grad(&r.point).map_err(|e| failure(e.into()))?;
                    let r_grad = g.iter().zip(e).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                    let r_inv = legendre_inverse_check(&p, &r.point).map_err(failure)?;
                    let r_tilde = tilde_grad_check(&p, &r.point).map_err(failure)?;
                    let pp = biconjugate(&p, &r.point, e).map_err(failure)?;
                    let r_bi = (pp - p.value(&r.point).map_err(|e| failure(e.into()))?).abs();
                    for v in [r_grad, r_inv, r_tilde, r_bi] {
                        worst = worst.max(v);
                        line.push_str(&format!("\t{v:.3e}"));
                    }
                }
                println!("{line}");
                guess = Some(r.point);
            }
        }
        Some(split) => {
            let check_cols = if args.check { "\tr_grad" } else { "" };
            println!("(x_I,e_J)\tx_J*\tP*_J{check_cols}");
            for pt in &points {
                let e_j: Vec<f64> = split.j().iter().map(|&j| pt[j]).collect();
                let r = partial_legendre(&p, split.j(), pt, &e_j, None).map_err(failure)?;
                let mut line = format!("{}\t{}\t{:.12e}", join(pt), join(&r.point), r.value);
                if args.check {
                    let mut x = pt.clone();
                    for (a, &j) in split.j().iter().enumerate() {
                        x[j] = r.point[a];
                    }
                    let g = p.grad(&x).map_err(|e| failure(e.into()))?;
                    let r_grad = split.j().iter().zip(&e_j).fold(0.0_f64, |m, (&j, e)| m.max((g[j] - e).abs()));
                    worst = worst.max(r_grad);
                    line.push_str(&format!("\t{r_grad:.3e}"));
                }
                println!("{line}");
            }
        }
    }
    if args.check {
        println!("max residual: {worst:.3e}");
        if !(worst <= CHECK_TOLERANCE) {
            return Err(Failure::math(format!("identity residual {worst:e} exceeds {CHECK_TOLERANCE:e}")));
        }
    }
    Ok(())
}
