use nalgebra::DMatrix;
use phdae_core::expr::var_list;
use phdae_core::geometry::{lagrangian_membership, validate_dirac, DiracStructure, IndexSplit, StorageRelation};
use phdae_core::legendre::{biconjugate, legendre, legendre_inverse_check, tilde, tilde_grad_check};
use phdae_core::schema::SystemDescription;
use phdae_core::{simulate, ExprTree, MatrixExpr, ScalarField, SimConfig};
use proptest::prelude::*;

const VARS: [&str; 3] = ["x", "y", "z"];

/// Random expressions over `x, y, z` that are smooth on all of R^3.
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        prop::sample::select(VARS.to_vec()).prop_map(String::from),
        (1i32..=9).prop_map(|c| format!("{}", c as f64 / 4.0)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})/(2 + ({b})^2)")),
            (inner.clone(), 2u32..=3).prop_map(|(a, k)| format!("({a})^{k}")),
            inner.clone().prop_map(|a| format!("-({a})")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("tanh({a})")),
            inner.clone().prop_map(|a| format!("exp(tanh({a}))")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.prop_map(|a| format!("ln(2 + ({a})^2)")),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 3)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_matches_finite_differences(src in smooth_expr(), x in point()) {
        let f = ScalarField::new(ExprTree::parse(&src, &VARS).unwrap());
        let g = f.grad(&x).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (f.value(&p).unwrap() - f.value(&m).unwrap()) / (2.0 * h);
            prop_assert!(close(g[i], fd, 1e-5), "{src}: d/d{} = {} vs {fd}", VARS[i], g[i]);
        }
    }

    #[test]
    fn hessian_matches_finite_differences(src in smooth_expr(), x in point()) {
        let f = ScalarField::new(ExprTree::parse(&src, &VARS).unwrap());
        let hs = f.hessian(&x).unwrap();
        prop_assert!((&hs - hs.transpose()).amax() <= 1e-9 * hs.amax().max(1.0));
        let h = 1e-5;
        for j in 0..3 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[j] += h;
            m[j] -= h;
            let fd = (f.grad(&p).unwrap() - f.grad(&m).unwrap()) / (2.0 * h);
            for i in 0..3 {
                prop_assert!(close(hs[(i, j)], fd[i], 1e-5), "{src}: H[{i},{j}] = {} vs {}", hs[(i, j)], fd[i]);
            }
        }
    }

    #[test]
    fn printing_round_trips(src in smooth_expr(), x in point()) {
        let t = ExprTree::parse(&src, &VARS).unwrap();
        let printed = t.to_string();
        let again = ExprTree::parse(&printed, &VARS).unwrap();
        prop_assert_eq!(again.to_string(), printed.clone());
        prop_assert!(close(t.eval(&x).unwrap(), again.eval(&x).unwrap(), 1e-12), "{src} -> {printed}");
    }

    #[test]
    fn generating_function_points_are_members(
        a in 0.2f64..3.0, b in -1.0f64..1.0, c in 0.2f64..3.0, d in -1.0f64..1.0,
        xi in -1.5f64..1.5, ej in -1.5f64..1.5,
    ) {
        // V(x1, e_x2) = a/2 x1^2 + b x1 e + c/4 e^4 + d sin(e)
        let split = IndexSplit::new(vec![0], vec![1]).unwrap();
        let src = format!("{a}/2*x1^2 + {b}*x1*e_x2 + {c}/4*e_x2^4 + {d}*sin(e_x2)");
        let v = ScalarField::new(ExprTree::parse(&src, &["x1", "e_x2"]).unwrap());
        let s = StorageRelation::generating(split, v.tree().clone()).unwrap();
        let g = v.grad(&[xi, ej]).unwrap();
        let (x, e) = ([xi, -g[1]], [g[0], ej]);
        let m = lagrangian_membership(&s, &x, &e, 1e-10, 1).unwrap();
        prop_assert!(m.member && m.residual <= 1e-10, "{m:?}");
        let off = lagrangian_membership(&s, &x, &[g[0] + 0.1, ej], 1e-10, 1).unwrap();
        prop_assert!(!off.member);
    }

    #[test]
    fn legendre_identities_on_convex_polynomials(
        a in 0.1f64..3.0, b in 0.0f64..1.0, c in -1.0f64..1.0, e in -3.0f64..3.0,
    ) {
        let p = ScalarField::new(ExprTree::parse(&format!("{a}*x^2 + {b}*x^4 + {c}*x"), &["x"]).unwrap());
        let r = legendre(&p, &[e], None).unwrap();
        let x = r.point[0];
        prop_assert!((p.grad(&[x]).unwrap()[0] - e).abs() <= 1e-9);
        prop_assert!((r.value - (e * x - p.value(&[x]).unwrap())).abs() <= 1e-12);
        prop_assert!(legendre_inverse_check(&p, &[x]).unwrap() <= 1e-9);
        prop_assert!(tilde_grad_check(&p, &[x]).unwrap() <= 1e-9);
        prop_assert!((biconjugate(&p, &[x], &[e]).unwrap() - p.value(&[x]).unwrap()).abs() <= 1e-7);
    }

    #[test]
    fn tilde_is_identity_on_quadratic_forms(
        q in prop::collection::vec(-2.0f64..2.0, 3), x in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let p = ScalarField::new(ExprTree::parse(&format!("{}*a^2 + {}*a*b + {}*b^2", q[0], q[1], q[2]), &["a", "b"]).unwrap());
        prop_assert!((tilde(&p, &x).unwrap() - p.value(&x).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn graph_form_dirac_is_isotropic(
        j in prop::collection::vec(-2.0f64..2.0, 3), bcol in prop::collection::vec(-1.0f64..1.0, 3),
        gcol in prop::collection::vec(-1.0f64..1.0, 3), seed in any::<u64>(),
    ) {
        prop_assume!(bcol.iter().map(|v| v * v).sum::<f64>() > 1e-2);
        let vars = var_list(&["x1", "x2", "x3"]).unwrap();
        // J(x) = constant skew part plus a state-dependent skew entry
        let grid = vec![
            vec!["0".to_string(), format!("{} + x3", j[0]), format!("{}", j[1])],
            vec![format!("-({} + x3)", j[0]), "0".into(), format!("{}*sin(x1)", j[2])],
            vec![format!("-{}", j[1]), format!("-({}*sin(x1))", j[2]), "0".into()],
        ];
        let col = |v: &[f64]| v.iter().map(|c| vec![format!("{c}")]).collect::<Vec<_>>();
        let d = DiracStructure::new(
            MatrixExpr::parse(&grid, 3, vars.clone()).unwrap(),
            MatrixExpr::parse(&col(&bcol), 1, vars.clone()).unwrap(),
            MatrixExpr::zeros(3, 0, vars.clone()),
            MatrixExpr::parse(&col(&gcol), 1, vars.clone()).unwrap(),
        )
        .unwrap();
        let samples: Vec<Vec<f64>> = (0..5).map(|i| vec![0.3 * i as f64, -0.2 * i as f64, 0.1 * i as f64]).collect();
        let r = validate_dirac(&d, &samples, seed).unwrap();
        prop_assert!(r.passed && r.max_isotropy() <= 1e-10, "{r:?}");
    }

    #[test]
    fn midpoint_conserves_random_quadratic_energy(
        l in prop::collection::vec(-1.0f64..1.0, 3), jv in -2.0f64..2.0, x0 in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        // H = 1/2 xᵀ (LLᵀ + I/2) x with L lower triangular
        let lm = DMatrix::from_row_slice(2, 2, &[l[0], 0.0, l[1], l[2]]);
        let q = &lm * lm.transpose() + DMatrix::identity(2, 2) * 0.5;
        let h = format!("0.5*{}*x1^2 + {}*x1*x2 + 0.5*{}*x2^2", q[(0, 0)], q[(0, 1)], q[(1, 1)]);
        let text = format!(
            r#"{{"n": 2, "state_names": ["x1", "x2"], "J": [["0", "{jv}"], ["-{jv}", "0"]], "storage": {{"hamiltonian": "{h}"}}}}"#
        );
        let sys = SystemDescription::from_json(&text).unwrap().to_system(None).unwrap();
        let traj = simulate(&sys, &x0, &SimConfig::new(0.0, 1.0, 0.05)).unwrap();
        let h0 = traj.energy[0];
        prop_assert!(traj.energy.iter().all(|e| (e - h0).abs() <= 1e-11 * h0.max(1.0)));
    }

    #[test]
    fn schema_round_trip_through_system(
        c in prop::collection::vec(0.1f64..3.0, 2), jv in -2.0f64..2.0,
    ) {
        let text = format!(
            r#"{{"n": 2, "state_names": ["q", "p"], "J": [["0", "{jv}"], ["-({jv})", "0"]],
                 "G_R": [["0"], ["1"]], "Rbar": [[{r}]], "storage": {{"hamiltonian": "{a}*q^2 + {b}*p^2"}}}}"#,
            a = c[0], b = c[1], r = c[0] * c[1],
        );
        let d = SystemDescription::from_json(&text).unwrap();
        let again = SystemDescription::from_json(&d.to_json()).unwrap();
        prop_assert_eq!(&again, &d);
        let via = SystemDescription::from_system(&d.to_system(None).unwrap());
        prop_assert_eq!(via, d.normalized().unwrap());
    }
}
