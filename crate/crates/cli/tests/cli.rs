use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(format!("{name}.json"))
}

fn phdae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phdae")).args(args).env_remove("PHDAE_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path_str(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

/// Parse a trajectory CSV into its header and numeric rows.
fn read_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn validate_fixture() {
    let o = phdae(&["validate", path_str(&fixture("two_capacitor"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("valid: n = 2, k = 1"));
}

#[test]
fn validate_non_skew_names_worst_sample() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    let text = std::fs::read_to_string(fixture("oscillator")).unwrap().replace(r#"[["0", "1"], ["-1", "0"]]"#, r#"[["0", "1"], ["1", "0"]]"#);
    std::fs::write(&p, text).unwrap();
    let o = phdae(&["validate", path_str(&p)]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("worst sample"), "{}", stdout(&o));
}

#[test]
fn malformed_json_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"n\": 2,\n  nope\n}").unwrap();
    let o = phdae(&["validate", path_str(&p)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3, column 3"), "{}", stderr(&o));
    assert_eq!(code(&phdae(&["validate", "/nonexistent/file.json"])), 1);
}

#[test]
fn morse_cubic_fails_validation() {
    let o = phdae(&["validate", path_str(&fixture("morse_cubic"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rank condition"));
}

#[test]
fn classify_examples() {
    let o = phdae(&["classify", path_str(&fixture("two_capacitor"))]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("1 Dirac constraint") && out.contains("x1 - x2 = 0") && out.contains("index-1 (sigma_min = 2)"), "{out}");

    let o = phdae(&["classify", path_str(&fixture("oscillator"))]);
    assert_eq!(stdout(&o).trim(), "no algebraic constraints; ISO form");

    let o = phdae(&["classify", "--json", path_str(&fixture("two_capacitor"))]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["dirac_constraints"], 1);
    assert_eq!(v["lagrange_constraints"], 0);
    assert_eq!(v["constraints"][0]["residual"], "x1 - x2 = 0");
    assert_eq!(v["index"]["sigma_min"], 2.0);
}

#[test]
fn convert_and_reclassify() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ext.json");
    let o = phdae(&["convert", path_str(&fixture("two_capacitor")), "--to", "lagrange", "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["state_names"], serde_json::json!(["x1", "x2", "lam1"]));
    assert_eq!(v["storage"]["generating"]["V"], "0.5*x1^2 + 0.5*x2^2");
    assert_eq!(code(&phdae(&["validate", path_str(&out)])), 0);

    let o = phdae(&["classify", path_str(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("1 Lagrange constraint") && stdout(&o).contains("lam1 = 0"), "{}", stdout(&o));
}

#[test]
fn convert_implicit_to_dirac() {
    let o = phdae(&["convert", path_str(&fixture("implicit_oscillator")), "--to", "dirac"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["storage"]["hamiltonian"], "0.5*x1^2 - 0.5*lam1^2 + lam1*x2");
}

#[test]
fn convert_nothing_to_convert() {
    let o = phdae(&["convert", path_str(&fixture("oscillator")), "--to", "lagrange"]);
    assert_eq!(code(&o), 2);
    let o = phdae(&["convert", path_str(&fixture("oscillator")), "--to", "sideways"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_oscillator_period() {
    let o = phdae(&["simulate", path_str(&fixture("oscillator")), "--x0", "1,0", "--t0", "0", "--t1", "6.2832", "--dt", "1e-3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&stdout(&o));
    assert_eq!(header, ["t", "x1", "x2", "energy", "constraint_residual", "power_balance_residual", "port_power"]);
    let last = rows.last().unwrap();
    #[allow(clippy::approx_constant)]
    let t: f64 = 6.2832;
    assert_eq!(last[0], t);
    assert!((last[1] - t.cos()).abs() < 1e-5 && (last[2] + t.sin()).abs() < 1e-5, "{last:?}");
    assert!(rows.iter().all(|r| (r[3] - 0.5).abs() <= 1e-10));
}

#[test]
fn simulate_lq_reaches_cosh() {
    let o = phdae(&["simulate", path_str(&fixture("lq_optimal_control")), "--x0", "1,0", "--t1", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&stdout(&o));
    assert_eq!(&header[..5], ["t", "q", "p", "u", "lam_star_1"]);
    assert!((rows.last().unwrap()[1] - 1.543081).abs() < 1e-5);
}

#[test]
fn simulate_usage_errors() {
    let osc = fixture("oscillator");
    assert_eq!(code(&phdae(&["simulate", path_str(&osc), "--t1", "1"])), 1);
    assert_eq!(code(&phdae(&["simulate", path_str(&osc), "--x0", "1,0,0", "--t1", "1"])), 1);
    assert_eq!(code(&phdae(&["simulate", path_str(&osc), "--x0", "1,0", "--t1", "1", "--dt", "0"])), 1);
    assert_eq!(code(&phdae(&["simulate", path_str(&osc), "--x0", "a", "--t1", "1"])), 1);
    assert_eq!(code(&phdae(&["frobnicate"])), 1);
    assert_eq!(code(&phdae(&["--help"])), 0);
}

#[test]
fn simulate_failure_writes_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("quartic.json");
    std::fs::write(
        &sys,
        r#"{"n": 1, "state_names": ["x1"], "J": [["0"]], "B": [["1"]], "storage": {"hamiltonian": "0.25*x1^4"}}"#,
    )
    .unwrap();
    let out = dir.path().join("traj.csv");
    let o = phdae(&["simulate", path_str(&sys), "--x0", "0", "--t1", "1", "--dt", "0.1", "--out", path_str(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("index condition"), "{}", stderr(&o));
    let (_, rows) = read_csv(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 1);
}

#[test]
fn simulate_is_deterministic() {
    let cap = fixture("two_capacitor");
    let args = ["simulate", path_str(&cap), "--x0", "1", "--t1", "0.5", "--dt", "0.01", "--u", "sin(t)"];
    let a = phdae(&args);
    let b = phdae(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert!(!a.stdout.contains(&b'\r'));
}

#[test]
fn seed_override() {
    let out = Command::new(env!("CARGO_BIN_EXE_phdae"))
        .args(["validate", path_str(&fixture("oscillator"))])
        .env("PHDAE_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let bad = Command::new(env!("CARGO_BIN_EXE_phdae"))
        .args(["validate", path_str(&fixture("oscillator"))])
        .env("PHDAE_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 1);
}

#[test]
fn legendre_examples() {
    let o = phdae(&["legendre", "--P", "x^2", "--at", "2"]);
    assert_eq!(code(&o), 0);
    let row: Vec<f64> = stdout(&o).lines().nth(1).unwrap().split('\t').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row, [2.0, 1.0, 1.0]);

    let o = phdae(&["legendre", "--P", "0.5*x^2", "--grid", "-1:1:21", "--check"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 23);
    for line in stdout(&o).lines().skip(1).take(21) {
        let cols: Vec<f64> = line.split('\t').map(|v| v.parse().unwrap()).collect();
        assert!(cols[3..].iter().all(|r| *r <= 1e-10), "{line}");
    }

    let o = phdae(&["legendre", "--P", "x^3", "--at", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("NonConvexPoint"));

    let o = phdae(&["legendre", "--P", "0.5*a^2 + 0.5*b^2", "--vars", "a,b", "--partial", "1/2", "--at", "1,2", "--check"]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&phdae(&["legendre", "--P", "x^2", "--at", "1", "--grid", "0:1:2"])), 1);
    assert_eq!(code(&phdae(&["legendre", "--P", "x^^2", "--at", "1"])), 1);
}
