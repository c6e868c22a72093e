use std::fs;
use std::io::{self, Write};
use std::path::Path;

use phdae_core::geometry::ValidationReport;
use phdae_core::phsystem::{ConstraintReport, Residual};
use phdae_core::simulate::INDEX_TOLERANCE;
use phdae_core::{
    dirac_to_lagrange, extract_constraints, index_check, lagrange_to_dirac, ConstraintClass, PHSystem, SchemaError,
    SimConfig, SimError, SystemDescription, SystemError, Trajectory,
};
use serde_json::json;

use crate::Failure;

/// Sample points used for the index margin in `classify`.
const INDEX_SAMPLES: usize = 10;

fn read_description(path: &Path) -> Result<SystemDescription, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    SystemDescription::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn system_failure(e: &SystemError) -> Failure {
    match e {
        SystemError::ValidationFailed { report: Some(r), .. } | SystemError::MorseRankFailure { report: Some(r) } => {
            print_report(r);
        }
        _ => {}
    }
    Failure::math(e.to_string())
}

fn load(path: &Path, seed: Option<u64>) -> Result<PHSystem, Failure> {
    let desc = read_description(path)?;
    match desc.to_system(seed) {
        Ok(s) => Ok(s),
        Err(SchemaError::System(e)) => Err(system_failure(&e)),
        Err(e) => Err(Failure::usage(format!("{}: {e}", path.display()))),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3e}"))
}

fn print_report(r: &ValidationReport) {
    println!("{:?} check over {} samples", r.kind, r.samples.len());
    println!("{:>6}  {:>10}  {:>10}  {:>4}  {:>8}  {:>10}  ok", "sample", "isotropy", "skewness", "dim", "expected", "morse_rank");
    for (i, s) in r.samples.iter().enumerate() {
        let dim = |d: Option<usize>| d.map_or_else(|| "-".into(), |d| d.to_string());
        println!(
            "{:>6}  {:>10}  {:>10}  {:>4}  {:>8}  {:>10}  {}",
            i + 1,
            fmt_opt(s.isotropy),
            fmt_opt(s.skewness),
            dim(s.dimension),
            dim(s.expected_dimension),
            fmt_opt(s.morse_sigma_min),
            if s.passed { "yes" } else { "NO" }
        );
    }
    if let Some(w) = r.worst() {
        let idx = r.samples.iter().position(|s| std::ptr::eq(s, w)).map_or(0, |i| i + 1);
        println!("worst sample: #{idx} at {:?}", w.point);
    }
}

pub fn validate(path: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let sys = load(path, seed)?;
    print_report(sys.dirac_report());
    if let Some(m) = sys.morse_report() {
        print_report(m);
    }
    println!(
        "valid: n = {}, k = {}, m_R = {}, m_P = {}, storage = {}",
        sys.n(),
        sys.k(),
        sys.m_r(),
        sys.m_p(),
        sys.storage().kind()
    );
    Ok(())
}

fn plural(count: usize, word: &str) -> String {
    format!("{count} {word} constraint{}", if count == 1 { "" } else { "s" })
}

/// Smallest index margin over the first sample points, skipping points where
/// the check cannot be evaluated.
fn index_margin(sys: &PHSystem) -> Option<f64> {
    sys.sampling()
        .points()
        .iter()
        .take(INDEX_SAMPLES)
        .filter_map(|x| index_check(sys, x).ok())
        .reduce(f64::min)
}

fn class_name(c: ConstraintClass) -> &'static str {
    match c {
        ConstraintClass::Dirac => "dirac",
        ConstraintClass::Lagrange => "lagrange",
    }
}

fn classify_json(sys: &PHSystem, report: &ConstraintReport, sigma: Option<f64>) -> serde_json::Value {
    let constraints: Vec<_> = report
        .constraints
        .iter()
        .map(|c| {
            json!({
                "class": class_name(c.class),
                "residual": c.describe(),
                "symbolic": matches!(c.residual, Residual::Symbolic(_)),
            })
        })
        .collect();
    let sigma_json = sigma.map(|s| if s.is_finite() { json!(s) } else { json!("inf") });
    json!({
        "dirac_constraints": report.count(ConstraintClass::Dirac),
        "lagrange_constraints": report.count(ConstraintClass::Lagrange),
        "constraints": constraints,
        "iso_form": sys.is_input_state_output(),
        "index": {
            "sigma_min": sigma_json,
            "index_one": sigma.map(|s| s >= INDEX_TOLERANCE),
        },
        "probes": report.probes,
        "inconclusive_probes": report.inconclusive(),
    })
}

pub fn classify(path: &Path, seed: Option<u64>, as_json: bool) -> Result<(), Failure> {
    let sys = load(path, seed)?;
    let report = extract_constraints(&sys).map_err(|e| system_failure(&e))?;
    let sigma = if sys.k() > 0 { index_margin(&sys) } else { Some(f64::INFINITY) };
    if as_json {
        println!("{}", serde_json::to_string_pretty(&classify_json(&sys, &report, sigma)).expect("report serializes"));
    } else if report.is_empty() {
        let iso = if sys.is_input_state_output() { "; ISO form" } else { "" };
        println!("no algebraic constraints{iso}");
    } else {
        let (d, l) = (report.count(ConstraintClass::Dirac), report.count(ConstraintClass::Lagrange));
        let mut parts = Vec::new();
        if d > 0 {
            parts.push(plural(d, "Dirac"));
        }
        if l > 0 {
            parts.push(plural(l, "Lagrange"));
        }
        println!("{}", parts.join(", "));
        for c in &report.constraints {
            println!("  {}: {}", class_name(c.class), c.describe());
        }
        if sys.k() > 0 {
            match sigma {
                Some(s) if s >= INDEX_TOLERANCE => println!("index-1 (sigma_min = {s})"),
                Some(s) => println!("index condition fails (sigma_min = {s:e})"),
                None => println!("index check not available at the sample points"),
            }
        }
    }
    if !report.probes.is_empty() && !as_json {
        let feasible = report.probes.iter().filter(|p| p.feasible == Some(true)).count();
        let infeasible = report.probes.iter().filter(|p| p.feasible == Some(false)).count();
        println!("projection probes: {feasible} feasible, {infeasible} infeasible, {} inconclusive", report.inconclusive());
    }
    if report.inconclusive() > 0 {
        return Err(Failure::math(format!("{} projection probes were inconclusive", report.inconclusive())));
    }
    Ok(())
}

pub fn convert(path: &Path, seed: Option<u64>, to_lagrange: bool, out: Option<&Path>) -> Result<(), Failure> {
    let sys = load(path, seed)?;
    let converted = if to_lagrange { dirac_to_lagrange(&sys) } else { lagrange_to_dirac(&sys) }.map_err(|e| system_failure(&e))?;
    let desc = SystemDescription::from_system(&converted);
    let text = desc.to_json();
    if let Err(e) = SystemDescription::from_json(&text).and_then(|d| d.to_system(seed)) {
        return Err(Failure::math(format!("converted system does not re-assemble: {e}")));
    }
    write_output(out, text.as_bytes())?;
    eprintln!("converted to {} states: {}", converted.n(), converted.names().join(", "));
    Ok(())
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    let res = match out {
        Some(p) => fs::write(p, bytes),
        None => io::stdout().lock().write_all(bytes),
    };
    res.map_err(|e| Failure::usage(format!("cannot write output: {e}")))
}

pub struct SimArgs {
    pub x0: String,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub u: Vec<String>,
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Failure::usage(format!("{what}: '{t}' is not a number"))))
        .collect()
}

fn csv_bytes(traj: &Trajectory) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).map_err(|e| Failure::usage(format!("cannot format CSV: {e}")))?;
    Ok(buf)
}

pub fn simulate(path: &Path, seed: Option<u64>, args: &SimArgs, out: Option<&Path>) -> Result<(), Failure> {
    let sys = load(path, seed)?;
    let mut x0 = parse_list(&args.x0, "--x0")?;
    if x0.len() > sys.n() {
        return Err(Failure::usage(format!("--x0 has {} entries, the system has {} states", x0.len(), sys.n())));
    }
    x0.resize(sys.n(), 0.0);
    let cfg = SimConfig::new(args.t0, args.t1, args.dt)
        .with_inputs(&args.u)
        .map_err(|e| Failure::usage(format!("--u: {e}")))?;
    match phdae_core::simulate(&sys, &x0, &cfg) {
        Ok(traj) => write_output(out, &csv_bytes(&traj)?),
        Err(SimError::InvalidConfig(m)) => Err(Failure::usage(m)),
        Err(SimError::StepFailed { cause, partial }) => {
            write_output(out, &csv_bytes(&partial)?)?;
            eprintln!("note: trajectory truncated after {} rows", partial.len());
            Err(Failure::math(cause.to_string()))
        }
        Err(e) => Err(Failure::math(e.to_string())),
    }
}
