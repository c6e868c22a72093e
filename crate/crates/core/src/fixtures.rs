//! Built-in example systems with known behavior. The system descriptions are
//! the JSON files under `fixtures/`; the reference solutions live here.

use thiserror::Error;

use crate::phsystem::{PHSystem, SystemError};
use crate::schema::{SchemaError, SystemDescription};
use crate::simulate::SimConfig;

pub const FIXTURE_NAMES: [&str; 6] =
    ["oscillator", "damped_oscillator", "two_capacitor", "lq_optimal_control", "implicit_oscillator", "morse_cubic"];

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// What a simulation of the fixture should produce.
#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub note: &'static str,
    /// Exact state at time `t` from the fixture's default initial condition.
    pub solution: Option<fn(f64) -> Vec<f64>>,
    /// Pointwise tolerance of the default simulation against `solution`.
    pub tolerance: f64,
}

#[derive(Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub description: SystemDescription,
    /// The assembled system, or the expected failure for negative fixtures.
    pub system: Result<PHSystem, SystemError>,
    pub x0: Vec<f64>,
    pub config: SimConfig,
    pub reference: Reference,
}

impl Fixture {
    /// Panics on negative fixtures.
    pub fn sys(&self) -> &PHSystem {
        self.system.as_ref().unwrap_or_else(|e| panic!("fixture {} does not assemble: {e}", self.name))
    }
}

pub fn fixture_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "oscillator" => include_str!("../fixtures/oscillator.json"),
        "damped_oscillator" => include_str!("../fixtures/damped_oscillator.json"),
        "two_capacitor" => include_str!("../fixtures/two_capacitor.json"),
        "lq_optimal_control" => include_str!("../fixtures/lq_optimal_control.json"),
        "implicit_oscillator" => include_str!("../fixtures/implicit_oscillator.json"),
        "morse_cubic" => include_str!("../fixtures/morse_cubic.json"),
        _ => return None,
    })
}

/// End time of the oscillator runs; deliberately a rounded value, not 2π.
#[allow(clippy::approx_constant)]
const PERIOD_END: f64 = 6.2832;

fn rotation(t: f64) -> Vec<f64> {
    vec![t.cos(), -t.sin()]
}

fn damped(t: f64) -> Vec<f64> {
    let w = 3f64.sqrt() / 2.0;
    let decay = (-t / 2.0).exp();
    vec![decay * ((w * t).cos() + (w * t).sin() / (2.0 * w)), -decay * (w * t).sin() / w]
}

fn charging(t: f64) -> Vec<f64> {
    vec![t / 2.0, t / 2.0]
}

fn lq(t: f64) -> Vec<f64> {
    vec![t.cosh(), -t.sinh(), t.sinh()]
}

pub fn load_fixture(name: &str) -> Result<Fixture, FixtureError> {
    load_fixture_with_seed(name, None)
}

pub fn load_fixture_with_seed(name: &str, seed: Option<u64>) -> Result<Fixture, FixtureError> {
    let src = fixture_source(name).ok_or_else(|| FixtureError::UnknownFixture(name.to_string()))?;
    let description = SystemDescription::from_json(src)?;
    let system = match description.to_system(seed) {
        Ok(s) => Ok(s),
        Err(SchemaError::System(e)) => Err(e),
        Err(e) => return Err(e.into()),
    };
    let (name, x0, config, reference) = match name {
        "oscillator" => (
            "oscillator",
            vec![1.0, 0.0],
            SimConfig::new(0.0, PERIOD_END, 1e-3),
            Reference { note: "x1 = cos t, x2 = -sin t", solution: Some(rotation), tolerance: 1e-5 },
        ),
        "damped_oscillator" => (
            "damped_oscillator",
            vec![1.0, 0.0],
            SimConfig::new(0.0, 10.0, 1e-3),
            Reference {
                note: "x1'' + x1' + x1 = 0: x1 = e^(-t/2) (cos wt + sin wt / 2w), w = sqrt(3)/2",
                solution: Some(damped),
                tolerance: 1e-5,
            },
        ),
        "two_capacitor" => (
            "two_capacitor",
            vec![0.0, 0.0],
            SimConfig::new(0.0, 1.0, 0.01).with_inputs(&["1"]).expect("constant input parses"),
            Reference { note: "unit current splits evenly: x1 = x2 = t/2, lambda = -1/2", solution: Some(charging), tolerance: 1e-10 },
        ),
        "lq_optimal_control" => (
            "lq_optimal_control",
            vec![1.0, 0.0, 0.0],
            SimConfig::new(0.0, 1.0, 1e-3),
            Reference { note: "q'' = q: q = cosh t, p = -sinh t, u = sinh t", solution: Some(lq), tolerance: 1e-5 },
        ),
        "implicit_oscillator" => (
            "implicit_oscillator",
            vec![1.0, 0.0],
            SimConfig::new(0.0, PERIOD_END, 1e-3),
            Reference { note: "same flow as oscillator: x1 = cos t, x2 = -sin t", solution: Some(rotation), tolerance: 1e-5 },
        ),
        _ => (
            "morse_cubic",
            vec![0.0],
            SimConfig::new(0.0, 1.0, 1e-2),
            Reference { note: "dF/dlam = 3 lam^2 has a degenerate zero set; assembly must fail", solution: None, tolerance: 0.0 },
        ),
    };
    Ok(Fixture { name, description, system, x0, config, reference })
}
