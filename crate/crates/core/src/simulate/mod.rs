//! Implicit-midpoint integration of the constrained dynamics
//! `ẋ = (J − G_R R̄ G_Rᵀ)e + Bλ* + Gu`, `0 = Bᵀe`, with `(x, e) ∈ L`,
//! plus energy and constraint diagnostics.

mod chart;
mod stepper;

use std::io::Write;

use nalgebra::DVector;
use thiserror::Error;

use crate::expr::{ExprError, ExprTree};
use crate::geometry::{lagrange_constraint_probe, GeometryError, StorageRelation, RANK_TOLERANCE};
use crate::numerics::{numerical_rank, NewtonConfig, NumericsError};
use crate::phsystem::{lagrange_to_dirac, PHSystem, SystemError};

use stepper::{State, Stepper};

/// Index-1 verdict threshold on the constraint block's smallest singular value.
pub const INDEX_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("index condition violated at t = {t} (sigma_min = {sigma:e})")]
    IndexViolation { t: f64, sigma: f64 },
    #[error("chart breakdown at t = {t}: costate block of the generating function is singular")]
    ChartBreakdown { t: f64 },
    #[error("step from t = {t} failed: {source}")]
    NoConvergence { t: f64, source: NumericsError },
}

impl StepError {
    fn from_numerics(t: f64, source: NumericsError) -> Self {
        StepError::NoConvergence { t, source }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("consistent initialization failed: {0}")]
    Init(NumericsError),
    #[error("{cause}")]
    StepFailed { cause: StepError, partial: Box<Trajectory> },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub newton: NewtonConfig,
    /// One expression over `t` per port; empty means zero input.
    pub inputs: Vec<ExprTree>,
    /// Record every `output_every`-th step (the final step is always kept).
    pub output_every: usize,
}

impl SimConfig {
    pub fn new(t0: f64, t1: f64, dt: f64) -> Self {
        SimConfig {
            t0,
            t1,
            dt,
            newton: NewtonConfig { tolerance: 1e-12, ..NewtonConfig::default() },
            inputs: Vec::new(),
            output_every: 1,
        }
    }

    /// Parse input expressions over the single variable `t`.
    pub fn with_inputs<S: AsRef<str>>(mut self, exprs: &[S]) -> Result<Self, ExprError> {
        self.inputs = exprs.iter().map(|s| ExprTree::parse(s.as_ref(), &["t"])).collect::<Result<_, _>>()?;
        Ok(self)
    }

    pub fn validate(&self, m_p: usize) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t1 > self.t0) || !self.t0.is_finite() || !self.t1.is_finite() {
            return bad(format!("need t1 > t0, got [{}, {}]", self.t0, self.t1));
        }
        if !self.inputs.is_empty() && self.inputs.len() != m_p {
            return bad(format!("{} input signals given for {m_p} ports", self.inputs.len()));
        }
        if self.output_every == 0 {
            return bad("output cadence must be at least 1".into());
        }
        self.newton.validate().map_err(SimError::InvalidConfig)
    }

    /// `t0, t0 + dt, ...`, with the last step shortened to land on `t1`.
    pub fn grid(&self) -> Vec<f64> {
        let span = self.t1 - self.t0;
        let steps = ((span / self.dt) - 1e-9).ceil().max(1.0) as usize;
        let mut t: Vec<f64> = (0..steps).map(|i| self.t0 + i as f64 * self.dt).collect();
        t.push(self.t1);
        t
    }
}

/// Simulation output, one row per recorded time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state_names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `λ*` over the step ending at each row; row 0 repeats the first step.
    pub multipliers: Vec<Vec<f64>>,
    /// `H(x)`, or `H̃(x_I, e_J)` for generating-function storage.
    pub energy: Vec<f64>,
    pub constraint_residual: Vec<f64>,
    /// `ΔH/Δt − (port + dissipation power)` over the step ending at each row.
    pub power_balance_residual: Vec<f64>,
    /// `uᵀGᵀe` at the step midpoint.
    pub port_power: Vec<f64>,
    /// `e_Rᵀf_R ≤ 0` at the step midpoint.
    pub dissipation_power: Vec<f64>,
    /// Index-1 margin at the step midpoint; `+inf` without multipliers.
    pub index_sigma: Vec<f64>,
}

impl Trajectory {
    fn new(state_names: Vec<String>) -> Self {
        Trajectory {
            state_names,
            times: Vec::new(),
            states: Vec::new(),
            multipliers: Vec::new(),
            energy: Vec::new(),
            constraint_residual: Vec::new(),
            power_balance_residual: Vec::new(),
            port_power: Vec::new(),
            dissipation_power: Vec::new(),
            index_sigma: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn multiplier_count(&self) -> usize {
        self.multipliers.first().map_or(0, Vec::len)
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.state_names.iter().position(|s| s == name)?;
        Some(self.states.iter().map(|r| r[i]).collect())
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(self.state_names.iter().cloned());
        h.extend((1..=self.multiplier_count()).map(|i| format!("lam_star_{i}")));
        h.extend(["energy", "constraint_residual", "power_balance_residual", "port_power"].map(String::from));
        h
    }

    /// Header plus one row per record, numbers with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(self.csv_header())?;
        let fmt = |v: f64| format!("{v:.16e}");
        for r in 0..self.len() {
            let mut row = vec![fmt(self.times[r])];
            row.extend(self.states[r].iter().map(|v| fmt(*v)));
            row.extend(self.multipliers[r].iter().map(|v| fmt(*v)));
            row.push(fmt(self.energy[r]));
            row.push(fmt(self.constraint_residual[r]));
            row.push(fmt(self.power_balance_residual[r]));
            row.push(fmt(self.port_power[r]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Summary of the discrete power balance along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBalance {
    /// `max |ΔH/Δt − (port + dissipation)|`
    pub max_residual: f64,
    /// `max(ΔH/Δt − port, 0)`
    pub max_passivity_violation: f64,
    /// `max |H(t) − H(t0)|`
    pub max_drift: f64,
}

pub fn energy_balance(traj: &Trajectory) -> EnergyBalance {
    let mut b = EnergyBalance { max_residual: 0.0, max_passivity_violation: 0.0, max_drift: 0.0 };
    let h0 = traj.energy.first().copied().unwrap_or(0.0);
    for r in 1..traj.len() {
        let res = traj.power_balance_residual[r];
        b.max_residual = b.max_residual.max(res.abs());
        b.max_passivity_violation = b.max_passivity_violation.max(res + traj.dissipation_power[r]);
        b.max_drift = b.max_drift.max((traj.energy[r] - h0).abs());
    }
    b
}

/// Internal storage coordinates (`e_J` or `λ`) at a guess, when feasible.
fn internal_guess(sys: &PHSystem, x: &[f64]) -> Vec<f64> {
    match lagrange_constraint_probe(sys.storage(), x, sys.sampling().seed) {
        Ok(p) if p.feasible => p.witness.unwrap_or_default(),
        _ => Vec::new(),
    }
}

/// Morse-family storage is simulated on the explicit system `lagrange_to_dirac(sys)`,
/// with the guess extended by the `λ` witness.
fn resolve(sys: &PHSystem, x_guess: &[f64]) -> Result<(Option<PHSystem>, Vec<f64>, Vec<f64>), SimError> {
    if x_guess.len() != sys.n() {
        return Err(SimError::InvalidConfig(format!("initial state has {} entries, expected {}", x_guess.len(), sys.n())));
    }
    match sys.storage() {
        StorageRelation::Morse { k, .. } => {
            let ext = lagrange_to_dirac(sys)?;
            let mut lam = internal_guess(sys, x_guess);
            lam.resize(*k, 0.0);
            let x: Vec<f64> = x_guess.iter().copied().chain(lam).collect();
            Ok((Some(ext), x, Vec::new()))
        }
        StorageRelation::Generating { .. } => Ok((None, x_guess.to_vec(), internal_guess(sys, x_guess))),
        StorageRelation::Explicit { .. } => Ok((None, x_guess.to_vec(), Vec::new())),
    }
}

/// Project a guess onto the constraint set. For Morse storage the returned
/// state is on the extended space `(x, λ)`.
pub fn consistent_init(sys: &PHSystem, x_guess: &[f64]) -> Result<Vec<f64>, SimError> {
    let (ext, x, internal) = resolve(sys, x_guess)?;
    let target = ext.as_ref().unwrap_or(sys);
    let st = Stepper::new(target, Vec::new(), SimConfig::new(0.0, 1.0, 1.0).newton).expect("chart exists");
    let z = st.consistent_init(&x, &internal)?;
    Ok(st.chart().x(z.as_slice()).map_err(SimError::Init)?.iter().copied().collect())
}

/// Smallest singular value of the index-1 block at `x`; `+inf` when `k = 0`.
pub fn index_check(sys: &PHSystem, x: &[f64]) -> Result<f64, SimError> {
    let (ext, xe, internal) = resolve(sys, x)?;
    let target = ext.as_ref().unwrap_or(sys);
    if target.k() == 0 {
        return Ok(f64::INFINITY);
    }
    let b = target.dirac().b_field().eval(&xe)?;
    let rank = numerical_rank(&b, RANK_TOLERANCE);
    if rank < target.k() {
        return Err(GeometryError::RankDeficientConstraint { rank, k: target.k(), point: x.to_vec() }.into());
    }
    let st = Stepper::new(target, Vec::new(), NewtonConfig::default()).expect("chart exists");
    let z = st.chart().z_from(&xe, &internal);
    st.index_sigma_at(&z).map_err(SimError::Init)
}

/// One step from a consistent state `x` (for generating storage the costates
/// are recovered from `x`). Returns the new state and `λ*`.
pub fn step(sys: &PHSystem, x: &[f64], t: f64, dt: f64, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let (ext, xe, internal) = resolve(sys, x)?;
    let target = ext.as_ref().unwrap_or(sys);
    let inputs = u.iter().map(|v| ExprTree::parse(&format!("{v:e}"), &["t"])).collect::<Result<Vec<_>, _>>()?;
    let st = Stepper::new(target, inputs, NewtonConfig { tolerance: 1e-12, ..NewtonConfig::default() }).expect("chart exists");
    let s = State { z: DVector::from_vec(st.chart().z_from(&xe, &internal)), nu: DVector::zeros(target.k()) };
    let (next, report) = st.step(&s, t, dt).map_err(|cause| SimError::StepFailed {
        cause,
        partial: Box::new(Trajectory::new(target.names().to_vec())),
    })?;
    let xn = st.chart().x(next.z.as_slice()).map_err(SimError::Init)?;
    Ok((xn.iter().copied().collect(), report.lambda.iter().copied().collect()))
}

/// Consistent initialization followed by implicit-midpoint steps over the grid.
/// On a failed step the trajectory so far is returned inside the error.
pub fn simulate(sys: &PHSystem, x_guess: &[f64], cfg: &SimConfig) -> Result<Trajectory, SimError> {
    cfg.validate(sys.m_p())?;
    let (ext, x, internal) = resolve(sys, x_guess)?;
    let target = ext.as_ref().unwrap_or(sys);
    let st = Stepper::new(target, cfg.inputs.clone(), cfg.newton).expect("chart exists");
    let z0 = st.consistent_init(&x, &internal)?;
    let k = target.k();
    let grid = cfg.grid();
    let mut traj = Trajectory::new(target.names().to_vec());
    let init_err = SimError::Init;

    let record = |traj: &mut Trajectory, t: f64, z: &DVector<f64>, lam: Vec<f64>, bal: f64, port: f64, diss: f64, sigma: f64| -> Result<(), SimError> {
        traj.times.push(t);
        traj.states.push(st.chart().x(z.as_slice()).map_err(init_err)?.iter().copied().collect());
        traj.multipliers.push(lam);
        traj.energy.push(st.chart().energy(z.as_slice()).map_err(init_err)?);
        traj.constraint_residual.push(st.constraint_residual(z.as_slice()).map_err(init_err)?);
        traj.power_balance_residual.push(bal);
        traj.port_power.push(port);
        traj.dissipation_power.push(diss);
        traj.index_sigma.push(sigma);
        Ok(())
    };

    let (port0, diss0) = st.powers_at(z0.as_slice(), grid[0]).map_err(init_err)?;
    let sigma0 = st.index_sigma_at(z0.as_slice()).map_err(init_err)?;
    record(&mut traj, grid[0], &z0, vec![f64::NAN; k], 0.0, port0, diss0, sigma0)?;

    let mut state = State { z: z0, nu: DVector::zeros(k) };
    let mut energy = traj.energy[0];
    let steps = grid.len() - 1;
    for i in 0..steps {
        let (t, dt) = (grid[i], grid[i + 1] - grid[i]);
        let (next, rep) = match st.step(&state, t, dt) {
            Ok(v) => v,
            Err(cause) => {
                fill_first_multiplier(&mut traj);
                return Err(SimError::StepFailed { cause, partial: Box::new(traj) });
            }
        };
        let e_next = st.chart().energy(next.z.as_slice()).map_err(init_err)?;
        let balance = (e_next - energy) / dt - (rep.port_power + rep.dissipation_power);
        energy = e_next;
        state = next;
        if (i + 1) % cfg.output_every == 0 || i + 1 == steps {
            let lam = rep.lambda.iter().copied().collect();
            record(&mut traj, grid[i + 1], &state.z, lam, balance, rep.port_power, rep.dissipation_power, rep.sigma)?;
        }
    }
    fill_first_multiplier(&mut traj);
    Ok(traj)
}

fn fill_first_multiplier(traj: &mut Trajectory) {
    if traj.len() > 1 {
        traj.multipliers[0] = traj.multipliers[1].clone();
    } else if let Some(first) = traj.multipliers.first_mut() {
        first.iter_mut().for_each(|v| *v = 0.0);
    }
}
