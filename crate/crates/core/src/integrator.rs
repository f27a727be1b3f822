//! Fixed-step RK4 integration of a model under a feedback policy.

use std::f64::consts::PI;

use thiserror::Error;

use crate::dynamics::{self, DynamicsError, Inputs, ModelKind, ModelState, RobotParams, SwingPose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegratorError {
    #[error("numerical blowup at t = {t} s")]
    NumericalBlowup { t: f64 },
    #[error("dynamics failed at t = {t} s: {source}")]
    Dynamics { t: f64, source: DynamicsError },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("rejected input: {0}")]
    RejectedInput(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// One classical RK4 step of `dx/dt = f(x)` with inputs held by the caller.
pub fn rk4_step<F>(mut f: F, state: &ModelState, t: f64, dt: f64) -> Result<ModelState, IntegratorError>
where
    F: FnMut(&ModelState) -> Result<ModelState, DynamicsError>,
{
    let mut eval = |s: &ModelState, at: f64| -> Result<ModelState, IntegratorError> {
        if !s.is_finite() {
            return Err(IntegratorError::NumericalBlowup { t: at });
        }
        let d = f(s).map_err(|source| IntegratorError::Dynamics { t: at, source })?;
        if !d.is_finite() {
            return Err(IntegratorError::NumericalBlowup { t: at });
        }
        Ok(d)
    };
    let half = 0.5 * dt;
    let k1 = eval(state, t)?;
    let k2 = eval(&state.add_scaled(half, &k1), t + half)?;
    let k3 = eval(&state.add_scaled(half, &k2), t + half)?;
    let k4 = eval(&state.add_scaled(dt, &k3), t + dt)?;
    let kind = state.kind();
    let (s, a, b, c, d) = (
        state.components(),
        k1.components(),
        k2.components(),
        k3.components(),
        k4.components(),
    );
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = s[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
    }
    let next = ModelState::from_components(kind, out);
    if !next.is_finite() {
        return Err(IntegratorError::NumericalBlowup { t: t + dt });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    /// m, applied to horizontal COM offsets.
    pub settle_pos_tol: f64,
    /// m/s
    pub settle_vel_tol: f64,
    /// rad, applied to pendulum angles.
    pub settle_angle_tol: f64,
    /// rad/s, applied to pendulum and flywheel rates.
    pub settle_rate_tol: f64,
    /// Time the tolerances must hold before a run counts as settled, s.
    pub settle_dwell: f64,
    pub fall_angle: f64,
    pub fall_offset: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_max: 5.0,
            settle_pos_tol: 1e-3,
            settle_vel_tol: 1e-3,
            settle_angle_tol: 1e-3,
            settle_rate_tol: 1e-3,
            settle_dwell: 0.25,
            fall_angle: PI / 3.0,
            fall_offset: 0.5,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("dt", self.dt),
            ("t_max", self.t_max),
            ("settle_pos_tol", self.settle_pos_tol),
            ("settle_vel_tol", self.settle_vel_tol),
            ("settle_angle_tol", self.settle_angle_tol),
            ("settle_rate_tol", self.settle_rate_tol),
            ("fall_angle", self.fall_angle),
            ("fall_offset", self.fall_offset),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.settle_dwell.is_finite() && self.settle_dwell >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "settle_dwell must be >= 0, got {}",
                self.settle_dwell
            )));
        }
        if self.t_max < self.dt {
            return Err(SimError::InvalidConfig(format!(
                "t_max {} is shorter than dt {}",
                self.t_max, self.dt
            )));
        }
        let ratio = self.t_max / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(SimError::InvalidConfig(format!(
                "t_max / dt = {ratio} is not a whole number of steps"
            )));
        }
        Ok(())
    }
}

/// A feedback law producing the inputs for the next step.
pub trait Policy {
    fn supports(&self, kind: ModelKind) -> bool;
    fn command(&self, state: &ModelState, params: &RobotParams) -> Inputs;
}

/// Open-loop policy holding constant inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantInputs(pub Inputs);

impl Policy for ConstantInputs {
    fn supports(&self, _kind: ModelKind) -> bool {
        true
    }

    fn command(&self, _state: &ModelState, _params: &RobotParams) -> Inputs {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: ModelState,
    pub inputs: Inputs,
    /// Centre of pressure realized by the inputs, m.
    pub p_x: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Settled,
    Fell,
    TimedOut,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Settled => "Settled",
            Termination::Fell => "Fell",
            Termination::TimedOut => "TimedOut",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub trajectory: Trajectory,
    pub termination: Termination,
    /// Start of the dwell window that confirmed settling.
    pub settle_time: Option<f64>,
    pub max_zmp_excursion: f64,
    /// Set when the run was cut short by a non-finite state or a dynamics error.
    pub blowup: Option<String>,
}

/// Centre of pressure implied by the inputs: the commanded ZMP, or for
/// ankle-torque models the CoP that balances `τ_a` under the full body weight.
pub fn realized_cop(kind: ModelKind, inputs: &Inputs, params: &RobotParams) -> f64 {
    if kind.torque_input() {
        -inputs.tau_a / (params.total_mass() * params.gravity)
    } else {
        inputs.p_x
    }
}

/// Lean angle of the body from the vertical through the ankle, rad.
pub fn lean_angle(state: &ModelState, params: &RobotParams) -> f64 {
    match *state {
        ModelState::Elippfm { theta_a, .. } => theta_a,
        ModelState::Ip { x, .. } => (x / params.pendulum_length).clamp(-1.0, 1.0).asin(),
        _ => state.components()[0].atan2(params.com_height),
    }
}

fn is_settled(state: &ModelState, cfg: &SimConfig) -> bool {
    let c = state.components();
    match state.kind() {
        ModelKind::Elippfm => {
            c[0].abs() <= cfg.settle_angle_tol
                && c[1].abs() <= cfg.settle_rate_tol
                && c[3].abs() <= cfg.settle_rate_tol
        }
        ModelKind::Lippfm => {
            c[0].abs() <= cfg.settle_pos_tol
                && c[1].abs() <= cfg.settle_vel_tol
                && c[3].abs() <= cfg.settle_rate_tol
        }
        _ => c[0].abs() <= cfg.settle_pos_tol && c[1].abs() <= cfg.settle_vel_tol,
    }
}

fn has_fallen(state: &ModelState, params: &RobotParams, cfg: &SimConfig) -> bool {
    let (x, _) = state.com(params);
    lean_angle(state, params).abs() > cfg.fall_angle || x.abs() > cfg.fall_offset
}

/// Integrates `initial` under `policy` until it settles, falls or times out.
///
/// The swing-leg models carry their leg in `pose`, fixed to the body.
pub fn simulate(
    initial: &ModelState,
    policy: &dyn Policy,
    params: &RobotParams,
    pose: &SwingPose,
    cfg: &SimConfig,
) -> Result<SimOutcome, SimError> {
    let kind = initial.kind();
    if !initial.is_finite() {
        return Err(SimError::RejectedInput(format!("non-finite initial state {initial:?}")));
    }
    if !policy.supports(kind) {
        return Err(SimError::RejectedInput(format!("policy does not drive {kind} inputs")));
    }
    cfg.validate()?;

    let n_steps = cfg.steps();
    let dwell_steps = (cfg.settle_dwell / cfg.dt).round() as usize;
    let mut samples = Vec::with_capacity(n_steps.min(4096) + 1);
    let mut state = *initial;
    let mut dwell_start: Option<usize> = None;
    let mut max_zmp = 0.0_f64;
    let mut blowup = None;

    let termination = 'run: {
        for k in 0..=n_steps {
            let t = k as f64 * cfg.dt;
            let inputs = policy.command(&state, params);
            let p_x = realized_cop(kind, &inputs, params);
            max_zmp = max_zmp.max(p_x.abs());
            samples.push(Sample { t, state, inputs, p_x });

            if has_fallen(&state, params, cfg) {
                break 'run Termination::Fell;
            }
            if is_settled(&state, cfg) {
                let start = *dwell_start.get_or_insert(k);
                if k - start >= dwell_steps {
                    break 'run Termination::Settled;
                }
            } else {
                dwell_start = None;
            }
            if k == n_steps {
                break 'run Termination::TimedOut;
            }

            let step = rk4_step(
                |s| dynamics::plant_derivative(s, &inputs, params, pose),
                &state,
                t,
                cfg.dt,
            );
            match step {
                Ok(next) => state = next,
                Err(e) => {
                    blowup = Some(e.to_string());
                    break 'run Termination::Fell;
                }
            }
        }
        unreachable!("loop always terminates through a labelled break")
    };

    let settle_time = match termination {
        Termination::Settled => dwell_start.map(|k| k as f64 * cfg.dt),
        _ => None,
    };
    Ok(SimOutcome {
        trajectory: Trajectory { dt: cfg.dt, samples },
        termination,
        settle_time,
        max_zmp_excursion: max_zmp,
        blowup,
    })
}
