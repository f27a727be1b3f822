//! Footstep planning, ZMP reference generation, swing-leg trajectories, the
//! walking state machine, and COM pattern generation.
//!
//! Walking is planned on a uniform time grid. The state machine labels every
//! grid point with its gait phase; the ZMP reference and swing-foot position
//! follow from the phase timer, and the COM trajectory is the solution of a
//! two-point boundary-value problem that makes the model's ZMP track the
//! reference. For the multi-mass model the swing-leg coupling depends on the
//! COM itself (the leg hangs from the hip), so the solve is repeated until the
//! coupling term stops changing.

use thiserror::Error;

use crate::dynamics::{
    compute_zmp, multi_mass_coupling, BodyPoint, DynamicsError, ModelKind, RobotParams, SwingSample,
};

/// Apex height of the swing foot, m.
pub const DEFAULT_APEX_HEIGHT: f64 = 0.04;

/// Relative slack used when comparing accumulated phase timers with phase
/// durations.
const TIMER_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("invalid step parameters: {0}")]
    InvalidStep(String),
    #[error("invalid swing profile: {0}")]
    InvalidProfile(String),
    #[error("rejected input: {0}")]
    RejectedInput(String),
    #[error("swing leg cannot reach the foot at t = {t}: hip-ankle distance {distance} m")]
    Unreachable { t: f64, distance: f64 },
    #[error("COM solver did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

pub type Result<T> = std::result::Result<T, PlanError>;

#[derive(Debug, Clone, PartialEq)]
pub struct StepParams {
    /// Step length `L_sx`, m.
    pub step_length: f64,
    /// Step width `L_sy`, m.
    pub step_width: f64,
    /// Single-support duration `T_ss`, s.
    pub single_support: f64,
    /// Double-support duration `T_ds`, s.
    pub double_support: f64,
    /// Duration of the initial weight shift onto the first support foot, s.
    pub init_duration: f64,
    pub max_step_length: f64,
    pub min_feet_distance: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        Self {
            step_length: 0.1,
            step_width: 0.1,
            single_support: 0.5,
            double_support: 0.2,
            init_duration: 0.2,
            max_step_length: 0.2,
            min_feet_distance: 0.05,
        }
    }
}

impl StepParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("single_support", self.single_support),
            ("double_support", self.double_support),
            ("init_duration", self.init_duration),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlanError::InvalidStep(format!("{name} must be > 0, got {v}")));
            }
        }
        if !self.step_length.is_finite() || self.step_length.abs() > self.max_step_length {
            return Err(PlanError::InvalidStep(format!(
                "step_length {} exceeds max_step_length {}",
                self.step_length, self.max_step_length
            )));
        }
        if !self.step_width.is_finite() || self.step_width < self.min_feet_distance {
            return Err(PlanError::InvalidStep(format!(
                "step_width {} is below min_feet_distance {}",
                self.step_width, self.min_feet_distance
            )));
        }
        Ok(())
    }

    /// Duration of one step, single plus double support.
    pub fn period(&self) -> f64 {
        self.single_support + self.double_support
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Foothold {
    pub x: f64,
    pub y: f64,
    pub side: Side,
}

/// Feet placements of a walk. The robot starts in double support on
/// `initial`; step `k` (0-based) swings one foot onto `steps[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FootholdSequence {
    /// Starting feet: the first support foot (left), then the first swing
    /// foot (right).
    pub initial: [Foothold; 2],
    pub steps: Vec<Foothold>,
}

impl FootholdSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.steps.len() {
            return Err(PlanError::RejectedInput(format!(
                "step index {k} out of range for {} planned steps",
                self.steps.len()
            )));
        }
        Ok(())
    }

    /// Stance foot during step `k`.
    pub fn support(&self, k: usize) -> Result<Foothold> {
        self.check_index(k)?;
        Ok(if k == 0 { self.initial[0] } else { self.steps[k - 1] })
    }

    /// Where the swing foot lifts off during step `k`.
    pub fn swing_from(&self, k: usize) -> Result<Foothold> {
        self.check_index(k)?;
        Ok(match k {
            0 => self.initial[1],
            1 => self.initial[0],
            _ => self.steps[k - 2],
        })
    }

    /// Where the swing foot lands at the end of step `k`.
    pub fn swing_to(&self, k: usize) -> Result<Foothold> {
        self.check_index(k)?;
        Ok(self.steps[k])
    }
}

/// Footholds advancing `L_sx` per step at alternating lateral offsets
/// `∓L_sy/2` around `start`, right foot first.
pub fn plan_footsteps(step: &StepParams, n_steps: usize, start: (f64, f64)) -> Result<FootholdSequence> {
    step.validate()?;
    if n_steps == 0 {
        return Err(PlanError::InvalidStep("n_steps must be >= 1".into()));
    }
    let (x0, y0) = start;
    let half = step.step_width / 2.0;
    let initial = [
        Foothold { x: x0, y: y0 + half, side: Side::Left },
        Foothold { x: x0, y: y0 - half, side: Side::Right },
    ];
    let steps = (1..=n_steps)
        .map(|k| {
            let side = if k % 2 == 1 { Side::Right } else { Side::Left };
            let y = match side {
                Side::Right => y0 - half,
                Side::Left => y0 + half,
            };
            Foothold { x: x0 + k as f64 * step.step_length, y, side }
        })
        .collect();
    Ok(FootholdSequence { initial, steps })
}

/// ZMP reference of step `k` at time `t` since the step began: held on the
/// support foot during single support, then moved linearly onto the landed
/// foot during double support.
pub fn zmp_reference(step: &StepParams, footholds: &FootholdSequence, k: usize, t: f64) -> Result<(f64, f64)> {
    if !(t >= 0.0 && t < step.period()) {
        return Err(PlanError::RejectedInput(format!(
            "t = {t} outside [0, {}) for a step",
            step.period()
        )));
    }
    let f = footholds.support(k)?;
    if t < step.single_support {
        return Ok((f.x, f.y));
    }
    let next = footholds.swing_to(k)?;
    let s = (t - step.single_support) / step.double_support;
    Ok((f.x + (next.x - f.x) * s, f.y + (next.y - f.y) * s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingProfile {
    /// Apex height of the foot above the ground, m.
    pub apex_height: f64,
    /// Swing duration (the single-support time), s.
    pub duration: f64,
}

impl SwingProfile {
    pub fn new(step: &StepParams, apex_height: f64) -> Self {
        Self { apex_height, duration: step.single_support }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(PlanError::InvalidProfile(format!("duration must be > 0, got {}", self.duration)));
        }
        if !(self.apex_height.is_finite() && self.apex_height >= 0.0) {
            return Err(PlanError::InvalidProfile(format!(
                "apex_height must be >= 0, got {}",
                self.apex_height
            )));
        }
        Ok(())
    }
}

/// Position, velocity and acceleration of the swing foot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingKinematics {
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    pub acc: [f64; 3],
}

impl SwingKinematics {
    fn grounded(f: &Foothold) -> Self {
        Self { pos: [f.x, f.y, 0.0], vel: [0.0; 3], acc: [0.0; 3] }
    }

    /// Sagittal view consumed by the swing-leg models.
    pub fn sample(&self) -> SwingSample {
        SwingSample { x_s: self.pos[0], z_s: self.pos[2], x_s_dd: self.acc[0], z_s_dd: self.acc[2] }
    }
}

/// Swing-foot kinematics at `t ∈ [0, T]`: a quintic rest-to-rest blend in the
/// horizontal plane and the quartic bump `16·h·τ²(1−τ)²` in height.
pub fn swing_trajectory(profile: &SwingProfile, from: &Foothold, to: &Foothold, t: f64) -> Result<SwingKinematics> {
    profile.validate()?;
    let big_t = profile.duration;
    if !(t >= 0.0 && t <= big_t) {
        return Err(PlanError::RejectedInput(format!("t = {t} outside [0, {big_t}]")));
    }
    let tau = t / big_t;
    let (t2, t3, t4, t5) = (tau * tau, tau.powi(3), tau.powi(4), tau.powi(5));
    let s = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let ds = (30.0 * t2 - 60.0 * t3 + 30.0 * t4) / big_t;
    let dds = (60.0 * tau - 180.0 * t2 + 120.0 * t3) / (big_t * big_t);
    let h = profile.apex_height;
    let z = 16.0 * h * t2 * (1.0 - tau) * (1.0 - tau);
    let dz = 16.0 * h * (2.0 * tau - 6.0 * t2 + 4.0 * t3) / big_t;
    let ddz = 16.0 * h * (2.0 - 12.0 * tau + 12.0 * t2) / (big_t * big_t);
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    Ok(SwingKinematics {
        pos: [from.x + dx * s, from.y + dy * s, z],
        vel: [dx * ds, dy * ds, dz],
        acc: [dx * dds, dy * dds, ddz],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WalkPhase {
    Idle,
    Initialize,
    SingleSupport,
    DoubleSupport,
}

impl WalkPhase {
    pub fn name(self) -> &'static str {
        match self {
            WalkPhase::Idle => "idle",
            WalkPhase::Initialize => "initialize",
            WalkPhase::SingleSupport => "single_support",
            WalkPhase::DoubleSupport => "double_support",
        }
    }
}

/// Walking state machine value.
///
/// One timer runs through a whole step: single support covers
/// `[0, T_ss)` and double support continues from `T_ss` to `T_ss + T_ds`,
/// where the timer resets and the support foot swaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkState {
    pub phase: WalkPhase,
    pub t: f64,
    pub support: Side,
    /// Index of the current step; counts completed steps while idle.
    pub step: usize,
}

impl Default for WalkState {
    fn default() -> Self {
        Self { phase: WalkPhase::Idle, t: 0.0, support: Side::Left, step: 0 }
    }
}

fn reached(t: f64, limit: f64) -> bool {
    t >= limit - TIMER_EPS * limit.max(1.0)
}

/// Advances the state machine by `dt`. `walk` is the walk command: it starts
/// a walk from idle and, at the end of double support, decides between the
/// next step and stopping.
pub fn advance_state_machine(current: WalkState, dt: f64, step: &StepParams, walk: bool) -> WalkState {
    let t = current.t + dt;
    match current.phase {
        WalkPhase::Idle if walk => WalkState { phase: WalkPhase::Initialize, t: 0.0, ..current },
        WalkPhase::Idle => current,
        WalkPhase::Initialize if reached(t, step.init_duration) => {
            WalkState { phase: WalkPhase::SingleSupport, t: 0.0, support: Side::Left, step: 0 }
        }
        WalkPhase::SingleSupport if reached(t, step.single_support) => {
            WalkState { phase: WalkPhase::DoubleSupport, t, ..current }
        }
        WalkPhase::DoubleSupport if reached(t, step.period()) => {
            let next = current.step + 1;
            if walk {
                WalkState { phase: WalkPhase::SingleSupport, t: 0.0, support: current.support.other(), step: next }
            } else {
                WalkState { phase: WalkPhase::Idle, t: 0.0, support: current.support.other(), step: next }
            }
        }
        _ => WalkState { t, ..current },
    }
}

/// Numerical settings of the COM pattern generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Grid spacing of the boundary-value problem, s.
    pub dt: f64,
    /// Convergence threshold on the change of the coupling term, m/s².
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { dt: 1e-3, tol: 1e-7, max_iter: 50 }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(PlanError::RejectedInput(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.tol > 0.0) {
            return Err(PlanError::RejectedInput(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(PlanError::RejectedInput("max_iter must be >= 1".into()));
        }
        Ok(())
    }

    fn intervals(&self, duration: f64, name: &str) -> Result<usize> {
        let ratio = duration / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(PlanError::InvalidStep(format!(
                "{name} = {duration} is not a whole number of {} s intervals",
                self.dt
            )));
        }
        Ok(ratio.round() as usize)
    }
}

/// How the swing leg enters the COM dynamics while planning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegCoupling {
    /// Single point mass; the leg is ignored.
    None,
    /// Whole leg lumped at the swing foot.
    Lumped,
    /// Thigh, shin and foot as separate masses on a two-link leg hanging
    /// from the hip.
    MultiMass,
}

impl LegCoupling {
    /// Planning model for each balancing model. The flywheel models plan like
    /// the point-mass pendulum; the flywheel is reserved for recovery.
    pub fn for_model(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Tmipm => LegCoupling::Lumped,
            ModelKind::Mmipm => LegCoupling::MultiMass,
            _ => LegCoupling::None,
        }
    }
}

/// Swing-foot path and ZMP reference sampled on the planning grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub dt: f64,
    pub t: Vec<f64>,
    pub states: Vec<WalkState>,
    pub zmp_ref: Vec<(f64, f64)>,
    pub swing: Vec<SwingKinematics>,
    /// Which leg is modelled as the swing leg. It changes at every lift-off
    /// after the first, where the leg masses jump from one foot to the other.
    pub swing_side: Vec<Side>,
}

impl Timeline {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Samples one step (`k`) on its own, from lift-off to the end of double
/// support, both endpoints included.
pub fn step_timeline(
    step: &StepParams,
    footholds: &FootholdSequence,
    k: usize,
    profile: &SwingProfile,
    dt: f64,
) -> Result<Timeline> {
    let settings = SolverSettings { dt, ..Default::default() };
    let n_ss = settings.intervals(step.single_support, "single_support")?;
    let n = n_ss + settings.intervals(step.double_support, "double_support")?;
    let from = footholds.swing_from(k)?;
    let to = footholds.swing_to(k)?;
    let support = footholds.support(k)?;
    let mut tl = Timeline { dt, t: vec![], states: vec![], zmp_ref: vec![], swing: vec![], swing_side: vec![] };
    for j in 0..=n {
        let t = j as f64 * dt;
        let phase = if j < n_ss { WalkPhase::SingleSupport } else { WalkPhase::DoubleSupport };
        let zmp = if j < n { zmp_reference(step, footholds, k, t)? } else { (to.x, to.y) };
        let swing = if j <= n_ss {
            swing_trajectory(profile, &from, &to, (t).min(profile.duration))?
        } else {
            SwingKinematics::grounded(&to)
        };
        tl.t.push(t);
        tl.states.push(WalkState { phase, t, support: support.side, step: k });
        tl.zmp_ref.push(zmp);
        tl.swing.push(swing);
        tl.swing_side.push(to.side);
    }
    Ok(tl)
}

/// Samples a whole walk by running the state machine: idle, the weight shift
/// onto the first support foot (cosine ease), then `footholds.len()` steps,
/// ending idle on the last foothold.
pub fn walk_timeline(
    step: &StepParams,
    footholds: &FootholdSequence,
    profile: &SwingProfile,
    dt: f64,
) -> Result<Timeline> {
    step.validate()?;
    profile.validate()?;
    let settings = SolverSettings { dt, ..Default::default() };
    let n_init = settings.intervals(step.init_duration, "init_duration")?;
    let n_step = settings.intervals(step.single_support, "single_support")?
        + settings.intervals(step.double_support, "double_support")?;
    let n_total = n_init + footholds.len() * n_step;
    let n_steps = footholds.len();
    if n_steps == 0 {
        return Err(PlanError::RejectedInput("a walk needs at least one foothold".into()));
    }
    let [first, other] = footholds.initial;
    let mid = ((first.x + other.x) / 2.0, (first.y + other.y) / 2.0);

    let mut tl = Timeline { dt, t: vec![], states: vec![], zmp_ref: vec![], swing: vec![], swing_side: vec![] };
    // The walk command is issued at the first tick; the sample at t = 0
    // already shows the machine in its initialize phase.
    let mut state = advance_state_machine(WalkState::default(), dt, step, n_steps > 0);
    for j in 0..=n_total {
        let (zmp, swing, side) = match state.phase {
            WalkPhase::Idle => {
                let last = footholds.steps[n_steps - 1];
                ((last.x, last.y), SwingKinematics::grounded(&last), last.side)
            }
            WalkPhase::Initialize => {
                let s = 0.5 * (1.0 - (std::f64::consts::PI * state.t / step.init_duration).cos());
                let p = (mid.0 + (first.x - mid.0) * s, mid.1 + (first.y - mid.1) * s);
                (p, SwingKinematics::grounded(&other), other.side)
            }
            WalkPhase::SingleSupport => {
                let k = state.step;
                let t = state.t.min(profile.duration);
                let to = footholds.swing_to(k)?;
                let sw = swing_trajectory(profile, &footholds.swing_from(k)?, &to, t)?;
                (zmp_reference(step, footholds, k, state.t)?, sw, to.side)
            }
            WalkPhase::DoubleSupport => {
                let k = state.step;
                let t = state.t.min(step.period() * (1.0 - f64::EPSILON));
                let to = footholds.swing_to(k)?;
                (zmp_reference(step, footholds, k, t)?, SwingKinematics::grounded(&to), to.side)
            }
        };
        tl.t.push(j as f64 * dt);
        tl.states.push(state);
        tl.zmp_ref.push(zmp);
        tl.swing.push(swing);
        tl.swing_side.push(side);
        let walk = match state.phase {
            WalkPhase::DoubleSupport => state.step + 1 < n_steps,
            _ => true,
        };
        state = advance_state_machine(state, dt, step, walk && state.step < n_steps);
    }
    Ok(tl)
}

/// Positions `(x, z)` of the thigh COM, shin COM and foot of a two-link leg
/// from `hip` to `ankle`, knee bent forward.
pub fn leg_points(hip: (f64, f64), ankle: (f64, f64), params: &RobotParams) -> Option<[(f64, f64); 3]> {
    let (l1, l2) = (params.thigh_length, params.shin_length);
    let (dx, dz) = (ankle.0 - hip.0, ankle.1 - hip.1);
    let d = dx.hypot(dz);
    if d > l1 + l2 || d < (l1 - l2).abs() || d == 0.0 {
        return None;
    }
    let cos_a = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).clamp(-1.0, 1.0);
    let dir = dz.atan2(dx) + cos_a.acos();
    let knee = (hip.0 + l1 * dir.cos(), hip.1 + l1 * dir.sin());
    Some([
        ((hip.0 + knee.0) / 2.0, (hip.1 + knee.1) / 2.0),
        ((knee.0 + ankle.0) / 2.0, (knee.1 + ankle.1) / 2.0),
        ankle,
    ])
}

/// Solution of the COM boundary-value problem on a timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ComPlan {
    pub x: Vec<f64>,
    pub x_dot: Vec<f64>,
    pub x_ddot: Vec<f64>,
    /// Swing-leg coupling term the returned trajectory was solved with.
    pub coupling: Vec<f64>,
    /// Swing masses as they move along the returned trajectory.
    pub legs: Vec<Vec<BodyPoint>>,
    pub iterations: usize,
    /// `‖f⁽ᵏ⁺¹⁾ − f⁽ᵏ⁾‖∞` after each iteration.
    pub residuals: Vec<f64>,
}

impl ComPlan {
    pub fn residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Solves `ẍ = ω²(x − p) + f` with `x(0) = p(0)` and `x(T) = p(T)` with
/// Numerov's fourth-order compact scheme (tridiagonal, Thomas algorithm).
pub fn solve_bvp(p: &[f64], f: &[f64], omega: f64, dt: f64) -> Vec<f64> {
    let n = p.len();
    assert_eq!(n, f.len());
    let mut x = p.to_vec();
    if n < 3 {
        return x;
    }
    let w2 = omega * omega;
    // x'' = w2·x + g with g = f − w2·p; Numerov couples neighbours through
    // (x[j-1] − 2x[j] + x[j+1])/h² = (y[j-1] + 10y[j] + y[j+1])/12, y = x''.
    let g: Vec<f64> = f.iter().zip(p).map(|(f, p)| f - w2 * p).collect();
    let off = 1.0 / (dt * dt) - w2 / 12.0;
    let diag = -2.0 / (dt * dt) - 10.0 * w2 / 12.0;
    let m = n - 2;
    let mut c_prime = vec![0.0; m];
    let mut d_prime = vec![0.0; m];
    for i in 0..m {
        let j = i + 1;
        let mut rhs = (g[j - 1] + 10.0 * g[j] + g[j + 1]) / 12.0;
        if i == 0 {
            rhs -= off * x[0];
        }
        if i == m - 1 {
            rhs -= off * x[n - 1];
        }
        let (denom, prev_d) = if i == 0 {
            (diag, 0.0)
        } else {
            (diag - off * c_prime[i - 1], off * d_prime[i - 1])
        };
        c_prime[i] = off / denom;
        d_prime[i] = (rhs - prev_d) / denom;
    }
    x[m] = d_prime[m - 1];
    for i in (0..m - 1).rev() {
        x[i + 1] = d_prime[i] - c_prime[i] * x[i + 2];
    }
    x
}

/// First derivative on a uniform grid, second order everywhere.
fn derivative(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    if n < 3 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|j| {
            if j == 0 {
                (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt)
            } else if j == n - 1 {
                (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dt)
            } else {
                (v[j + 1] - v[j - 1]) / (2.0 * dt)
            }
        })
        .collect()
}

/// Second derivative on a uniform grid, second order everywhere.
fn second_derivative(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    if n < 4 {
        return vec![0.0; n];
    }
    let h2 = dt * dt;
    (0..n)
        .map(|j| {
            if j == 0 {
                (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
            } else if j == n - 1 {
                (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2
            } else {
                (v[j + 1] - 2.0 * v[j] + v[j - 1]) / h2
            }
        })
        .collect()
}

/// Second derivative taken separately on each run of equal `side`, so the
/// swing-leg hand-over does not show up as an impulse.
fn piecewise_second_derivative(v: &[f64], side: &[Side], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut start = 0;
    while start < v.len() {
        let end = (start..v.len()).find(|&j| side[j] != side[start]).unwrap_or(v.len());
        out.extend(second_derivative(&v[start..end], dt));
        start = end;
    }
    out
}

/// Whole swing leg as one mass at the swing foot.
fn lumped_legs(tl: &Timeline, params: &RobotParams) -> Vec<Vec<BodyPoint>> {
    tl.swing
        .iter()
        .map(|s| {
            vec![BodyPoint { m: params.swing_mass(), x: s.pos[0], z: s.pos[2], x_dd: s.acc[0], z_dd: s.acc[2] }]
        })
        .collect()
}

/// Thigh, shin and foot of a leg hanging from a hip that moves with the COM.
fn multi_mass_legs(tl: &Timeline, x: &[f64], params: &RobotParams) -> Result<Vec<Vec<BodyPoint>>> {
    let masses = [params.thigh_mass, params.shin_mass, params.foot_mass];
    let mut px: [Vec<f64>; 3] = Default::default();
    let mut pz: [Vec<f64>; 3] = Default::default();
    for (j, s) in tl.swing.iter().enumerate() {
        let hip = (x[j], params.com_height);
        let ankle = (s.pos[0], s.pos[2]);
        let pts = leg_points(hip, ankle, params).ok_or(PlanError::Unreachable {
            t: tl.t[j],
            distance: (ankle.0 - hip.0).hypot(ankle.1 - hip.1),
        })?;
        for (i, (a, b)) in pts.iter().enumerate() {
            px[i].push(*a);
            pz[i].push(*b);
        }
    }
    let ax: Vec<Vec<f64>> = px.iter().map(|v| piecewise_second_derivative(v, &tl.swing_side, tl.dt)).collect();
    let az: Vec<Vec<f64>> = pz.iter().map(|v| piecewise_second_derivative(v, &tl.swing_side, tl.dt)).collect();
    Ok((0..tl.len())
        .map(|j| {
            (0..3)
                .map(|i| {
                    // The foot follows its analytic profile exactly.
                    let (x_dd, z_dd) = if i == 2 {
                        (tl.swing[j].acc[0], tl.swing[j].acc[2])
                    } else {
                        (ax[i][j], az[i][j])
                    };
                    BodyPoint { m: masses[i], x: px[i][j], z: pz[i][j], x_dd, z_dd }
                })
                .collect()
        })
        .collect())
}

fn coupling_of(legs: &[Vec<BodyPoint>], p: &[f64], params: &RobotParams) -> Vec<f64> {
    legs.iter().zip(p).map(|(b, &p)| multi_mass_coupling(b, p, params)).collect()
}

/// COM trajectory whose ZMP, under the chosen leg model, tracks the timeline's
/// sagittal ZMP reference.
///
/// Iteration 0 lumps the leg at the swing foot, which does not depend on the
/// COM. With [`LegCoupling::MultiMass`] every further iteration rebuilds the
/// per-part leg kinematics along the latest COM trajectory and re-solves,
/// until the coupling term changes by less than `settings.tol`.
pub fn solve_com(
    tl: &Timeline,
    coupling: LegCoupling,
    params: &RobotParams,
    settings: &SolverSettings,
) -> Result<ComPlan> {
    settings.validate()?;
    params.validate()?;
    let p: Vec<f64> = tl.zmp_ref.iter().map(|z| z.0).collect();
    let omega = params.omega();
    let finish = |x: Vec<f64>, f: Vec<f64>, legs: Vec<Vec<BodyPoint>>, iterations, residuals| {
        let x_dot = derivative(&x, tl.dt);
        // Differentiated from the path itself, so the realized ZMP is an
        // independent check of the solve rather than the equation restated.
        let x_ddot = second_derivative(&x, tl.dt);
        ComPlan { x, x_dot, x_ddot, coupling: f, legs, iterations, residuals }
    };

    let (legs, mut f) = match coupling {
        LegCoupling::None => (vec![vec![]; tl.len()], vec![0.0; tl.len()]),
        LegCoupling::Lumped | LegCoupling::MultiMass => {
            let legs = lumped_legs(tl, params);
            let f = coupling_of(&legs, &p, params);
            (legs, f)
        }
    };
    if coupling != LegCoupling::MultiMass {
        let x = solve_bvp(&p, &f, omega, tl.dt);
        return Ok(finish(x, f, legs, 1, vec![0.0]));
    }

    let mut residuals = Vec::new();
    for it in 1..=settings.max_iter {
        let x = solve_bvp(&p, &f, omega, tl.dt);
        let next_legs = multi_mass_legs(tl, &x, params)?;
        let next_f = coupling_of(&next_legs, &p, params);
        let r = next_f.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        residuals.push(r);
        if r < settings.tol {
            // Report the legs along the returned trajectory.
            return Ok(finish(x, f, next_legs, it, residuals));
        }
        f = next_f;
    }
    Err(PlanError::NonConvergence { iterations: settings.max_iter, residual: *residuals.last().unwrap() })
}

/// COM trajectory of the multi-mass model over step `k` alone, from lift-off
/// at `p(0)` to the end of double support at `p(T)`.
pub fn mmipm_solve_com(
    step: &StepParams,
    footholds: &FootholdSequence,
    k: usize,
    profile: &SwingProfile,
    params: &RobotParams,
    settings: &SolverSettings,
) -> Result<(Timeline, ComPlan)> {
    step.validate()?;
    settings.validate()?;
    let tl = step_timeline(step, footholds, k, profile, settings.dt)?;
    let plan = solve_com(&tl, LegCoupling::MultiMass, params, settings)?;
    Ok((tl, plan))
}

/// One row of a planned walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkSample {
    pub t: f64,
    pub state: WalkState,
    pub com_x: f64,
    pub com_x_dot: f64,
    pub com_y: f64,
    pub zmp_ref_x: f64,
    pub zmp_ref_y: f64,
    /// ZMP of the planned motion of all modelled masses.
    pub zmp_x: f64,
    pub swing: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkPlan {
    pub model: ModelKind,
    pub coupling: LegCoupling,
    pub samples: Vec<WalkSample>,
    pub iterations: usize,
    pub residual: f64,
}

/// Plans an `n_steps` walk from the origin for `model`.
pub fn plan_walk(
    model: ModelKind,
    step: &StepParams,
    n_steps: usize,
    apex_height: f64,
    params: &RobotParams,
    settings: &SolverSettings,
) -> Result<WalkPlan> {
    let footholds = plan_footsteps(step, n_steps, (0.0, 0.0))?;
    let profile = SwingProfile::new(step, apex_height);
    let tl = walk_timeline(step, &footholds, &profile, settings.dt)?;
    let coupling = LegCoupling::for_model(model);
    let plan = solve_com(&tl, coupling, params, settings)?;
    let p_y: Vec<f64> = tl.zmp_ref.iter().map(|z| z.1).collect();
    let com_y = solve_bvp(&p_y, &vec![0.0; p_y.len()], params.omega(), settings.dt);

    let body_mass = match coupling {
        LegCoupling::None => params.total_mass(),
        _ => params.body_mass,
    };
    let mut samples = Vec::with_capacity(tl.len());
    for j in 0..tl.len() {
        let mut bodies = vec![BodyPoint {
            m: body_mass,
            x: plan.x[j],
            z: params.com_height,
            x_dd: plan.x_ddot[j],
            z_dd: 0.0,
        }];
        bodies.extend_from_slice(&plan.legs[j]);
        samples.push(WalkSample {
            t: tl.t[j],
            state: tl.states[j],
            com_x: plan.x[j],
            com_x_dot: plan.x_dot[j],
            com_y: com_y[j],
            zmp_ref_x: tl.zmp_ref[j].0,
            zmp_ref_y: tl.zmp_ref[j].1,
            zmp_x: compute_zmp(&bodies, params)?,
            swing: tl.swing[j].pos,
        });
    }
    Ok(WalkPlan { model, coupling, samples, iterations: plan.iterations, residual: plan.residual() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn footsteps_alternate_and_advance() {
        let s = StepParams::default();
        let f = plan_footsteps(&s, 1, (0.0, 0.0)).unwrap();
        assert_eq!((f.steps[0].x, f.steps[0].y, f.steps[0].side), (0.1, -0.05, Side::Right));
        let f = plan_footsteps(&s, 4, (0.0, 0.0)).unwrap();
        let xs: Vec<f64> = f.steps.iter().map(|h| h.x).collect();
        let ys: Vec<f64> = f.steps.iter().map(|h| h.y).collect();
        for (a, b) in xs.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(ys, vec![-0.05, 0.05, -0.05, 0.05]);
        let inplace = StepParams { step_length: 0.0, ..s.clone() };
        let f = plan_footsteps(&inplace, 3, (0.0, 0.0)).unwrap();
        assert!(f.steps.iter().all(|h| h.x == 0.0));
    }

    #[test]
    fn footstep_constraints_are_named() {
        let s = StepParams { step_length: 0.3, ..Default::default() };
        let e = plan_footsteps(&s, 2, (0.0, 0.0)).unwrap_err().to_string();
        assert!(e.contains("max_step_length"), "{e}");
        let s = StepParams { step_width: 0.02, ..Default::default() };
        let e = plan_footsteps(&s, 2, (0.0, 0.0)).unwrap_err().to_string();
        assert!(e.contains("min_feet_distance"), "{e}");
        assert!(plan_footsteps(&StepParams::default(), 0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn zmp_reference_branches() {
        let s = StepParams::default();
        let f = plan_footsteps(&s, 3, (0.0, 0.0)).unwrap();
        let sup = f.support(1).unwrap();
        assert_eq!(zmp_reference(&s, &f, 1, 0.0).unwrap(), (sup.x, sup.y));
        assert_eq!(zmp_reference(&s, &f, 1, 0.5).unwrap(), (sup.x, sup.y));
        let (px, py) = zmp_reference(&s, &f, 1, 0.6).unwrap();
        assert_abs_diff_eq!(px, sup.x + 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(py, sup.y + 0.05, epsilon = 1e-12);
        assert!(zmp_reference(&s, &f, 1, 0.7).is_err());
        assert!(zmp_reference(&s, &f, 1, -1e-9).is_err());
        assert!(zmp_reference(&s, &f, 3, 0.1).is_err());
    }

    #[test]
    fn swing_boundary_and_midpoint() {
        let s = StepParams::default();
        let prof = SwingProfile::new(&s, DEFAULT_APEX_HEIGHT);
        let from = Foothold { x: 0.0, y: -0.05, side: Side::Right };
        let to = Foothold { x: 0.1, y: -0.05, side: Side::Right };
        let a = swing_trajectory(&prof, &from, &to, 0.0).unwrap();
        assert_eq!(a.pos, [0.0, -0.05, 0.0]);
        assert_eq!(a.vel, [0.0; 3]);
        let b = swing_trajectory(&prof, &from, &to, 0.5).unwrap();
        assert_abs_diff_eq!(b.pos[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(b.pos[2], 0.0, epsilon = 1e-12);
        assert!(b.vel.iter().all(|v| v.abs() < 1e-12));
        let m = swing_trajectory(&prof, &from, &to, 0.25).unwrap();
        assert_abs_diff_eq!(m.pos[0], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(m.pos[2], 0.04, epsilon = 1e-15);
        let bad = SwingProfile { duration: 0.0, ..prof };
        assert!(matches!(swing_trajectory(&bad, &from, &to, 0.0), Err(PlanError::InvalidProfile(_))));
    }

    #[test]
    fn swing_accelerations_match_differences() {
        let prof = SwingProfile { apex_height: 0.04, duration: 0.5 };
        let from = Foothold { x: -0.1, y: 0.0, side: Side::Left };
        let to = Foothold { x: 0.1, y: 0.0, side: Side::Left };
        let h = 1e-5;
        for &t in &[0.1, 0.2, 0.3, 0.4] {
            let [a, b, c] = [t - h, t, t + h].map(|t| swing_trajectory(&prof, &from, &to, t).unwrap());
            for i in [0, 2] {
                let fd = (a.pos[i] - 2.0 * b.pos[i] + c.pos[i]) / (h * h);
                assert_abs_diff_eq!(fd, b.acc[i], epsilon = 1e-4);
                let fv = (c.pos[i] - a.pos[i]) / (2.0 * h);
                assert_abs_diff_eq!(fv, b.vel[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn state_machine_transitions() {
        let s = StepParams::default();
        let dt = 1e-3;
        let idle = WalkState::default();
        assert_eq!(advance_state_machine(idle, dt, &s, false), idle);
        assert_eq!(advance_state_machine(idle, dt, &s, true).phase, WalkPhase::Initialize);

        let ss = WalkState { phase: WalkPhase::SingleSupport, t: 0.5 - dt, support: Side::Left, step: 0 };
        let ds = advance_state_machine(ss, dt, &s, true);
        assert_eq!(ds.phase, WalkPhase::DoubleSupport);
        assert_abs_diff_eq!(ds.t, 0.5, epsilon = 1e-12);

        let ds = WalkState { phase: WalkPhase::DoubleSupport, t: 0.7 - dt, support: Side::Left, step: 0 };
        let next = advance_state_machine(ds, dt, &s, true);
        assert_eq!(next, WalkState { phase: WalkPhase::SingleSupport, t: 0.0, support: Side::Right, step: 1 });
        assert_eq!(advance_state_machine(ds, dt, &s, false).phase, WalkPhase::Idle);
    }

    #[test]
    fn step_cycle_takes_one_period() {
        let s = StepParams::default();
        let dt = 1e-3;
        let mut st = WalkState { phase: WalkPhase::SingleSupport, t: 0.0, support: Side::Left, step: 0 };
        let mut ticks = 0;
        loop {
            st = advance_state_machine(st, dt, &s, true);
            ticks += 1;
            if st.phase == WalkPhase::SingleSupport && st.step == 1 {
                break;
            }
        }
        assert_eq!(ticks, 700);
    }

    #[test]
    fn leg_points_respect_link_lengths() {
        let p = RobotParams::default();
        let hip = (0.02, 0.45);
        let ankle = (0.1, 0.03);
        let [thigh, shin, foot] = leg_points(hip, ankle, &p).unwrap();
        let knee = (2.0 * thigh.0 - hip.0, 2.0 * thigh.1 - hip.1);
        assert_abs_diff_eq!((knee.0 - hip.0).hypot(knee.1 - hip.1), 0.28, epsilon = 1e-12);
        assert_abs_diff_eq!((knee.0 - ankle.0).hypot(knee.1 - ankle.1), 0.28, epsilon = 1e-12);
        assert_eq!(foot, ankle);
        assert_abs_diff_eq!(shin.0, (knee.0 + ankle.0) / 2.0, epsilon = 1e-15);
        assert!(knee.0 > hip.0.min(ankle.0));
        assert!(leg_points(hip, (0.6, 0.0), &p).is_none());
    }

    #[test]
    fn bvp_matches_closed_form() {
        // Constant reference: x = p + A·cosh(ω(t − T/2)) with x(0) = x(T) = p + c.
        let (w, big_t, dt) = (4.0, 0.5, 1e-3);
        let n = (big_t / dt) as usize + 1;
        let mut p = vec![0.1; n];
        p[0] = 0.12;
        p[n - 1] = 0.12;
        let x = solve_bvp(&p, &vec![0.0; n], w, dt);
        let a = 0.02 / (w * big_t / 2.0).cosh();
        for (j, xj) in x.iter().enumerate().step_by(50) {
            let t = j as f64 * dt;
            assert_abs_diff_eq!(*xj, 0.1 + a * (w * (t - big_t / 2.0)).cosh(), epsilon = 1e-7);
        }
    }

    #[test]
    fn zero_leg_masses_converge_at_once() {
        let p = RobotParams { thigh_mass: 0.0, shin_mass: 0.0, foot_mass: 0.0, ..Default::default() };
        let s = StepParams::default();
        let f = plan_footsteps(&s, 2, (0.0, 0.0)).unwrap();
        let prof = SwingProfile::new(&s, DEFAULT_APEX_HEIGHT);
        let (tl, plan) = mmipm_solve_com(&s, &f, 1, &prof, &p, &SolverSettings::default()).unwrap();
        assert_eq!(plan.iterations, 1);
        let lipm = solve_com(&tl, LegCoupling::None, &p, &SolverSettings::default()).unwrap();
        assert_eq!(plan.x, lipm.x);
    }

    #[test]
    fn infinite_tolerance_returns_lumped_solution() {
        let p = RobotParams::default();
        let s = StepParams::default();
        let f = plan_footsteps(&s, 2, (0.0, 0.0)).unwrap();
        let prof = SwingProfile::new(&s, DEFAULT_APEX_HEIGHT);
        let settings = SolverSettings { tol: f64::INFINITY, ..Default::default() };
        let (tl, plan) = mmipm_solve_com(&s, &f, 1, &prof, &p, &settings).unwrap();
        let lumped = solve_com(&tl, LegCoupling::Lumped, &p, &settings).unwrap();
        assert_eq!(plan.iterations, 1);
        assert_eq!(plan.x, lumped.x);
    }

    #[test]
    fn multi_mass_residuals_shrink() {
        let p = RobotParams::default();
        let s = StepParams::default();
        let f = plan_footsteps(&s, 2, (0.0, 0.0)).unwrap();
        let prof = SwingProfile::new(&s, DEFAULT_APEX_HEIGHT);
        let settings = SolverSettings { tol: 1e-10, ..Default::default() };
        let (_, plan) = mmipm_solve_com(&s, &f, 1, &prof, &p, &settings).unwrap();
        assert!(plan.iterations <= 50);
        for w in plan.residuals.windows(2) {
            assert!(w[1] < w[0], "{:?}", plan.residuals);
        }
        let tight = SolverSettings { max_iter: 1, tol: 1e-12, ..Default::default() };
        assert!(matches!(
            mmipm_solve_com(&s, &f, 1, &prof, &p, &tight),
            Err(PlanError::NonConvergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn walk_tracks_reference() {
        let p = RobotParams::default();
        let s = StepParams::default();
        for model in [ModelKind::Lipm, ModelKind::Tmipm, ModelKind::Mmipm] {
            let w = plan_walk(model, &s, 2, DEFAULT_APEX_HEIGHT, &p, &SolverSettings::default()).unwrap();
            assert_eq!(w.samples.len(), 1 + 200 + 2 * 700);
            let worst = w.samples.iter().map(|r| (r.zmp_x - r.zmp_ref_x).abs()).fold(0.0, f64::max);
            assert!(worst < 5e-3, "{model}: {worst}");
            let last = w.samples.last().unwrap();
            assert_eq!(last.state.phase, WalkPhase::Idle);
            assert_abs_diff_eq!(last.com_x, 0.2, epsilon = 1e-12);
        }
    }
}
