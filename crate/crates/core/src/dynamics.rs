//! Point-mass balance models and the zero-moment-point relations they share.
//!
//! Six abstractions are covered, from the nonlinear inverted pendulum up to the
//! flywheel pendulum with a free COM height. Every derivative function is a pure
//! function of `(state, inputs, params)`; the returned [`ModelState`] carries the
//! same variant as the input and holds the time derivative of each component.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("rejected input: {0}")]
    RejectedInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bound violation: {name} = {value} exceeds limit {limit}")]
    BoundViolation {
        name: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("degenerate load: total vertical force is zero, no ZMP exists")]
    DegenerateLoad,
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Physical constants of the simulated robot.
///
/// Defaults are the small-humanoid values used throughout the crate; the
/// flywheel/pendulum split, inertias and ankle torque limit are stand-ins for
/// quantities a lumped model does not pin down.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotParams {
    /// Body (torso) mass `m_c`, kg.
    pub body_mass: f64,
    pub thigh_mass: f64,
    pub shin_mass: f64,
    pub foot_mass: f64,
    /// Nominal COM height `Z_c`, m.
    pub com_height: f64,
    pub com_height_min: f64,
    pub com_height_max: f64,
    /// Pendulum length `L_0`, m.
    pub pendulum_length: f64,
    pub thigh_length: f64,
    pub shin_length: f64,
    /// Foot length `δ`, m. The ankle sits at the foot centre.
    pub foot_length: f64,
    pub flywheel_torque_max: f64,
    /// Bound on the vertical COM acceleration, m/s².
    pub com_vertical_accel_max: f64,
    pub gravity: f64,
    /// Flywheel rotational inertia `I_w`, kg·m².
    pub flywheel_inertia: f64,
    /// Pendulum rotational inertia about its base `I_p`, kg·m².
    pub pendulum_inertia: f64,
    /// Flywheel mass `M` of the enhanced flywheel model, kg.
    pub flywheel_mass: f64,
    /// Pendulum mass `m` of the enhanced flywheel model, kg.
    pub pendulum_mass: f64,
    /// Distance from the pendulum base to the pendulum COM `l`, m.
    pub pendulum_com_distance: f64,
    pub flywheel_angle_max: f64,
    pub ankle_torque_max: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        let body_mass = 7.0;
        let (thigh_mass, shin_mass, foot_mass) = (1.5, 1.5, 0.5);
        let leg_mass = thigh_mass + shin_mass + foot_mass;
        let pendulum_length = 0.5;
        let foot_length = 0.10;
        let gravity = 9.81;
        Self {
            body_mass,
            thigh_mass,
            shin_mass,
            foot_mass,
            com_height: 0.45,
            com_height_min: 0.40,
            com_height_max: 0.50,
            pendulum_length,
            thigh_length: 0.28,
            shin_length: 0.28,
            foot_length,
            flywheel_torque_max: 5.0,
            com_vertical_accel_max: 0.07,
            gravity,
            flywheel_inertia: 0.1,
            pendulum_inertia: leg_mass * pendulum_length * pendulum_length / 3.0,
            flywheel_mass: body_mass,
            pendulum_mass: leg_mass,
            pendulum_com_distance: pendulum_length / 2.0,
            flywheel_angle_max: PI / 6.0,
            ankle_torque_max: (body_mass + leg_mass) * gravity * foot_length / 2.0,
        }
    }
}

impl RobotParams {
    pub fn swing_mass(&self) -> f64 {
        self.thigh_mass + self.shin_mass + self.foot_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.body_mass + self.swing_mass()
    }

    /// Natural frequency `ω = sqrt(g / Z_c)` at the nominal COM height.
    pub fn omega(&self) -> f64 {
        (self.gravity / self.com_height).sqrt()
    }

    /// `γ = M·L² + I_p`
    pub fn gamma(&self) -> f64 {
        self.flywheel_mass * self.pendulum_length * self.pendulum_length + self.pendulum_inertia
    }

    /// `μ = m·l + M·L`
    pub fn mu(&self) -> f64 {
        self.pendulum_mass * self.pendulum_com_distance + self.flywheel_mass * self.pendulum_length
    }

    /// Half the foot length: the admissible CoP range is `[-half, +half]`.
    pub fn foot_half_length(&self) -> f64 {
        self.foot_length / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("body_mass", self.body_mass),
            ("com_height", self.com_height),
            ("com_height_min", self.com_height_min),
            ("com_height_max", self.com_height_max),
            ("pendulum_length", self.pendulum_length),
            ("thigh_length", self.thigh_length),
            ("shin_length", self.shin_length),
            ("foot_length", self.foot_length),
            ("gravity", self.gravity),
            ("flywheel_inertia", self.flywheel_inertia),
            ("flywheel_mass", self.flywheel_mass),
            ("pendulum_com_distance", self.pendulum_com_distance),
            ("flywheel_angle_max", self.flywheel_angle_max),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(DynamicsError::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        let non_negative = [
            ("thigh_mass", self.thigh_mass),
            ("shin_mass", self.shin_mass),
            ("foot_mass", self.foot_mass),
            ("pendulum_inertia", self.pendulum_inertia),
            ("pendulum_mass", self.pendulum_mass),
            ("flywheel_torque_max", self.flywheel_torque_max),
            ("com_vertical_accel_max", self.com_vertical_accel_max),
            ("ankle_torque_max", self.ankle_torque_max),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(DynamicsError::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        if self.com_height_min > self.com_height_max {
            return Err(DynamicsError::InvalidParameter(format!(
                "com_height_min {} exceeds com_height_max {}",
                self.com_height_min, self.com_height_max
            )));
        }
        if self.com_height < self.com_height_min || self.com_height > self.com_height_max {
            return Err(DynamicsError::InvalidParameter(format!(
                "com_height {} outside [{}, {}]",
                self.com_height, self.com_height_min, self.com_height_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Ip,
    Lipm,
    Tmipm,
    Mmipm,
    Lippfm,
    Elippfm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Ip,
        ModelKind::Lipm,
        ModelKind::Tmipm,
        ModelKind::Mmipm,
        ModelKind::Lippfm,
        ModelKind::Elippfm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ip => "IP",
            ModelKind::Lipm => "LIPM",
            ModelKind::Tmipm => "TMIPM",
            ModelKind::Mmipm => "MMIPM",
            ModelKind::Lippfm => "LIPPFM",
            ModelKind::Elippfm => "ELIPPFM",
        }
    }

    pub fn has_flywheel(self) -> bool {
        matches!(self, ModelKind::Lippfm | ModelKind::Elippfm)
    }

    /// Models driven by an ankle torque rather than a commanded ZMP.
    pub fn torque_input(self) -> bool {
        matches!(self, ModelKind::Ip | ModelKind::Elippfm)
    }

    pub fn state_dim(self) -> usize {
        if self.has_flywheel() {
            4
        } else {
            2
        }
    }

    /// Column names of the state components, in storage order.
    pub fn component_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Lippfm => &["x", "x_dot", "theta", "theta_dot"],
            ModelKind::Elippfm => &["theta_a", "theta_a_dot", "theta_w", "theta_w_dot"],
            _ => &["x", "x_dot"],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DynamicsError::RejectedInput(format!("unknown model '{s}'")))
    }
}

/// Model state, tagged by the model it belongs to.
///
/// The same type is used for state derivatives: each field then holds the
/// time derivative of the corresponding component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelState {
    Ip { x: f64, x_dot: f64 },
    Lipm { x: f64, x_dot: f64 },
    Tmipm { x: f64, x_dot: f64 },
    Mmipm { x: f64, x_dot: f64 },
    Lippfm { x: f64, x_dot: f64, theta: f64, theta_dot: f64 },
    Elippfm { theta_a: f64, theta_a_dot: f64, theta_w: f64, theta_w_dot: f64 },
}

impl ModelState {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelState::Ip { .. } => ModelKind::Ip,
            ModelState::Lipm { .. } => ModelKind::Lipm,
            ModelState::Tmipm { .. } => ModelKind::Tmipm,
            ModelState::Mmipm { .. } => ModelKind::Mmipm,
            ModelState::Lippfm { .. } => ModelKind::Lippfm,
            ModelState::Elippfm { .. } => ModelKind::Elippfm,
        }
    }

    /// Components in storage order; unused trailing slots are zero.
    pub fn components(&self) -> [f64; 4] {
        match *self {
            ModelState::Ip { x, x_dot }
            | ModelState::Lipm { x, x_dot }
            | ModelState::Tmipm { x, x_dot }
            | ModelState::Mmipm { x, x_dot } => [x, x_dot, 0.0, 0.0],
            ModelState::Lippfm { x, x_dot, theta, theta_dot } => [x, x_dot, theta, theta_dot],
            ModelState::Elippfm { theta_a, theta_a_dot, theta_w, theta_w_dot } => {
                [theta_a, theta_a_dot, theta_w, theta_w_dot]
            }
        }
    }

    pub fn from_components(kind: ModelKind, c: [f64; 4]) -> Self {
        match kind {
            ModelKind::Ip => ModelState::Ip { x: c[0], x_dot: c[1] },
            ModelKind::Lipm => ModelState::Lipm { x: c[0], x_dot: c[1] },
            ModelKind::Tmipm => ModelState::Tmipm { x: c[0], x_dot: c[1] },
            ModelKind::Mmipm => ModelState::Mmipm { x: c[0], x_dot: c[1] },
            ModelKind::Lippfm => ModelState::Lippfm {
                x: c[0],
                x_dot: c[1],
                theta: c[2],
                theta_dot: c[3],
            },
            ModelKind::Elippfm => ModelState::Elippfm {
                theta_a: c[0],
                theta_a_dot: c[1],
                theta_w: c[2],
                theta_w_dot: c[3],
            },
        }
    }

    pub fn zero(kind: ModelKind) -> Self {
        Self::from_components(kind, [0.0; 4])
    }

    /// Builds a state from a horizontal COM offset and velocity, all other
    /// components zero. The enhanced flywheel model maps `x0` onto the
    /// pendulum angle through `x = L_0·sin θ_a`.
    pub fn from_com(kind: ModelKind, x0: f64, v0: f64, params: &RobotParams) -> Result<Self> {
        if !(x0.is_finite() && v0.is_finite()) {
            return Err(DynamicsError::RejectedInput(format!(
                "initial condition ({x0}, {v0}) is not finite"
            )));
        }
        if kind == ModelKind::Elippfm || kind == ModelKind::Ip {
            let ratio = x0 / params.pendulum_length;
            if ratio.abs() >= 1.0 {
                return Err(DynamicsError::RejectedInput(format!(
                    "|x0| = {} must be below the pendulum length {}",
                    x0.abs(),
                    params.pendulum_length
                )));
            }
        }
        if kind == ModelKind::Elippfm {
            let theta_a = (x0 / params.pendulum_length).asin();
            let theta_a_dot = v0 / (params.pendulum_length * theta_a.cos());
            return Ok(ModelState::Elippfm { theta_a, theta_a_dot, theta_w: 0.0, theta_w_dot: 0.0 });
        }
        Ok(Self::from_components(kind, [x0, v0, 0.0, 0.0]))
    }

    /// Horizontal COM position and velocity. For the enhanced flywheel model
    /// this is the point at distance `L_0` along the pendulum.
    pub fn com(&self, params: &RobotParams) -> (f64, f64) {
        match *self {
            ModelState::Elippfm { theta_a, theta_a_dot, .. } => {
                let l = params.pendulum_length;
                (l * theta_a.sin(), l * theta_a.cos() * theta_a_dot)
            }
            _ => {
                let c = self.components();
                (c[0], c[1])
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite())
    }

    /// `self + h * other`, component-wise. Both must share a variant.
    pub fn add_scaled(&self, h: f64, other: &ModelState) -> ModelState {
        debug_assert_eq!(self.kind(), other.kind());
        let a = self.components();
        let b = other.components();
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = a[i] + h * b[i];
        }
        ModelState::from_components(self.kind(), out)
    }
}

/// A point mass with its position and acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPoint {
    pub m: f64,
    pub x: f64,
    pub z: f64,
    pub x_dd: f64,
    pub z_dd: f64,
}

impl BodyPoint {
    pub fn fixed(m: f64, x: f64, z: f64) -> Self {
        Self { m, x, z, x_dd: 0.0, z_dd: 0.0 }
    }
}

/// Lumped swing-leg mass sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SwingSample {
    pub x_s: f64,
    pub z_s: f64,
    pub x_s_dd: f64,
    pub z_s_dd: f64,
}

fn expect_kind(state: &ModelState, allowed: &[ModelKind]) -> Result<()> {
    if !allowed.contains(&state.kind()) {
        return Err(DynamicsError::RejectedInput(format!(
            "{} state passed to {} dynamics",
            state.kind(),
            allowed[0]
        )));
    }
    if !state.is_finite() {
        return Err(DynamicsError::RejectedInput(format!("non-finite state {state:?}")));
    }
    Ok(())
}

fn check_bound(name: &'static str, value: f64, limit: f64) -> Result<()> {
    if !value.is_finite() || value.abs() > limit {
        return Err(DynamicsError::BoundViolation { name, value, limit });
    }
    Ok(())
}

fn omega_sq(params: &RobotParams) -> Result<f64> {
    if !(params.com_height > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "com_height must be > 0, got {}",
            params.com_height
        )));
    }
    Ok(params.gravity / params.com_height)
}

/// Nonlinear point-mass pendulum about the ankle, expressed in the horizontal
/// coordinate `x = L_0·sin θ`. The ankle torque enters as `τ_a / (m·L_0²)`.
pub fn ip_dynamics(state: &ModelState, tau_a: f64, params: &RobotParams) -> Result<ModelState> {
    expect_kind(state, &[ModelKind::Ip])?;
    let (x, x_dot) = (state.components()[0], state.components()[1]);
    let l = params.pendulum_length;
    let ratio = x / l;
    if ratio.abs() >= 1.0 {
        return Err(DynamicsError::RejectedInput(format!(
            "x = {x} is outside the pendulum reach {l}"
        )));
    }
    let theta = ratio.asin();
    let (sin_t, cos_t) = theta.sin_cos();
    let theta_dot = x_dot / (l * cos_t);
    let theta_dd = pendulum_angular_accel(theta, tau_a, params);
    let x_dd = l * (cos_t * theta_dd - sin_t * theta_dot * theta_dot);
    Ok(ModelState::Ip { x: x_dot, x_dot: x_dd })
}

/// `θ̈ = (g/L_0)·sin θ + τ_a/(m·L_0²)` with the total mass lumped at `L_0`.
pub fn pendulum_angular_accel(theta: f64, tau_a: f64, params: &RobotParams) -> f64 {
    let l = params.pendulum_length;
    params.gravity / l * theta.sin() + tau_a / (params.total_mass() * l * l)
}

pub fn lipm_dynamics(state: &ModelState, p_x: f64, params: &RobotParams) -> Result<ModelState> {
    expect_kind(state, &[ModelKind::Lipm])?;
    let w2 = omega_sq(params)?;
    let [x, x_dot, ..] = state.components();
    Ok(ModelState::Lipm { x: x_dot, x_dot: w2 * (x - p_x) })
}

/// Coupling acceleration of one swing mass on the body,
/// `m_i/(m_c·Z_c)·[(x_i − p_x)(g + z̈_i) − ẍ_i·z_i]`.
fn swing_coupling(m: f64, part_x: f64, part_z: f64, part_xdd: f64, part_zdd: f64, p_x: f64, params: &RobotParams) -> f64 {
    m / (params.body_mass * params.com_height)
        * ((part_x - p_x) * (params.gravity + part_zdd) - part_xdd * part_z)
}

fn check_body_mass(params: &RobotParams) -> Result<()> {
    if !(params.body_mass > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "body_mass must be > 0, got {}",
            params.body_mass
        )));
    }
    Ok(())
}

/// Two-mass model: body plus the whole swing leg lumped into one point of mass
/// `m_1 + m_2 + m_3`. The coupling coefficient is `m_s/(m_c·Z_c)`, the
/// two-mass case of the multi-mass model, so it vanishes with the swing mass.
pub fn tmipm_dynamics(
    state: &ModelState,
    p_x: f64,
    swing: &SwingSample,
    params: &RobotParams,
) -> Result<ModelState> {
    expect_kind(state, &[ModelKind::Tmipm])?;
    check_body_mass(params)?;
    let w2 = omega_sq(params)?;
    if ![swing.x_s, swing.z_s, swing.x_s_dd, swing.z_s_dd].iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::RejectedInput(format!("non-finite swing sample {swing:?}")));
    }
    let [x, x_dot, ..] = state.components();
    let f = swing_coupling(params.swing_mass(), swing.x_s, swing.z_s, swing.x_s_dd, swing.z_s_dd, p_x, params);
    Ok(ModelState::Tmipm { x: x_dot, x_dot: w2 * (x - p_x) + f })
}

/// Sum of the per-part coupling terms `f(t)` of the multi-mass model.
pub fn multi_mass_coupling(parts: &[BodyPoint], p_x: f64, params: &RobotParams) -> f64 {
    parts
        .iter()
        .map(|b| swing_coupling(b.m, b.x, b.z, b.x_dd, b.z_dd, p_x, params))
        .sum()
}

/// Multi-mass model with thigh, shin and foot as separate points.
pub fn mmipm_dynamics(
    state: &ModelState,
    p_x: f64,
    swing_parts: &[BodyPoint],
    params: &RobotParams,
) -> Result<ModelState> {
    expect_kind(state, &[ModelKind::Mmipm])?;
    if swing_parts.len() != 3 {
        return Err(DynamicsError::RejectedInput(format!(
            "expected 3 swing parts (thigh, shin, foot), got {}",
            swing_parts.len()
        )));
    }
    check_body_mass(params)?;
    let w2 = omega_sq(params)?;
    let [x, x_dot, ..] = state.components();
    let f = multi_mass_coupling(swing_parts, p_x, params);
    Ok(ModelState::Mmipm { x: x_dot, x_dot: w2 * (x - p_x) + f })
}

/// Linear pendulum plus flywheel. `m` is the total robot mass and `L = L_0`.
pub fn lippfm_dynamics(
    state: &ModelState,
    p_x: f64,
    tau_w: f64,
    params: &RobotParams,
) -> Result<ModelState> {
    expect_kind(state, &[ModelKind::Lippfm])?;
    check_bound("tau_w", tau_w, params.flywheel_torque_max)?;
    if !(params.flywheel_inertia > 0.0) {
        return Err(DynamicsError::InvalidParameter("flywheel_inertia must be > 0".into()));
    }
    let w2 = omega_sq(params)?;
    let [x, x_dot, _theta, theta_dot] = state.components();
    let m_l = params.total_mass() * params.pendulum_length;
    Ok(ModelState::Lippfm {
        x: x_dot,
        x_dot: w2 * (x - p_x) - tau_w / m_l,
        theta: theta_dot,
        theta_dot: tau_w / params.flywheel_inertia,
    })
}

/// Enhanced flywheel pendulum with pendulum mass and a commanded vertical COM
/// acceleration. `θ_w` is not fed back by the system matrix; its derivative is
/// the integrated flywheel rate.
pub fn elippfm_dynamics(
    state: &ModelState,
    tau_a: f64,
    tau_w: f64,
    zc_dd: f64,
    params: &RobotParams,
) -> Result<ModelState> {
    expect_kind(state, &[ModelKind::Elippfm])?;
    check_bound("tau_a", tau_a, params.ankle_torque_max)?;
    check_bound("tau_w", tau_w, params.flywheel_torque_max)?;
    check_bound("zc_dd", zc_dd, params.com_vertical_accel_max)?;
    let gamma = params.gamma();
    let mu = params.mu();
    let i_w = params.flywheel_inertia;
    let [theta_a, theta_a_dot, _theta_w, theta_w_dot] = state.components();
    let gravity_term = mu * (params.gravity + zc_dd) / gamma * theta_a;
    Ok(ModelState::Elippfm {
        theta_a: theta_a_dot,
        theta_a_dot: gravity_term + tau_a / gamma - tau_w / gamma,
        theta_w: theta_w_dot,
        theta_w_dot: -gravity_term - tau_a / gamma + (gamma + i_w) / (gamma * i_w) * tau_w,
    })
}

/// Zero-moment point of a set of point masses.
pub fn compute_zmp(bodies: &[BodyPoint], params: &RobotParams) -> Result<f64> {
    if bodies.is_empty() {
        return Err(DynamicsError::RejectedInput("compute_zmp needs at least one body".into()));
    }
    let g = params.gravity;
    let mut num = 0.0;
    let mut den = 0.0;
    for b in bodies {
        num += b.m * b.x * (b.z_dd + g) - b.m * b.z * b.x_dd;
        den += b.m * (b.z_dd + g);
    }
    if den == 0.0 || !den.is_finite() {
        return Err(DynamicsError::DegenerateLoad);
    }
    Ok(num / den)
}

pub fn capture_point(x: f64, x_dot: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!("omega must be > 0, got {omega}")));
    }
    Ok(x + x_dot / omega)
}

/// Orbital energy `½ẋ² − ½ω²(x − p_x)²`, conserved by the LIPM at fixed CoP.
pub fn orbital_energy(x: f64, x_dot: f64, p_x: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!("omega must be > 0, got {omega}")));
    }
    let d = x - p_x;
    Ok(0.5 * x_dot * x_dot - 0.5 * omega * omega * d * d)
}

/// Swing-leg pose held fixed relative to the hip while balancing in single
/// support. Each part sits on the vertical through the hip at a fixed height,
/// so it translates with the body.
#[derive(Debug, Clone, PartialEq)]
pub struct SwingPose {
    /// `(mass, height)` for thigh, shin and foot.
    pub parts: [(f64, f64); 3],
}

impl SwingPose {
    /// Mid-stance pose: thigh COM half a thigh below the hip, shin COM half a
    /// shin above the lifted ankle, foot at the given clearance.
    pub fn mid_stance(params: &RobotParams, foot_clearance: f64) -> Self {
        Self {
            parts: [
                (params.thigh_mass, params.com_height - params.thigh_length / 2.0),
                (params.shin_mass, foot_clearance + params.shin_length / 2.0),
                (params.foot_mass, foot_clearance),
            ],
        }
    }

    /// The three parts lumped into one mass at their mass-weighted height.
    pub fn lumped(&self) -> (f64, f64) {
        let m: f64 = self.parts.iter().map(|p| p.0).sum();
        if m == 0.0 {
            return (0.0, 0.0);
        }
        let mz: f64 = self.parts.iter().map(|p| p.0 * p.1).sum();
        (m, mz / m)
    }
}

/// Inputs held constant over one integration step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Inputs {
    /// Commanded (or realized) centre of pressure, m.
    pub p_x: f64,
    pub tau_a: f64,
    pub tau_w: f64,
    pub zc_dd: f64,
}

/// Derivative of the full balancing plant for any model.
///
/// For the swing-leg models the leg follows `pose`, attached to the body: each
/// part shares the body's horizontal position and acceleration. Since the
/// body acceleration then appears on both sides of the equation of motion, it
/// is solved for in closed form.
pub fn plant_derivative(
    state: &ModelState,
    inputs: &Inputs,
    params: &RobotParams,
    pose: &SwingPose,
) -> Result<ModelState> {
    match state.kind() {
        ModelKind::Ip => ip_dynamics(state, inputs.tau_a, params),
        ModelKind::Lipm => lipm_dynamics(state, inputs.p_x, params),
        ModelKind::Tmipm => {
            let [x, ..] = state.components();
            let (m_s, z_s) = pose.lumped();
            let sample = SwingSample { x_s: x, z_s, x_s_dd: 0.0, z_s_dd: 0.0 };
            let lumped = RobotParams {
                thigh_mass: m_s,
                shin_mass: 0.0,
                foot_mass: 0.0,
                ..params.clone()
            };
            let d = tmipm_dynamics(state, inputs.p_x, &sample, &lumped)?;
            let slope = m_s * z_s / (params.body_mass * params.com_height);
            let [v, a, ..] = d.components();
            Ok(ModelState::Tmipm { x: v, x_dot: a / (1.0 + slope) })
        }
        ModelKind::Mmipm => {
            let [x, ..] = state.components();
            let parts = pose.parts.map(|(m, z)| BodyPoint::fixed(m, x, z));
            let d = mmipm_dynamics(state, inputs.p_x, &parts, params)?;
            let slope: f64 = pose
                .parts
                .iter()
                .map(|(m, z)| m * z / (params.body_mass * params.com_height))
                .sum();
            let [v, a, ..] = d.components();
            Ok(ModelState::Mmipm { x: v, x_dot: a / (1.0 + slope) })
        }
        ModelKind::Lippfm => lippfm_dynamics(state, inputs.p_x, inputs.tau_w, params),
        ModelKind::Elippfm => {
            elippfm_dynamics(state, inputs.tau_a, inputs.tau_w, inputs.zc_dd, params)
        }
    }
}
