//! Ankle and hip push-recovery strategies and per-run classification.
//!
//! The ankle strategy places the centre of pressure at the capture point,
//! plus a small offset proportional to the COM displacement so the robot
//! returns over the ankle rather than stopping wherever the capture point
//! happened to be. The hip strategy spins the flywheel bang-bang while the
//! capture point lies beyond the foot edge, then brakes and unwinds it.

use std::fmt;

use crate::dynamics::{capture_point, Inputs, ModelKind, ModelState, RobotParams, SwingPose};
use crate::integrator::{simulate, Policy, SimConfig, SimError, SimOutcome, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecoveryLabel {
    StableAnkle,
    StableHip,
    Unstable,
}

impl RecoveryLabel {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryLabel::StableAnkle => "stable_ankle",
            RecoveryLabel::StableHip => "stable_hip",
            RecoveryLabel::Unstable => "unstable",
        }
    }

    pub fn is_stable(self) -> bool {
        self != RecoveryLabel::Unstable
    }
}

impl fmt::Display for RecoveryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    /// Gain on the COM offset added to the capture point when placing the CoP.
    pub cop_gain: f64,
    /// Half-width of the admissible CoP interval, m. At most half the foot.
    pub cop_limit: f64,
    pub hip_enabled: bool,
    /// Flywheel torque the hip strategy may command, N·m.
    pub flywheel_torque_limit: f64,
    /// Flywheel angle excursion the hip strategy may use, rad.
    pub flywheel_angle_limit: f64,
    /// Natural frequency of the critically damped unwind law, rad/s.
    pub unwind_frequency: f64,
    /// The hip strategy engages once the capture point comes within this
    /// distance of the CoP limit, leaving the ankle spare authority to pull
    /// the capture point back inside, m.
    pub hip_margin: f64,
    /// Let the enhanced flywheel model modulate its vertical COM acceleration
    /// while the hip strategy is active.
    pub vertical_modulation: bool,
}

impl PolicyBundle {
    pub fn for_params(params: &RobotParams) -> Self {
        Self {
            cop_gain: 0.25,
            cop_limit: params.foot_half_length(),
            hip_enabled: true,
            flywheel_torque_limit: params.flywheel_torque_max,
            flywheel_angle_limit: params.flywheel_angle_max,
            unwind_frequency: 3.0,
            hip_margin: 0.01,
            vertical_modulation: true,
        }
    }

    pub fn validate(&self, params: &RobotParams) -> Result<(), String> {
        if !(self.cop_gain.is_finite() && self.cop_gain >= 0.0) {
            return Err(format!("cop_gain must be >= 0, got {}", self.cop_gain));
        }
        if !(self.cop_limit >= 0.0 && self.cop_limit <= params.foot_half_length()) {
            return Err(format!(
                "cop_limit {} must lie in [0, {}]",
                self.cop_limit,
                params.foot_half_length()
            ));
        }
        if !(self.flywheel_torque_limit >= 0.0 && self.flywheel_torque_limit <= params.flywheel_torque_max) {
            return Err(format!(
                "flywheel_torque_limit {} must lie in [0, {}]",
                self.flywheel_torque_limit, params.flywheel_torque_max
            ));
        }
        if !(self.flywheel_angle_limit > 0.0 && self.flywheel_angle_limit <= params.flywheel_angle_max) {
            return Err(format!(
                "flywheel_angle_limit {} must lie in (0, {}]",
                self.flywheel_angle_limit, params.flywheel_angle_max
            ));
        }
        if !(self.unwind_frequency.is_finite() && self.unwind_frequency > 0.0) {
            return Err(format!("unwind_frequency must be > 0, got {}", self.unwind_frequency));
        }
        if !(self.hip_margin >= 0.0 && self.hip_margin <= self.cop_limit) {
            return Err(format!("hip_margin {} must lie in [0, {}]", self.hip_margin, self.cop_limit));
        }
        Ok(())
    }
}

/// Sign with `sign(0) = 0`, so that mirrored states get mirrored commands.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnkleCommand {
    pub p_x: f64,
    /// Ankle torque realizing `p_x`; zero for models driven by a ZMP input.
    pub tau_a: f64,
}

/// CoP placement at the capture point `ξ = x + ẋ/ω` (nominal height),
/// clamped to the foot. The offset `k·x` is added only while it points the
/// same way as `ξ`, so the CoP never sits inside the capture point and an
/// initially capturable state stays capturable.
pub fn ankle_policy(state: &ModelState, params: &RobotParams, bundle: &PolicyBundle) -> AnkleCommand {
    let (x, x_dot) = state.com(params);
    let xi = capture_point(x, x_dot, params.omega()).unwrap_or(x);
    let offset = if x * xi > 0.0 { bundle.cop_gain * x } else { 0.0 };
    let p_x = (xi + offset).clamp(-bundle.cop_limit, bundle.cop_limit);
    let tau_a = if state.kind().torque_input() {
        -params.total_mass() * params.gravity * p_x
    } else {
        0.0
    };
    AnkleCommand { p_x, tau_a }
}

/// Capture point beyond the admissible CoP interval, signed; zero inside it.
pub fn capture_point_excess(state: &ModelState, params: &RobotParams, bundle: &PolicyBundle) -> f64 {
    let (x, x_dot) = state.com(params);
    let xi = capture_point(x, x_dot, params.omega()).unwrap_or(x);
    xi - xi.clamp(-bundle.cop_limit, bundle.cop_limit)
}

/// Capture point beyond the hip engagement threshold, signed.
fn hip_excess(state: &ModelState, params: &RobotParams, bundle: &PolicyBundle) -> f64 {
    let (x, x_dot) = state.com(params);
    let xi = capture_point(x, x_dot, params.omega()).unwrap_or(x);
    let edge = bundle.cop_limit - bundle.hip_margin;
    xi - xi.clamp(-edge, edge)
}

/// Flywheel angle, rate, and the inertia seen by the flywheel torque.
fn flywheel(state: &ModelState, params: &RobotParams) -> Option<(f64, f64, f64)> {
    match *state {
        ModelState::Lippfm { theta, theta_dot, .. } => Some((theta, theta_dot, params.flywheel_inertia)),
        ModelState::Elippfm { theta_w, theta_w_dot, .. } => {
            let (g, i) = (params.gamma(), params.flywheel_inertia);
            Some((theta_w, theta_w_dot, g * i / (g + i)))
        }
        _ => None,
    }
}

/// Waist torque that keeps the flywheel fixed relative to the pendulum.
///
/// In the enhanced model `θ_w` is measured relative to the pendulum, so
/// holding it requires cancelling the gravity and ankle terms of `θ̈_w`. In
/// the plain flywheel model the hold torque is zero.
pub fn hold_torque(state: &ModelState, tau_a: f64, zc_dd: f64, params: &RobotParams) -> f64 {
    match *state {
        ModelState::Elippfm { theta_a, .. } => {
            let (g, i) = (params.gamma(), params.flywheel_inertia);
            (params.mu() * (params.gravity + zc_dd) * theta_a + tau_a) * i / (g + i)
        }
        _ => 0.0,
    }
}

/// Flywheel torque of the hip strategy. Zero for models without a flywheel.
///
/// A positive torque accelerates the body backwards, so the wind-up torque
/// carries the sign of the excess. Winding stops once a full-torque brake
/// would only just halt the flywheel at the angle limit. Braking and
/// unwinding act on top of the hold torque.
pub fn hip_policy(state: &ModelState, params: &RobotParams, bundle: &PolicyBundle) -> f64 {
    let Some((angle, rate, inertia)) = flywheel(state, params) else {
        return 0.0;
    };
    let tau_max = bundle.flywheel_torque_limit;
    let angle_max = bundle.flywheel_angle_limit;
    if tau_max == 0.0 {
        return 0.0;
    }
    let tau_a = ankle_policy(state, params, bundle).tau_a;
    let zc_dd = if bundle.vertical_modulation {
        vertical_accel_policy(state, params, bundle)
    } else {
        0.0
    };
    let hold = hold_torque(state, tau_a, zc_dd, params);
    let decel = tau_max / inertia;
    let stop_angle = angle + rate * rate.abs() / (2.0 * decel);
    let dir = sign(hip_excess(state, params, bundle));

    if dir != 0.0 && dir * stop_angle < angle_max {
        return dir * tau_max;
    }

    let wu = bundle.unwind_frequency;
    let unwind = (-inertia * (wu * wu * angle + 2.0 * wu * rate)).clamp(-tau_max, tau_max);
    let outward = angle * rate > 0.0 || (angle == 0.0 && rate != 0.0);
    if !outward {
        return (hold + unwind).clamp(-tau_max, tau_max);
    }
    // Constant deceleration that stops exactly at the limit.
    let room = angle_max - angle.abs();
    let needed = if room > 0.0 {
        inertia * rate * rate / (2.0 * room)
    } else {
        tau_max
    };
    let brake = -sign(rate) * needed.min(tau_max);
    let slow = if unwind * rate < 0.0 && unwind.abs() > brake.abs() {
        unwind
    } else {
        brake
    };
    (hold + slow).clamp(-tau_max, tau_max)
}

/// Vertical COM acceleration schedule of the enhanced flywheel model: while
/// the capture point is outside the foot, lower the effective gravity when
/// leaning into the fall and raise it when gravity is already restoring.
pub fn vertical_accel_policy(state: &ModelState, params: &RobotParams, bundle: &PolicyBundle) -> f64 {
    let ModelState::Elippfm { theta_a, .. } = *state else {
        return 0.0;
    };
    let excess = hip_excess(state, params, bundle);
    -params.com_vertical_accel_max * sign(theta_a * excess)
}

/// Ankle strategy, optionally combined with the hip strategy.
#[derive(Debug, Clone)]
pub struct RecoveryPolicy {
    pub bundle: PolicyBundle,
    pub use_hip: bool,
}

impl RecoveryPolicy {
    pub fn ankle_only(bundle: &PolicyBundle) -> Self {
        Self { bundle: bundle.clone(), use_hip: false }
    }

    pub fn ankle_and_hip(bundle: &PolicyBundle) -> Self {
        Self { bundle: bundle.clone(), use_hip: true }
    }
}

impl Policy for RecoveryPolicy {
    fn supports(&self, kind: ModelKind) -> bool {
        !self.use_hip || kind.has_flywheel()
    }

    fn command(&self, state: &ModelState, params: &RobotParams) -> Inputs {
        let ankle = ankle_policy(state, params, &self.bundle);
        let mut inputs = Inputs { p_x: ankle.p_x, tau_a: ankle.tau_a, ..Default::default() };
        if !self.use_hip {
            inputs.tau_w = hold_torque(state, ankle.tau_a, 0.0, params)
                .clamp(-params.flywheel_torque_max, params.flywheel_torque_max);
        } else {
            inputs.tau_w = hip_policy(state, params, &self.bundle);
            if self.bundle.vertical_modulation {
                inputs.zc_dd = vertical_accel_policy(state, params, &self.bundle);
            }
        }
        inputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: RecoveryLabel,
    pub ankle: SimOutcome,
    /// Ankle-plus-hip attempt, run only when the ankle alone failed on a
    /// flywheel model with the hip strategy enabled.
    pub hip: Option<SimOutcome>,
}

impl Classification {
    /// The attempt that decided the label.
    pub fn deciding(&self) -> &SimOutcome {
        self.hip.as_ref().unwrap_or(&self.ankle)
    }

    pub fn settle_time(&self) -> Option<f64> {
        if self.label.is_stable() {
            self.deciding().settle_time
        } else {
            None
        }
    }

    pub fn blowup(&self) -> bool {
        self.deciding().blowup.is_some()
    }
}

/// Ankle first; the hip strategy is tried only if the ankle alone does not
/// settle and the model has a flywheel.
pub fn classify(
    initial: &ModelState,
    params: &RobotParams,
    cfg: &SimConfig,
    bundle: &PolicyBundle,
    pose: &SwingPose,
) -> Result<Classification, SimError> {
    let ankle = simulate(initial, &RecoveryPolicy::ankle_only(bundle), params, pose, cfg)?;
    if ankle.termination == Termination::Settled {
        return Ok(Classification { label: RecoveryLabel::StableAnkle, ankle, hip: None });
    }
    if !(bundle.hip_enabled && initial.kind().has_flywheel()) {
        return Ok(Classification { label: RecoveryLabel::Unstable, ankle, hip: None });
    }
    let hip = simulate(initial, &RecoveryPolicy::ankle_and_hip(bundle), params, pose, cfg)?;
    let label = if hip.termination == Termination::Settled {
        RecoveryLabel::StableHip
    } else {
        RecoveryLabel::Unstable
    };
    Ok(Classification { label, ankle, hip: Some(hip) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup() -> (RobotParams, PolicyBundle, SwingPose, SimConfig) {
        let p = RobotParams::default();
        let b = PolicyBundle::for_params(&p);
        let pose = SwingPose::mid_stance(&p, 0.04);
        (p, b, pose, SimConfig::default())
    }

    fn lipm(x: f64, v: f64) -> ModelState {
        ModelState::Lipm { x, x_dot: v }
    }

    #[test]
    fn ankle_examples() {
        let (p, b, ..) = setup();
        assert_eq!(ankle_policy(&lipm(0.0, 0.0), &p, &b).p_x, 0.0);
        let cmd = ankle_policy(&lipm(0.0, 0.2), &p, &b);
        assert_relative_eq!(cmd.p_x, 0.2 / p.omega(), epsilon = 1e-15);
        assert_relative_eq!(cmd.p_x, 0.0428, epsilon = 1e-4);
        assert_eq!(ankle_policy(&lipm(0.0, 0.6), &p, &b).p_x, 0.05);
        assert_eq!(ankle_policy(&lipm(0.0, -0.6), &p, &b).p_x, -0.05);
    }

    #[test]
    fn ankle_torque_realizes_cop() {
        let (p, b, ..) = setup();
        let s = ModelState::from_com(ModelKind::Elippfm, 0.0, 0.6, &p).unwrap();
        let cmd = ankle_policy(&s, &p, &b);
        assert_eq!(cmd.p_x, 0.05);
        assert_relative_eq!(cmd.tau_a.abs(), p.ankle_torque_max, epsilon = 1e-12);
    }

    #[test]
    fn hip_examples() {
        let (p, b, ..) = setup();
        let w = p.omega();
        // Capture point inside the foot.
        let inside = ModelState::Lippfm { x: 0.0, x_dot: 0.1, theta: 0.0, theta_dot: 0.0 };
        assert_eq!(hip_policy(&inside, &p, &b), 0.0);
        // Excess of +0.03 m: full restoring torque.
        let over = ModelState::Lippfm { x: 0.0, x_dot: 0.08 * w, theta: 0.0, theta_dot: 0.0 };
        assert_relative_eq!(capture_point_excess(&over, &p, &b), 0.03, epsilon = 1e-12);
        assert_eq!(hip_policy(&over, &p, &b).abs(), 5.0);
        // Angle limit reached: no further wind-up, only the unwind law.
        let limit = ModelState::Lippfm { x: 0.0, x_dot: 0.08 * w, theta: b.flywheel_angle_limit, theta_dot: 0.0 };
        let tau = hip_policy(&limit, &p, &b);
        assert!(tau < 0.0, "must unwind toward zero, got {tau}");
        let wu = b.unwind_frequency;
        assert_relative_eq!(tau, -p.flywheel_inertia * wu * wu * b.flywheel_angle_limit, epsilon = 1e-12);
    }

    #[test]
    fn hip_brakes_before_the_limit() {
        let (p, b, ..) = setup();
        let w = p.omega();
        // Spinning outward fast enough that stopping needs the full torque.
        let rate = (2.0 * 50.0 * 0.4_f64).sqrt();
        let s = ModelState::Lippfm { x: 0.0, x_dot: 0.08 * w, theta: 0.2, theta_dot: rate };
        assert_eq!(hip_policy(&s, &p, &b), -5.0);
    }

    #[test]
    fn hip_inactive_without_flywheel() {
        let (p, b, ..) = setup();
        assert_eq!(hip_policy(&lipm(0.0, 1.0), &p, &b), 0.0);
        assert!(!RecoveryPolicy::ankle_and_hip(&b).supports(ModelKind::Lipm));
        assert!(RecoveryPolicy::ankle_only(&b).supports(ModelKind::Ip));
    }

    #[test]
    fn lipm_classification_follows_capture_point() {
        let (p, b, pose, cfg) = setup();
        let c = classify(&lipm(0.0, 0.0), &p, &cfg, &b, &pose).unwrap();
        assert_eq!(c.label, RecoveryLabel::StableAnkle);
        let c = classify(&lipm(0.0, 0.2), &p, &cfg, &b, &pose).unwrap();
        assert_eq!(c.label, RecoveryLabel::StableAnkle);
        assert!(c.ankle.max_zmp_excursion <= 0.05);
        let c = classify(&lipm(0.0, 0.6), &p, &cfg, &b, &pose).unwrap();
        assert_eq!(c.label, RecoveryLabel::Unstable);
        assert!(c.hip.is_none());
    }

    #[test]
    fn lippfm_just_past_ankle_bound_needs_hip() {
        let (p, b, pose, cfg) = setup();
        let s = ModelState::from_com(ModelKind::Lippfm, 0.0, 0.25, &p).unwrap();
        let c = classify(&s, &p, &cfg, &b, &pose).unwrap();
        assert_eq!(c.ankle.termination, Termination::Fell);
        assert_eq!(c.label, RecoveryLabel::StableHip);
    }

    #[test]
    fn labels_serialize() {
        assert_eq!(RecoveryLabel::StableAnkle.to_string(), "stable_ankle");
        assert!(!RecoveryLabel::Unstable.is_stable());
    }
}
