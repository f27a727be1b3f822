use humanoid_balance::cli::format_g;
use humanoid_balance::dynamics::{
    lipm_dynamics, lippfm_dynamics, mmipm_dynamics, orbital_energy, plant_derivative, tmipm_dynamics, BodyPoint,
    Inputs, ModelKind, ModelState, RobotParams, SwingPose, SwingSample,
};
use humanoid_balance::integrator::Policy;
use humanoid_balance::planner::{
    plan_footsteps, swing_trajectory, zmp_reference, Foothold, Side, StepParams, SwingProfile,
};
use humanoid_balance::recovery::{PolicyBundle, RecoveryPolicy};
use humanoid_balance::sweep::GridSpec;
use proptest::prelude::*;

fn model() -> impl Strategy<Value = ModelKind> {
    prop::sample::select(ModelKind::ALL.to_vec())
}

fn negate(s: &ModelState) -> ModelState {
    ModelState::from_components(s.kind(), s.components().map(|v| -v))
}

fn neg_inputs(i: &Inputs) -> Inputs {
    Inputs { p_x: -i.p_x, tau_a: -i.tau_a, tau_w: -i.tau_w, zc_dd: i.zc_dd }
}

proptest! {
    #[test]
    fn lipm_is_linear(x1 in -1.0..1.0f64, v1 in -1.0..1.0f64, p1 in -0.1..0.1f64,
                      x2 in -1.0..1.0f64, v2 in -1.0..1.0f64, p2 in -0.1..0.1f64,
                      a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let p = RobotParams::default();
        let d = |x: f64, v: f64, px: f64| lipm_dynamics(&ModelState::Lipm { x, x_dot: v }, px, &p).unwrap().components();
        let lhs = d(a * x1 + b * x2, a * v1 + b * v2, a * p1 + b * p2);
        let (r1, r2) = (d(x1, v1, p1), d(x2, v2, p2));
        for k in 0..2 {
            prop_assert!((lhs[k] - (a * r1[k] + b * r2[k])).abs() <= 1e-12 * (1.0 + lhs[k].abs()));
        }
    }

    #[test]
    fn swing_models_reduce_to_lipm(x in -0.3..0.3f64, v in -1.0..1.0f64, px in -0.05..0.05f64,
                                   xs in -0.3..0.3f64, zs in 0.0..0.4f64, ax in -5.0..5.0f64, az in -5.0..5.0f64) {
        let p = RobotParams::default();
        let massless = RobotParams { thigh_mass: 0.0, shin_mass: 0.0, foot_mass: 0.0, ..p.clone() };
        let base = lipm_dynamics(&ModelState::Lipm { x, x_dot: v }, px, &p).unwrap().components();
        let swing = SwingSample { x_s: xs, z_s: zs, x_s_dd: ax, z_s_dd: az };
        let t = tmipm_dynamics(&ModelState::Tmipm { x, x_dot: v }, px, &swing, &massless).unwrap().components();
        let parts = [BodyPoint { m: 0.0, x: xs, z: zs, x_dd: ax, z_dd: az }; 3];
        let m = mmipm_dynamics(&ModelState::Mmipm { x, x_dot: v }, px, &parts, &p).unwrap().components();
        let f = lippfm_dynamics(&ModelState::Lippfm { x, x_dot: v, theta: 0.3, theta_dot: -1.0 }, px, 0.0, &p)
            .unwrap()
            .components();
        for other in [t, m, f] {
            prop_assert!((other[0] - base[0]).abs() <= 1e-12);
            prop_assert!((other[1] - base[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn orbital_energy_is_conserved_on_exact_solutions(x0 in -0.2..0.2f64, v0 in -0.5..0.5f64,
                                                      px in -0.05..0.05f64, t in 0.0..1.0f64) {
        let w = RobotParams::default().omega();
        let (c, s) = ((w * t).cosh(), (w * t).sinh());
        let x = px + (x0 - px) * c + v0 / w * s;
        let v = (x0 - px) * w * s + v0 * c;
        let e0 = orbital_energy(x0, v0, px, w).unwrap();
        let e1 = orbital_energy(x, v, px, w).unwrap();
        prop_assert!((e1 - e0).abs() <= 1e-9 * (1.0 + e0.abs() + v * v));
    }

    /// Mirrored states receive mirrored commands and mirrored derivatives,
    /// which is what makes every region map point-symmetric.
    #[test]
    fn closed_loop_is_odd(kind in model(), x in -0.2..0.2f64, v in -0.6..0.6f64, hip in any::<bool>()) {
        let p = RobotParams::default();
        let bundle = PolicyBundle::for_params(&p);
        let pose = SwingPose::mid_stance(&p, 0.04);
        let policy = if hip && kind.has_flywheel() {
            RecoveryPolicy::ankle_and_hip(&bundle)
        } else {
            RecoveryPolicy::ankle_only(&bundle)
        };
        let s = ModelState::from_com(kind, x, v, &p).unwrap();
        let m = negate(&s);
        let (a, b) = (policy.command(&s, &p), policy.command(&m, &p));
        prop_assert_eq!(neg_inputs(&a), b);
        let da = plant_derivative(&s, &a, &p, &pose);
        let db = plant_derivative(&m, &b, &p, &pose);
        if let (Ok(da), Ok(db)) = (da, db) {
            prop_assert_eq!(negate(&da), db);
        }
    }

    #[test]
    fn cop_command_stays_on_the_foot(kind in model(), x in -0.3..0.3f64, v in -2.0..2.0f64, hip in any::<bool>()) {
        let p = RobotParams::default();
        let bundle = PolicyBundle::for_params(&p);
        let policy = if hip && kind.has_flywheel() {
            RecoveryPolicy::ankle_and_hip(&bundle)
        } else {
            RecoveryPolicy::ankle_only(&bundle)
        };
        let s = ModelState::from_com(kind, x, v, &p).unwrap();
        let i = policy.command(&s, &p);
        prop_assert!(i.p_x.abs() <= p.foot_length / 2.0);
        prop_assert!(i.tau_a.abs() <= p.ankle_torque_max * (1.0 + 1e-12));
        prop_assert!(i.tau_w.abs() <= p.flywheel_torque_max);
        prop_assert!(i.zc_dd.abs() <= p.com_vertical_accel_max);
    }

    #[test]
    fn zmp_reference_is_continuous_and_complete(k in 0usize..4, length in -0.2..0.2f64, width in 0.05..0.2f64) {
        let step = StepParams { step_length: length, step_width: width, ..Default::default() };
        let f = plan_footsteps(&step, 4, (0.0, 0.0)).unwrap();
        let sup = f.support(k).unwrap();
        let before = zmp_reference(&step, &f, k, step.single_support - 1e-12).unwrap();
        let at = zmp_reference(&step, &f, k, step.single_support).unwrap();
        prop_assert!((before.0 - at.0).abs() < 1e-12 && (before.1 - at.1).abs() < 1e-12);
        let end = zmp_reference(&step, &f, k, step.period() - 1e-12).unwrap();
        prop_assert!((end.0 - sup.x - length).abs() < 1e-9);
        prop_assert!(((end.1 - sup.y).abs() - width).abs() < 1e-9);
    }

    #[test]
    fn swing_stays_above_ground(dx in -0.4..0.4f64, apex in 0.0..0.1f64, duration in 0.2..1.0f64) {
        let prof = SwingProfile { apex_height: apex, duration };
        let from = Foothold { x: 0.0, y: 0.05, side: Side::Left };
        let to = Foothold { x: dx, y: 0.05, side: Side::Left };
        let n = (duration / 1e-3) as usize;
        for j in 0..=n {
            let s = swing_trajectory(&prof, &from, &to, (j as f64 * 1e-3).min(duration)).unwrap();
            prop_assert!(s.pos[2] >= 0.0);
        }
        for t in [0.0, duration] {
            let s = swing_trajectory(&prof, &from, &to, t).unwrap();
            prop_assert!(s.vel.iter().all(|v| v.abs() < 1e-12));
            prop_assert!(s.acc[0].abs() < 1e-12);
        }
    }

    #[test]
    fn grid_cardinality_formula(nx in 1usize..40, nv in 1usize..40, sx in 0.001..0.1f64, sv in 0.001..0.3f64) {
        let half_x = sx * (nx - 1) as f64 / 2.0;
        let half_v = sv * (nv - 1) as f64 / 2.0;
        let g = GridSpec { x0_min: -half_x, x0_max: half_x, x0_step: sx, v0_min: -half_v, v0_max: half_v, v0_step: sv };
        prop_assert_eq!(g.cell_count().unwrap(), nx * nv);
        for i in 0..nx {
            prop_assert_eq!(g.x0(i), -g.x0(nx - 1 - i));
        }
    }

    #[test]
    fn general_format_keeps_nine_digits(v in prop::num::f64::NORMAL) {
        let s = format_g(v);
        let back: f64 = s.parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-9 * v.abs(), "{} -> {}", v, s);
        prop_assert!(!s.contains("e") || s.contains("e-") || s.contains("e+"));
    }
}
