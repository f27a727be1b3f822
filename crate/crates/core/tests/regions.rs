use humanoid_balance::dynamics::{ModelKind, RobotParams};
use humanoid_balance::planner::{plan_walk, SolverSettings, StepParams, WalkPhase};
use humanoid_balance::recovery::RecoveryLabel;
use humanoid_balance::sweep::{run_grid, Execution, GridSpec, SweepContext};

/// Cells whose capture point `x0 + v0/ω` lies on the foot. Grid values are
/// computed independently of the sweep module, with a small margin on the
/// boundary test so that the count is independent of rounding.
fn analytic_lipm_count(grid: &GridSpec, p: &RobotParams) -> usize {
    let w = (p.gravity / p.com_height).sqrt();
    let half = p.foot_length / 2.0;
    let nx = ((grid.x0_max - grid.x0_min) / grid.x0_step).round() as i64;
    let nv = ((grid.v0_max - grid.v0_min) / grid.v0_step).round() as i64;
    let mut count = 0;
    for i in 0..=nx {
        for j in 0..=nv {
            let x0 = grid.x0_min + i as f64 * grid.x0_step;
            let v0 = grid.v0_min + j as f64 * grid.v0_step;
            let xi = x0 + v0 / w;
            assert!((xi.abs() - half).abs() > 1e-6, "cell too close to the boundary to be decisive");
            if xi.abs() < half {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn lipm_region_is_the_capture_region() {
    let ctx = SweepContext::with_defaults();
    let grid = GridSpec::default();
    let map = run_grid(ModelKind::Lipm, &grid, &ctx, Execution::Parallel).unwrap();
    assert_eq!(map.stable_count(), analytic_lipm_count(&grid, &ctx.params));
    assert_eq!(map.count(RecoveryLabel::StableHip), 0);
}

#[test]
fn hip_strategy_never_shrinks_the_stable_set() {
    let ctx = SweepContext::with_defaults();
    let mut no_hip = ctx.clone();
    no_hip.bundle.hip_enabled = false;
    let grid = GridSpec::default();
    for model in [ModelKind::Lippfm, ModelKind::Elippfm] {
        let with = run_grid(model, &grid, &ctx, Execution::Parallel).unwrap();
        let without = run_grid(model, &grid, &no_hip, Execution::Parallel).unwrap();
        assert!(with.stable_count() > without.stable_count(), "{model}");
        for (a, b) in with.cells.iter().zip(&without.cells) {
            if b.label.is_stable() {
                assert!(a.label.is_stable());
            }
        }
        assert_eq!(without.count(RecoveryLabel::StableHip), 0);
    }
}

#[test]
fn sequential_and_parallel_maps_agree() {
    let ctx = SweepContext::with_defaults();
    let grid = GridSpec::default();
    for model in ModelKind::ALL {
        let a = run_grid(model, &grid, &ctx, Execution::Sequential).unwrap();
        let b = run_grid(model, &grid, &ctx, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}

/// One-sided third-order first derivative from samples `v[0], v[1], ...`
/// spaced `h` apart (forward) or `v[0], v[-1], ...` (backward, `h < 0`).
fn one_sided(v: [f64; 4], h: f64) -> f64 {
    (-11.0 * v[0] + 18.0 * v[1] - 9.0 * v[2] + 2.0 * v[3]) / (6.0 * h)
}

/// The leg masses hand over from one foot to the other at lift-off, so the
/// COM acceleration may jump there while the velocity must not. Each one-sided
/// stencil stays within its own phase; the two estimates are one sample apart
/// and may differ by at most one step of the local acceleration.
#[test]
fn walk_com_is_c1_across_steps() {
    let p = RobotParams::default();
    let step = StepParams::default();
    let settings = SolverSettings::default();
    let h = settings.dt;
    for model in [ModelKind::Lipm, ModelKind::Mmipm] {
        let plan = plan_walk(model, &step, 2, 0.04, &p, &settings).unwrap();
        let b = plan
            .samples
            .iter()
            .position(|s| s.state.phase == WalkPhase::SingleSupport && s.state.step == 1)
            .unwrap();
        let x: Vec<f64> = plan.samples.iter().map(|s| s.com_x).collect();
        let right = one_sided([x[b], x[b + 1], x[b + 2], x[b + 3]], h);
        let left = one_sided([x[b - 1], x[b - 2], x[b - 3], x[b - 4]], -h);
        let accel = (b - 4..b + 4)
            .map(|j| ((x[j + 1] - 2.0 * x[j] + x[j - 1]) / (h * h)).abs())
            .fold(0.0, f64::max);
        assert!((right - left).abs() <= h * accel + 1e-6, "{model}: {left} vs {right}, |x''| <= {accel}");
        assert!((x[b] - x[b - 1]).abs() < 1e-3);
    }
}
