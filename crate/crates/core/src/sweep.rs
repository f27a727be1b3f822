//! Initial-condition grid sweeps and cross-model summaries.
//!
//! Cells are independent, so with the `parallel` feature (on by default) they
//! are evaluated on the rayon pool. Results are always collected by cell index,
//! which keeps region maps bitwise identical for any worker count.

use thiserror::Error;

use crate::dynamics::{ModelKind, ModelState, RobotParams, SwingPose};
use crate::integrator::{SimConfig, SimError};
use crate::recovery::{classify, PolicyBundle, RecoveryLabel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("region maps were computed on different grids")]
    MismatchedGrids,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid recovery policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x0_min: f64,
    pub x0_max: f64,
    pub x0_step: f64,
    pub v0_min: f64,
    pub v0_max: f64,
    pub v0_step: f64,
}

impl Default for GridSpec {
    /// ±0.2 m in 0.02 m steps by ±0.5 m/s in 0.1 m/s steps: 21 × 11 cells.
    fn default() -> Self {
        Self { x0_min: -0.2, x0_max: 0.2, x0_step: 0.02, v0_min: -0.5, v0_max: 0.5, v0_step: 0.1 }
    }
}

fn axis_len(name: &str, min: f64, max: f64, step: f64) -> Result<usize, SweepError> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) {
        return Err(SweepError::InvalidGrid(format!("{name} bounds must be finite")));
    }
    if max < min {
        return Err(SweepError::InvalidGrid(format!("{name}_max {max} < {name}_min {min}")));
    }
    if step <= 0.0 {
        return Err(SweepError::InvalidGrid(format!("{name}_step must be > 0, got {step}")));
    }
    let ratio = (max - min) / step;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
        return Err(SweepError::InvalidGrid(format!(
            "({name}_max - {name}_min) / {name}_step = {ratio} is not a whole number"
        )));
    }
    Ok(ratio.round() as usize + 1)
}

/// Value of point `i` on an axis of `n` points, measured from the axis centre
/// so that grids symmetric about zero hold exactly negated pairs.
fn axis_value(min: f64, max: f64, step: f64, n: usize, i: usize) -> f64 {
    let centre = 0.5 * (min + max);
    centre + (i as f64 - 0.5 * (n as f64 - 1.0)) * step
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        self.dims().map(|_| ())
    }

    /// `(n_x0, n_v0)`, endpoints inclusive.
    pub fn dims(&self) -> Result<(usize, usize), SweepError> {
        Ok((
            axis_len("x0", self.x0_min, self.x0_max, self.x0_step)?,
            axis_len("v0", self.v0_min, self.v0_max, self.v0_step)?,
        ))
    }

    pub fn cell_count(&self) -> Result<usize, SweepError> {
        self.dims().map(|(a, b)| a * b)
    }

    pub fn x0(&self, i: usize) -> f64 {
        let (n, _) = self.dims().expect("validated grid");
        axis_value(self.x0_min, self.x0_max, self.x0_step, n, i)
    }

    pub fn v0(&self, j: usize) -> f64 {
        let (_, n) = self.dims().expect("validated grid");
        axis_value(self.v0_min, self.v0_max, self.v0_step, n, j)
    }
}

/// Outcome of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub label: RecoveryLabel,
    pub settle_time: Option<f64>,
    /// Largest |CoP| over the deciding attempt, m.
    pub max_cop: f64,
    pub blowup: bool,
}

/// Labels over the grid, stored x0-major: cell `(i, j)` is at `i * n_v0 + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    pub model: ModelKind,
    pub grid: GridSpec,
    pub n_x0: usize,
    pub n_v0: usize,
    pub cells: Vec<Cell>,
}

impl RegionMap {
    pub fn cell(&self, i_x0: usize, i_v0: usize) -> &Cell {
        &self.cells[i_x0 * self.n_v0 + i_v0]
    }

    pub fn label(&self, i_x0: usize, i_v0: usize) -> RecoveryLabel {
        self.cell(i_x0, i_v0).label
    }

    pub fn count(&self, label: RecoveryLabel) -> usize {
        self.cells.iter().filter(|c| c.label == label).count()
    }

    pub fn stable_count(&self) -> usize {
        self.cells.iter().filter(|c| c.label.is_stable()).count()
    }

    /// `(i_x0, i_v0, x0, v0, cell)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64, f64, &Cell)> + '_ {
        self.cells.iter().enumerate().map(move |(k, c)| {
            let (i, j) = (k / self.n_v0, k % self.n_v0);
            (i, j, self.grid.x0(i), self.grid.v0(j), c)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Everything a sweep needs besides the model and grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepContext {
    pub params: RobotParams,
    pub sim: SimConfig,
    pub bundle: PolicyBundle,
    pub pose: SwingPose,
}

impl SweepContext {
    pub fn with_defaults() -> Self {
        let params = RobotParams::default();
        let bundle = PolicyBundle::for_params(&params);
        let pose = SwingPose::mid_stance(&params, crate::planner::DEFAULT_APEX_HEIGHT);
        Self { params, sim: SimConfig::default(), bundle, pose }
    }
}

/// Classifies one initial condition. Failures are recorded in the cell, never
/// propagated.
pub fn evaluate_cell(model: ModelKind, x0: f64, v0: f64, ctx: &SweepContext) -> Cell {
    let unstable = Cell { label: RecoveryLabel::Unstable, settle_time: None, max_cop: 0.0, blowup: true };
    let Ok(initial) = ModelState::from_com(model, x0, v0, &ctx.params) else {
        return unstable;
    };
    match classify(&initial, &ctx.params, &ctx.sim, &ctx.bundle, &ctx.pose) {
        Ok(c) => Cell {
            label: c.label,
            settle_time: c.settle_time(),
            max_cop: c.deciding().max_zmp_excursion,
            blowup: c.blowup(),
        },
        Err(_) => unstable,
    }
}

pub fn run_grid(
    model: ModelKind,
    grid: &GridSpec,
    ctx: &SweepContext,
    exec: Execution,
) -> Result<RegionMap, SweepError> {
    let (n_x0, n_v0) = grid.dims()?;
    ctx.params.validate().map_err(|e| SweepError::InvalidGrid(e.to_string()))?;
    ctx.sim.validate()?;
    ctx.bundle.validate(&ctx.params).map_err(SweepError::InvalidPolicy)?;

    let eval = |k: usize| {
        let (i, j) = (k / n_v0, k % n_v0);
        evaluate_cell(model, grid.x0(i), grid.v0(j), ctx)
    };
    let cells = match exec {
        Execution::Sequential => (0..n_x0 * n_v0).map(eval).collect(),
        Execution::Parallel => collect_parallel(n_x0 * n_v0, eval),
    };
    Ok(RegionMap { model, grid: *grid, n_x0, n_v0, cells })
}

#[cfg(feature = "parallel")]
fn collect_parallel<F>(n: usize, eval: F) -> Vec<Cell>
where
    F: Fn(usize) -> Cell + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(eval).collect()
}

#[cfg(not(feature = "parallel"))]
fn collect_parallel<F>(n: usize, eval: F) -> Vec<Cell>
where
    F: Fn(usize) -> Cell,
{
    (0..n).map(eval).collect()
}

/// Runs `f` with at most `jobs` worker threads (0 means the default pool).
#[cfg(feature = "parallel")]
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_jobs<T: Send>(_jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    f()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub stable_cells: usize,
    pub ankle_cells: usize,
    pub hip_cells: usize,
    pub unstable_cells: usize,
    pub stable_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    /// Ordered by stable-cell count, most stable first; ties keep model order.
    pub rows: Vec<ModelSummary>,
}

impl SweepSummary {
    pub fn get(&self, model: ModelKind) -> Option<&ModelSummary> {
        self.rows.iter().find(|r| r.model == model)
    }
}

pub fn summarize(maps: &[RegionMap]) -> Result<SweepSummary, SweepError> {
    if let Some(first) = maps.first() {
        if maps.iter().any(|m| m.grid != first.grid) {
            return Err(SweepError::MismatchedGrids);
        }
    }
    let mut rows: Vec<ModelSummary> = maps
        .iter()
        .map(|m| {
            let total = m.cells.len();
            let stable = m.stable_count();
            ModelSummary {
                model: m.model,
                stable_cells: stable,
                ankle_cells: m.count(RecoveryLabel::StableAnkle),
                hip_cells: m.count(RecoveryLabel::StableHip),
                unstable_cells: m.count(RecoveryLabel::Unstable),
                stable_fraction: if total == 0 { 0.0 } else { stable as f64 / total as f64 },
            }
        })
        .collect();
    rows.sort_by(|a, b| b.stable_cells.cmp(&a.stable_cells).then(a.model.cmp(&b.model)));
    Ok(SweepSummary { rows })
}
