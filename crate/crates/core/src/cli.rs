//! Command-line front end: configuration, sweep orchestration and artifact
//! writers.
//!
//! Configuration is a TOML file with the sections `robot`, `sim`, `grid`,
//! `step`, `policy` and `output`. Every key is optional; an empty file gives
//! the default robot and protocol. Unknown sections or keys, wrong value types
//! and violated invariants are reported with the line of the offending key.
//!
//! All numbers are written with 9 significant digits, so repeated runs with
//! the same configuration produce byte-identical CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;
use toml::de::{DeTable, DeValue};

use crate::dynamics::{ModelKind, ModelState, RobotParams};
use crate::integrator::{SimConfig, Termination};
use crate::planner::{plan_walk, SolverSettings, StepParams, WalkPlan, DEFAULT_APEX_HEIGHT};
use crate::recovery::{classify, PolicyBundle, RecoveryLabel};
use crate::sweep::{run_grid, summarize, with_jobs, Execution, GridSpec, RegionMap, SweepContext, SweepSummary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    /// Process exit status: 1 configuration, 2 I/O, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

/// A configuration problem, located by line (1-based; 0 when the problem is
/// not tied to one line) and key.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {key}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Svg,
    Both,
}

impl OutputFormat {
    fn csv(self) -> bool {
        self != OutputFormat::Svg
    }

    fn svg(self) -> bool {
        self != OutputFormat::Csv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: RobotParams,
    pub sim: SimConfig,
    pub grid: GridSpec,
    pub step: StepParams,
    pub policy: PolicyBundle,
    pub apex_height: f64,
    pub solver: SolverSettings,
    /// Models named in the file; empty means the command's default.
    pub models: Vec<ModelKind>,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    /// Worker threads for sweeps; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let params = RobotParams::default();
        let policy = PolicyBundle::for_params(&params);
        Self {
            params,
            sim: SimConfig::default(),
            grid: GridSpec::default(),
            step: StepParams::default(),
            policy,
            apex_height: DEFAULT_APEX_HEIGHT,
            solver: SolverSettings::default(),
            models: Vec::new(),
            out_dir: PathBuf::from("out"),
            format: OutputFormat::Both,
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn sweep_context(&self) -> SweepContext {
        SweepContext {
            params: self.params.clone(),
            sim: self.sim.clone(),
            bundle: self.policy.clone(),
            pose: crate::dynamics::SwingPose::mid_stance(&self.params, self.apex_height),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// One `key = value` entry, flattened out of the parsed document.
struct Entry<'a> {
    line: usize,
    value: &'a DeValue<'a>,
}

struct Section<'a> {
    name: &'static str,
    entries: BTreeMap<String, Entry<'a>>,
    /// Keys seen, with their lines, for invariant diagnostics.
    lines: BTreeMap<String, usize>,
}

impl<'a> Section<'a> {
    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.lines.get(key).copied().unwrap_or(0),
            key: format!("{}.{}", self.name, key),
            message: message.into(),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn f64(&self, key: &str, target: &mut f64) -> Result<(), ConfigError> {
        let Some(e) = self.entries.get(key) else { return Ok(()) };
        let v = match e.value {
            DeValue::Float(f) => f.as_str().replace('_', "").parse::<f64>().ok(),
            DeValue::Integer(i) if i.radix() == 10 => i.as_str().replace('_', "").parse::<f64>().ok(),
            _ => None,
        };
        match v {
            Some(v) => {
                *target = v;
                Ok(())
            }
            None => Err(self.err(key, format!("expected a number, found {}", e.value.type_str()))),
        }
    }

    fn usize(&self, key: &str, target: &mut usize) -> Result<(), ConfigError> {
        let Some(e) = self.entries.get(key) else { return Ok(()) };
        let parsed = match e.value {
            DeValue::Integer(i) => i64::from_str_radix(&i.as_str().replace('_', ""), i.radix()).ok(),
            _ => None,
        };
        match parsed {
            Some(v) if v >= 0 => {
                *target = v as usize;
                Ok(())
            }
            Some(v) => Err(self.err(key, format!("must be >= 0, got {v}"))),
            None => Err(self.err(key, format!("expected an integer, found {}", e.value.type_str()))),
        }
    }

    fn bool(&self, key: &str, target: &mut bool) -> Result<(), ConfigError> {
        let Some(e) = self.entries.get(key) else { return Ok(()) };
        match e.value.as_bool() {
            Some(b) => {
                *target = b;
                Ok(())
            }
            None => Err(self.err(key, format!("expected a boolean, found {}", e.value.type_str()))),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&'a str>, ConfigError> {
        let Some(e) = self.entries.get(key) else { return Ok(None) };
        e.value
            .as_str()
            .map(Some)
            .ok_or_else(|| self.err(key, format!("expected a string, found {}", e.value.type_str())))
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    /// Maps an invariant message back to the first key it names.
    fn locate(&self, message: String) -> ConfigError {
        let key = self
            .lines
            .keys()
            .filter(|k| message.contains(k.as_str()))
            .max_by_key(|k| k.len())
            .cloned();
        match key {
            Some(k) => self.err(&k, message),
            None => ConfigError { line: 0, key: self.name.to_string(), message },
        }
    }
}

const ROBOT_KEYS: &[&str] = &[
    "body_mass",
    "thigh_mass",
    "shin_mass",
    "foot_mass",
    "com_height",
    "com_height_min",
    "com_height_max",
    "pendulum_length",
    "thigh_length",
    "shin_length",
    "foot_length",
    "flywheel_torque_max",
    "com_vertical_accel_max",
    "gravity",
    "flywheel_inertia",
    "pendulum_inertia",
    "flywheel_mass",
    "pendulum_mass",
    "pendulum_com_distance",
    "flywheel_angle_max",
    "ankle_torque_max",
];
const SIM_KEYS: &[&str] = &[
    "dt",
    "t_max",
    "settle_pos_tol",
    "settle_vel_tol",
    "settle_angle_tol",
    "settle_rate_tol",
    "settle_dwell",
    "fall_angle",
    "fall_offset",
];
const GRID_KEYS: &[&str] = &["x0_min", "x0_max", "x0_step", "v0_min", "v0_max", "v0_step"];
const STEP_KEYS: &[&str] = &[
    "step_length",
    "step_width",
    "single_support",
    "double_support",
    "init_duration",
    "max_step_length",
    "min_feet_distance",
    "apex_height",
    "solver_tol",
    "solver_max_iter",
];
const POLICY_KEYS: &[&str] = &[
    "cop_gain",
    "cop_limit",
    "hip_enabled",
    "flywheel_torque_limit",
    "flywheel_angle_limit",
    "unwind_frequency",
    "hip_margin",
    "vertical_modulation",
];
const OUTPUT_KEYS: &[&str] = &["dir", "format", "models", "jobs"];
const SECTIONS: [(&str, &[&str]); 6] = [
    ("robot", ROBOT_KEYS),
    ("sim", SIM_KEYS),
    ("grid", GRID_KEYS),
    ("step", STEP_KEYS),
    ("policy", POLICY_KEYS),
    ("output", OUTPUT_KEYS),
];

/// Parses a configuration file. Unspecified keys keep their defaults;
/// quantities derived from the robot geometry (pendulum mass and inertia,
/// ankle torque bound, CoP limit, ...) follow the overridden values unless
/// they are set explicitly.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let doc = DeTable::parse(text).map_err(|e| ConfigError {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        key: "syntax".into(),
        message: e.message().to_string(),
    })?;
    let root = doc.get_ref();

    for (name, value) in root.iter() {
        let line = line_of(text, name.span().start);
        if !SECTIONS.iter().any(|(s, _)| *s == name.get_ref().as_ref()) {
            return Err(ConfigError { line, key: name.get_ref().to_string(), message: "unknown section".into() });
        }
        if !value.get_ref().is_table() {
            return Err(ConfigError {
                line,
                key: name.get_ref().to_string(),
                message: format!("expected a section, found {}", value.get_ref().type_str()),
            });
        }
    }

    let mut sections: BTreeMap<&'static str, Section> = BTreeMap::new();
    for (name, allowed) in SECTIONS {
        let mut section = Section { name, entries: BTreeMap::new(), lines: BTreeMap::new() };
        if let Some(table) = root.get(name).and_then(|v| v.get_ref().as_table()) {
            for (key, value) in table.iter() {
                let line = line_of(text, key.span().start);
                let k = key.get_ref().to_string();
                if !allowed.contains(&k.as_str()) {
                    return Err(ConfigError { line, key: format!("{name}.{k}"), message: "unknown key".into() });
                }
                section.lines.insert(k.clone(), line);
                section.entries.insert(k, Entry { line, value: value.get_ref() });
            }
        }
        sections.insert(name, section);
    }
    let robot = &sections["robot"];
    let sim_s = &sections["sim"];
    let grid_s = &sections["grid"];
    let step_s = &sections["step"];
    let policy_s = &sections["policy"];
    let output = &sections["output"];

    let mut p = RobotParams::default();
    let fields: [(&str, &mut f64); 21] = [
        ("body_mass", &mut p.body_mass),
        ("thigh_mass", &mut p.thigh_mass),
        ("shin_mass", &mut p.shin_mass),
        ("foot_mass", &mut p.foot_mass),
        ("com_height", &mut p.com_height),
        ("com_height_min", &mut p.com_height_min),
        ("com_height_max", &mut p.com_height_max),
        ("pendulum_length", &mut p.pendulum_length),
        ("thigh_length", &mut p.thigh_length),
        ("shin_length", &mut p.shin_length),
        ("foot_length", &mut p.foot_length),
        ("flywheel_torque_max", &mut p.flywheel_torque_max),
        ("com_vertical_accel_max", &mut p.com_vertical_accel_max),
        ("gravity", &mut p.gravity),
        ("flywheel_inertia", &mut p.flywheel_inertia),
        ("pendulum_inertia", &mut p.pendulum_inertia),
        ("flywheel_mass", &mut p.flywheel_mass),
        ("pendulum_mass", &mut p.pendulum_mass),
        ("pendulum_com_distance", &mut p.pendulum_com_distance),
        ("flywheel_angle_max", &mut p.flywheel_angle_max),
        ("ankle_torque_max", &mut p.ankle_torque_max),
    ];
    for (key, target) in fields {
        robot.f64(key, target)?;
    }
    let leg = p.thigh_mass + p.shin_mass + p.foot_mass;
    if !robot.has("pendulum_mass") {
        p.pendulum_mass = leg;
    }
    if !robot.has("flywheel_mass") {
        p.flywheel_mass = p.body_mass;
    }
    if !robot.has("pendulum_com_distance") {
        p.pendulum_com_distance = p.pendulum_length / 2.0;
    }
    if !robot.has("pendulum_inertia") {
        p.pendulum_inertia = p.pendulum_mass * p.pendulum_length * p.pendulum_length / 3.0;
    }
    if !robot.has("ankle_torque_max") {
        p.ankle_torque_max = (p.body_mass + leg) * p.gravity * p.foot_length / 2.0;
    }
    p.validate().map_err(|e| robot.locate(e.to_string()))?;

    let mut sim = SimConfig::default();
    let fields: [(&str, &mut f64); 9] = [
        ("dt", &mut sim.dt),
        ("t_max", &mut sim.t_max),
        ("settle_pos_tol", &mut sim.settle_pos_tol),
        ("settle_vel_tol", &mut sim.settle_vel_tol),
        ("settle_angle_tol", &mut sim.settle_angle_tol),
        ("settle_rate_tol", &mut sim.settle_rate_tol),
        ("settle_dwell", &mut sim.settle_dwell),
        ("fall_angle", &mut sim.fall_angle),
        ("fall_offset", &mut sim.fall_offset),
    ];
    for (key, target) in fields {
        sim_s.f64(key, target)?;
    }
    sim.validate().map_err(|e| sim_s.locate(e.to_string()))?;

    let mut grid = GridSpec::default();
    let fields: [(&str, &mut f64); 6] = [
        ("x0_min", &mut grid.x0_min),
        ("x0_max", &mut grid.x0_max),
        ("x0_step", &mut grid.x0_step),
        ("v0_min", &mut grid.v0_min),
        ("v0_max", &mut grid.v0_max),
        ("v0_step", &mut grid.v0_step),
    ];
    for (key, target) in fields {
        grid_s.f64(key, target)?;
    }
    grid.validate().map_err(|e| grid_s.locate(e.to_string()))?;

    let mut step = StepParams::default();
    let mut apex_height = DEFAULT_APEX_HEIGHT;
    let mut solver = SolverSettings { dt: sim.dt, ..Default::default() };
    let fields: [(&str, &mut f64); 9] = [
        ("step_length", &mut step.step_length),
        ("step_width", &mut step.step_width),
        ("single_support", &mut step.single_support),
        ("double_support", &mut step.double_support),
        ("init_duration", &mut step.init_duration),
        ("max_step_length", &mut step.max_step_length),
        ("min_feet_distance", &mut step.min_feet_distance),
        ("apex_height", &mut apex_height),
        ("solver_tol", &mut solver.tol),
    ];
    for (key, target) in fields {
        step_s.f64(key, target)?;
    }
    if !step_s.has("init_duration") {
        step.init_duration = step.double_support;
    }
    step_s.usize("solver_max_iter", &mut solver.max_iter)?;
    step.validate().map_err(|e| step_s.locate(e.to_string()))?;
    solver.validate().map_err(|e| step_s.locate(e.to_string().replace("tol", "solver_tol")))?;
    if !(apex_height.is_finite() && apex_height >= 0.0) {
        return Err(step_s.err("apex_height", format!("must be >= 0, got {apex_height}")));
    }

    let mut policy = PolicyBundle::for_params(&p);
    let fields: [(&str, &mut f64); 5] = [
        ("cop_gain", &mut policy.cop_gain),
        ("cop_limit", &mut policy.cop_limit),
        ("flywheel_torque_limit", &mut policy.flywheel_torque_limit),
        ("flywheel_angle_limit", &mut policy.flywheel_angle_limit),
        ("unwind_frequency", &mut policy.unwind_frequency),
    ];
    for (key, target) in fields {
        policy_s.f64(key, target)?;
    }
    policy_s.f64("hip_margin", &mut policy.hip_margin)?;
    policy_s.bool("hip_enabled", &mut policy.hip_enabled)?;
    policy_s.bool("vertical_modulation", &mut policy.vertical_modulation)?;
    policy.validate(&p).map_err(|e| policy_s.locate(e))?;

    let mut cfg = RunConfig { params: p, sim, grid, step, policy, apex_height, solver, ..Default::default() };
    if let Some(dir) = output.str("dir")? {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Some(f) = output.str("format")? {
        cfg.format = OutputFormat::from_str(f, true)
            .map_err(|_| output.err("format", format!("expected csv, svg or both, got {f:?}")))?;
    }
    output.usize("jobs", &mut cfg.jobs)?;
    if let Some(e) = output.entries.get("models") {
        let Some(arr) = e.value.as_array() else {
            return Err(output.err("models", format!("expected an array of model names, found {}", e.value.type_str())));
        };
        for item in arr.iter() {
            let name = item
                .get_ref()
                .as_str()
                .ok_or_else(|| output.err("models", "model names must be strings"))?;
            let kind = name.parse::<ModelKind>().map_err(|e| ConfigError {
                line: line_of(text, item.span().start),
                key: "output.models".into(),
                message: e.to_string(),
            })?;
            cfg.models.push(kind);
        }
        debug_assert!(output.line("models") > 0);
    }
    Ok(cfg)
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// exponent notation outside `[1e-5, 1e9)`.
pub fn format_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    fn trim(s: &str) -> &str {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.')
        } else {
            s
        }
    }
    if !(-5..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}")).to_string()
    }
}

fn opt_g(v: Option<f64>) -> String {
    v.map(format_g).unwrap_or_default()
}

pub fn region_csv(map: &RegionMap) -> String {
    let mut s = String::from("model,x0,v0,label,settle_time\n");
    for (_, _, x0, v0, cell) in map.iter() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            map.model.name(),
            format_g(x0),
            format_g(v0),
            cell.label.name(),
            opt_g(cell.settle_time)
        );
    }
    s
}

pub fn summary_csv(summary: &SweepSummary) -> String {
    let mut s = String::from("model,stable_cells,ankle_cells,hip_cells,unstable_cells,stable_fraction\n");
    for r in &summary.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.model.name(),
            r.stable_cells,
            r.ankle_cells,
            r.hip_cells,
            r.unstable_cells,
            format_g(r.stable_fraction)
        );
    }
    s
}

pub fn summary_table(summary: &SweepSummary) -> String {
    let mut s = format!("{:<8} {:>7} {:>7} {:>7} {:>9} {:>9}\n", "model", "stable", "ankle", "hip", "unstable", "fraction");
    for r in &summary.rows {
        let _ = writeln!(
            s,
            "{:<8} {:>7} {:>7} {:>7} {:>9} {:>9.4}",
            r.model.name(),
            r.stable_cells,
            r.ankle_cells,
            r.hip_cells,
            r.unstable_cells,
            r.stable_fraction
        );
    }
    s
}

pub const COLOR_UNSTABLE: &str = "#f2d21b";
pub const COLOR_STABLE_ANKLE: &str = "#1f7a32";
pub const COLOR_STABLE_HIP: &str = "#8fd694";

fn label_color(label: RecoveryLabel) -> &'static str {
    match label {
        RecoveryLabel::Unstable => COLOR_UNSTABLE,
        RecoveryLabel::StableAnkle => COLOR_STABLE_ANKLE,
        RecoveryLabel::StableHip => COLOR_STABLE_HIP,
    }
}

/// Region map as an SVG heat map: initial position across, initial velocity
/// upwards.
pub fn region_svg(map: &RegionMap) -> String {
    let cell = 24.0;
    let (left, top, bottom, right) = (70.0, 40.0, 50.0, 150.0);
    let w = map.n_x0 as f64 * cell;
    let h = map.n_v0 as f64 * cell;
    let (width, height) = (left + w + right, top + h + bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{} stability region</text>"#,
        left + w / 2.0,
        map.model.name()
    );
    for (i, j, x0, v0, c) in map.iter() {
        let x = left + i as f64 * cell;
        let y = top + (map.n_v0 - 1 - j) as f64 * cell;
        let _ = writeln!(
            s,
            r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" stroke="#ffffff" stroke-width="0.5"><title>x0={} v0={} {}</title></rect>"##,
            label_color(c.label),
            format_g(x0),
            format_g(v0),
            c.label.name()
        );
    }
    for i in (0..map.n_x0).step_by(5.max(map.n_x0 / 5).min(map.n_x0.max(1))) {
        let x = left + (i as f64 + 0.5) * cell;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            top + h + 16.0,
            format_g(map.grid.x0(i))
        );
    }
    for j in 0..map.n_v0 {
        let y = top + (map.n_v0 - 1 - j) as f64 * cell + cell / 2.0 + 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, left - 6.0, format_g(map.grid.v0(j)));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">initial position x0 (m)</text>"#,
        left + w / 2.0,
        top + h + 36.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">initial velocity v0 (m/s)</text>"#,
        top + h / 2.0,
        top + h / 2.0
    );
    let legend = [
        (RecoveryLabel::StableAnkle, "stable (ankle)"),
        (RecoveryLabel::StableHip, "stable (hip)"),
        (RecoveryLabel::Unstable, "unstable"),
    ];
    for (k, (label, text)) in legend.iter().enumerate() {
        let y = top + k as f64 * 20.0;
        let x = left + w + 14.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="14" height="14" fill="{}"/>"#, label_color(*label));
        let _ = writeln!(s, r#"<text x="{}" y="{}">{text}</text>"#, x + 20.0, y + 11.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Time series of one classified run. The `status` column reads `running`
/// until the last row, which carries the run's termination.
pub fn trace_csv(kind: ModelKind, outcome: &crate::integrator::SimOutcome) -> String {
    let names = kind.component_names();
    let mut s = String::from("t");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push_str(",p_x,tau_a,tau_w,zc_dd,status\n");
    let n = outcome.trajectory.samples.len();
    for (k, sample) in outcome.trajectory.samples.iter().enumerate() {
        s.push_str(&format_g(sample.t));
        for c in &sample.state.components()[..names.len()] {
            s.push(',');
            s.push_str(&format_g(*c));
        }
        let status = if k + 1 == n { outcome.termination.name() } else { "running" };
        let i = &sample.inputs;
        let _ = writeln!(
            s,
            ",{},{},{},{},{}",
            format_g(sample.p_x),
            format_g(i.tau_a),
            format_g(i.tau_w),
            format_g(i.zc_dd),
            status
        );
    }
    s
}

pub fn walk_csv(plan: &WalkPlan) -> String {
    let mut s = String::from(
        "t,phase,step,support,com_x,com_x_dot,com_y,zmp_ref_x,zmp_ref_y,zmp_x,swing_x,swing_y,swing_z\n",
    );
    for r in &plan.samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            format_g(r.t),
            r.state.phase.name(),
            r.state.step,
            r.state.support.name(),
            format_g(r.com_x),
            format_g(r.com_x_dot),
            format_g(r.com_y),
            format_g(r.zmp_ref_x),
            format_g(r.zmp_ref_y),
            format_g(r.zmp_x),
            format_g(r.swing[0]),
            format_g(r.swing[1]),
            format_g(r.swing[2])
        );
    }
    s
}

#[derive(Debug, Parser)]
#[command(name = "balance", version, about = "Humanoid balance models, push recovery and stability-region sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (TOML sections robot, sim, grid, step, policy, output).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Model to run (IP, LIPM, TMIPM, MMIPM, LIPPFM, ELIPPFM); repeatable.
    #[arg(long = "model", global = true, value_name = "NAME")]
    pub models: Vec<ModelKind>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Which sweep artifacts to write.
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify the initial-condition grid for each model and summarize.
    Sweep,
    /// Simulate and classify a single initial condition.
    Trace {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        x0: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        v0: f64,
    },
    /// Plan a nominal walk.
    Walk {
        #[arg(long, default_value_t = 4)]
        steps: usize,
    },
}

/// Loads the configuration file (if any) and applies command-line overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if !cli.models.is_empty() {
        cfg.models = cli.models.clone();
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })
}

fn file_stem(kind: ModelKind) -> String {
    kind.name().to_lowercase()
}

/// Runs every selected model over the grid, returning the maps in model order.
pub fn sweep_maps(cfg: &RunConfig, models: &[ModelKind]) -> Result<Vec<RegionMap>, CliError> {
    let ctx = cfg.sweep_context();
    with_jobs(cfg.jobs, || {
        models
            .iter()
            .map(|&m| run_grid(m, &cfg.grid, &ctx, Execution::Parallel))
            .collect::<Result<Vec<_>, _>>()
    })
    .map_err(|e| CliError::Config(ConfigError { line: 0, key: "sweep".into(), message: e.to_string() }))
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepSummary, CliError> {
    let models = if cfg.models.is_empty() { ModelKind::ALL.to_vec() } else { cfg.models.clone() };
    let start = Instant::now();
    let maps = sweep_maps(cfg, &models)?;
    let elapsed = start.elapsed();
    let summary = summarize(&maps)
        .map_err(|e| CliError::Config(ConfigError { line: 0, key: "grid".into(), message: e.to_string() }))?;
    ensure_dir(&cfg.out_dir)?;
    for map in &maps {
        let stem = file_stem(map.model);
        if cfg.format.csv() {
            write_file(&cfg.out_dir.join(format!("region_{stem}.csv")), &region_csv(map))?;
        }
        if cfg.format.svg() {
            write_file(&cfg.out_dir.join(format!("region_{stem}.svg")), &region_svg(map))?;
        }
    }
    write_file(&cfg.out_dir.join("summary.csv"), &summary_csv(&summary))?;
    print!("{}", summary_table(&summary));
    println!(
        "{} models x {} cells in {:.2} s -> {}",
        maps.len(),
        maps.first().map_or(0, |m| m.cells.len()),
        elapsed.as_secs_f64(),
        cfg.out_dir.display()
    );
    Ok(summary)
}

pub fn cmd_trace(cfg: &RunConfig, x0: f64, v0: f64) -> Result<Vec<(ModelKind, RecoveryLabel, Termination)>, CliError> {
    if !(x0.is_finite() && v0.is_finite()) {
        return Err(CliError::Config(ConfigError {
            line: 0,
            key: "trace".into(),
            message: format!("initial condition must be finite, got ({x0}, {v0})"),
        }));
    }
    let models = if cfg.models.is_empty() { vec![ModelKind::Lipm] } else { cfg.models.clone() };
    let ctx = cfg.sweep_context();
    ensure_dir(&cfg.out_dir)?;
    let mut results = Vec::new();
    for model in models {
        let initial = ModelState::from_com(model, x0, v0, &cfg.params).map_err(|e| {
            CliError::Config(ConfigError { line: 0, key: "trace".into(), message: e.to_string() })
        })?;
        let c = classify(&initial, &cfg.params, &cfg.sim, &cfg.policy, &ctx.pose)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let outcome = c.deciding();
        let path = cfg.out_dir.join(format!("trace_{}.csv", file_stem(model)));
        write_file(&path, &trace_csv(model, outcome))?;
        println!(
            "{} x0={} v0={}: {} ({}), settle_time={} -> {}",
            model.name(),
            format_g(x0),
            format_g(v0),
            c.label.name(),
            outcome.termination.name(),
            opt_g(c.settle_time()),
            path.display()
        );
        results.push((model, c.label, outcome.termination));
    }
    Ok(results)
}

pub fn cmd_walk(cfg: &RunConfig, n_steps: usize) -> Result<Vec<WalkPlan>, CliError> {
    if n_steps == 0 {
        return Err(CliError::Config(ConfigError { line: 0, key: "steps".into(), message: "must be >= 1".into() }));
    }
    let models = if cfg.models.is_empty() { vec![ModelKind::Mmipm] } else { cfg.models.clone() };
    ensure_dir(&cfg.out_dir)?;
    let mut plans = Vec::new();
    for model in models {
        let plan = plan_walk(model, &cfg.step, n_steps, cfg.apex_height, &cfg.params, &cfg.solver).map_err(|e| match e {
            crate::planner::PlanError::InvalidStep(m) | crate::planner::PlanError::InvalidProfile(m) => {
                CliError::Config(ConfigError { line: 0, key: "step".into(), message: m })
            }
            other => CliError::Numeric(other.to_string()),
        })?;
        let path = cfg.out_dir.join(format!("walk_{}.csv", file_stem(model)));
        write_file(&path, &walk_csv(&plan))?;
        let worst = plan.samples.iter().map(|r| (r.zmp_x - r.zmp_ref_x).abs()).fold(0.0, f64::max);
        println!(
            "{} {} steps: {} iterations, residual {}, max ZMP tracking error {} m -> {}",
            model.name(),
            n_steps,
            plan.iterations,
            format_g(plan.residual),
            format_g(worst),
            path.display()
        );
        plans.push(plan);
    }
    Ok(plans)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Sweep => cmd_sweep(&cfg).map(|_| ()),
        Command::Trace { x0, v0 } => cmd_trace(&cfg, x0, v0).map(|_| ()),
        Command::Walk { steps } => cmd_walk(&cfg, steps).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.params.body_mass, 7.0);
        assert_eq!(cfg.grid.cell_count().unwrap(), 231);
    }

    #[test]
    fn grid_override_changes_cardinality() {
        let cfg = parse_config("[grid]\nx0_step = 0.04\n").unwrap();
        assert_eq!(cfg.grid.dims().unwrap(), (11, 11));
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = parse_config("[robot]\n\nbody_mass = -1.0\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert_eq!(e.key, "robot.body_mass");
        let e = parse_config("[robot]\nbody_mas = 1.0\n").unwrap_err();
        assert_eq!((e.line, e.message.as_str()), (2, "unknown key"));
        let e = parse_config("[sim]\ndt = \"fast\"\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("number"), "{e}");
        let e = parse_config("[grid]\nx0_step = 0.03\n").unwrap_err();
        assert_eq!(e.key, "grid.x0_step");
        let e = parse_config("[bogus]\n").unwrap_err();
        assert_eq!(e.message, "unknown section");
        let e = parse_config("[output]\nmodels = [\"LIPM\",\n  \"XYZ\"]\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_config("[robot\n").unwrap_err();
        assert_eq!(e.key, "syntax");
    }

    #[test]
    fn derived_quantities_follow_overrides() {
        let cfg = parse_config("[robot]\nfoot_length = 0.08\nthigh_mass = 2\n").unwrap();
        assert_eq!(cfg.policy.cop_limit, 0.04);
        assert_eq!(cfg.params.pendulum_mass, 4.0);
        let cfg = parse_config("[step]\ndouble_support = 0.3\n").unwrap();
        assert_eq!(cfg.step.init_duration, 0.3);
        let cfg = parse_config("[output]\nmodels = [\"lipm\", \"ELIPPFM\"]\nformat = \"csv\"\njobs = 2\n").unwrap();
        assert_eq!(cfg.models, vec![ModelKind::Lipm, ModelKind::Elippfm]);
        assert_eq!((cfg.format, cfg.jobs), (OutputFormat::Csv, 2));
    }

    #[test]
    fn general_format() {
        let cases = [
            (0.0, "0"),
            (0.1, "0.1"),
            (-0.2, "-0.2"),
            (1.0 / 3.0, "0.333333333"),
            (0.23809523809523808, "0.238095238"),
            (1e-7, "1e-07"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.00012345678912, "0.000123456789"),
            (2.5, "2.5"),
            (-0.0, "0"),
        ];
        for (v, s) in cases {
            assert_eq!(format_g(v), s, "{v}");
        }
    }

    #[test]
    fn exit_codes() {
        let io = CliError::Io { path: "x".into(), source: std::io::Error::other("x") };
        assert_eq!(io.exit_code(), 2);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 3);
        assert_eq!(CliError::Config(parse_config("[x]").unwrap_err()).exit_code(), 1);
    }
}
