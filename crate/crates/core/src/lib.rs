//! Simplified humanoid balance models and push-recovery region mapping.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: robot parameters, the six point-mass models and ZMP helpers.
//! * [`integrator`]: fixed-step RK4 simulation with settle/fall detection.
//! * [`planner`]: footsteps, ZMP reference, swing trajectories, the walking
//!   state machine and the iterative multi-mass COM solver.
//! * [`recovery`]: ankle and hip strategies and per-run classification.
//! * [`sweep`]: initial-condition grids, region maps and summaries.
//! * [`cli`]: configuration parsing, artifact writers and the commands behind
//!   the `balance` binary.

// `!(v > 0.0)` is used on purpose so that NaN fails validation; the walk
// assembly indexes several parallel per-sample arrays by one counter.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dynamics;
pub mod integrator;
pub mod planner;
pub mod recovery;
pub mod sweep;
