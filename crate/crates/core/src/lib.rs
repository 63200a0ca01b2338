//! Maximum-entropy deep inverse reinforcement learning on kinematic grid
//! MDPs.
//!
//! The vehicle state is a cell plus one of eight headings. Soft value
//! iteration and state-visitation propagation run as small per-heading
//! convolutions over orientation-stacked planes; the explicit-state solvers
//! in [`soft_vi::reference_value_iteration`] and
//! [`svf::reference_expected_svf`] compute the same quantities with plain
//! loops and serve as oracles.

pub mod error;
mod fastmath;
pub mod grid;
pub mod grid_mdp;
pub mod io_formats;
pub mod irl_trainer;
pub mod planner_eval;
pub mod reward_net;
pub mod scene_synth;
pub mod soft_vi;
pub mod stage_timing;
pub mod svf;

pub use error::{Error, Result};
pub use grid::{Cell, Grid, GridShape, Plane};
pub use grid_mdp::{build_transition_kernels, ActionSet, GoalSpec, OrientationSet, TransitionKernelSet};
pub use irl_trainer::{DemoSample, TrainConfig, TrainReport};
pub use planner_eval::{Pose, TrajRecord, Trajectory};
pub use reward_net::{CostMap, FcnParams, SceneMap};
pub use scene_synth::Behavior;
pub use soft_vi::{PolicyStack, ValueStack};
pub use svf::{InitialDistribution, SvfMap};
