//! Trajectories: sampling and greedy decoding from a policy, reward, and
//! Hausdorff comparison against demonstrations.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Cell, GridShape, Plane};
use crate::grid_mdp::{GoalSpec, TransitionKernelSet};
use crate::irl_trainer::DemoSample;
use crate::soft_vi::PolicyStack;

/// A `(cell, heading)` pair.
pub type Pose = (Cell, usize);

/// One visited state. `action` is the action taken from it, `None` on the
/// final record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajRecord {
    pub t: usize,
    pub row: usize,
    pub col: usize,
    pub orientation: usize,
    pub action: Option<usize>,
}

impl TrajRecord {
    pub fn cell(&self) -> Cell {
        (self.row, self.col)
    }

    pub fn pose(&self) -> Pose {
        (self.cell(), self.orientation)
    }
}

/// Ordered state records, `t` counting from 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    records: Vec<TrajRecord>,
}

impl Trajectory {
    /// Checks numbering and that only the last record lacks an action.
    pub fn new(records: Vec<TrajRecord>) -> Result<Self> {
        let last = records.len().saturating_sub(1);
        for (k, r) in records.iter().enumerate() {
            if r.t != k + 1 {
                return Err(Error::data(format!("record {k} has t={}, expected {}", r.t, k + 1)));
            }
            if (k == last) != r.action.is_none() {
                return Err(Error::data(format!(
                    "record t={} must {}carry an action",
                    r.t,
                    if k == last { "not " } else { "" }
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn empty() -> Self {
        Self { records: Vec::new() }
    }

    /// Builds the records for a pose sequence, recovering each action from
    /// the kernels.
    pub fn from_poses(poses: &[Pose], kernels: &TransitionKernelSet) -> Result<Self> {
        let mut records = Vec::with_capacity(poses.len());
        for (k, &(cell, j)) in poses.iter().enumerate() {
            let action = match poses.get(k + 1) {
                Some(&(next, j_next)) => Some(kernels.action_between(cell, j, next, j_next).ok_or_else(|| {
                    Error::data(format!("no action moves {cell:?}/{j} to {next:?}/{j_next}"))
                })?),
                None => None,
            };
            records.push(TrajRecord {
                t: k + 1,
                row: cell.0,
                col: cell.1,
                orientation: j,
                action,
            });
        }
        Self::new(records)
    }

    pub fn records(&self) -> &[TrajRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of actions taken.
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.records.iter().map(TrajRecord::cell).collect()
    }

    pub fn first(&self) -> Option<&TrajRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TrajRecord> {
        self.records.last()
    }

    pub fn reaches(&self, goal: GoalSpec) -> bool {
        self.last().is_some_and(|r| r.cell() == goal.cell)
    }

    /// Checks bounds and that every action leads to the next record.
    pub fn validate(&self, kernels: &TransitionKernelSet, shape: &GridShape) -> Result<()> {
        for r in &self.records {
            if !shape.contains(r.cell()) || r.orientation >= kernels.num_orientations() {
                return Err(Error::data(format!(
                    "record t={} at {:?}/{} is outside the grid",
                    r.t,
                    r.cell(),
                    r.orientation
                )));
            }
        }
        for w in self.records.windows(2) {
            let a = w[0].action.expect("checked in new");
            if a >= kernels.num_actions() {
                return Err(Error::data(format!("record t={} has unknown action {a}", w[0].t)));
            }
            let next = kernels.step(shape.rows, shape.cols, w[0].cell(), w[0].orientation, a);
            if next != Some(w[1].pose()) {
                return Err(Error::data(format!(
                    "action {a} at t={} does not lead to {:?}/{}",
                    w[0].t,
                    w[1].cell(),
                    w[1].orientation
                )));
            }
        }
        Ok(())
    }
}

fn check_start(policy: &PolicyStack, kernels: &TransitionKernelSet, start: Pose, goal: GoalSpec) -> Result<()> {
    let (rows, cols) = (policy.rows(), policy.cols());
    if start.0 .0 >= rows || start.0 .1 >= cols || start.1 >= kernels.num_orientations() {
        return Err(Error::arg(format!("start {start:?} is outside the grid")));
    }
    if policy.orientations() != kernels.num_orientations() || policy.actions() != kernels.num_actions() {
        return Err(Error::arg("policy and kernels disagree on headings or actions"));
    }
    GoalSpec::new(goal.cell, rows, cols)?;
    Ok(())
}

fn push(records: &mut Vec<TrajRecord>, (cell, j): Pose, action: Option<usize>) {
    records.push(TrajRecord {
        t: records.len() + 1,
        row: cell.0,
        col: cell.1,
        orientation: j,
        action,
    });
}

/// Draws actions from the policy until the goal is reached, `t_max` actions
/// have been taken, or an action would leave the map. A start on the goal
/// yields a single record and no actions.
pub fn sample_trajectory(
    policy: &PolicyStack,
    kernels: &TransitionKernelSet,
    start: Pose,
    goal: GoalSpec,
    t_max: usize,
    seed: u64,
) -> Result<Trajectory> {
    check_start(policy, kernels, start, goal)?;
    if t_max < 1 {
        return Err(Error::arg("t_max must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (policy.rows(), policy.cols());
    let mut records = Vec::new();
    let mut pose = start;
    for _ in 0..t_max {
        if pose.0 == goal.cell {
            break;
        }
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut action = None;
        for i in 0..kernels.num_actions() {
            let p = policy.get(pose.1, i, pose.0);
            if p > 0.0 {
                cum += p;
                action = Some(i);
                if u < cum {
                    break;
                }
            }
        }
        let Some(a) = action else { break };
        let Some(next) = kernels.step(rows, cols, pose.0, pose.1, a) else {
            break;
        };
        push(&mut records, pose, Some(a));
        pose = next;
    }
    push(&mut records, pose, None);
    Trajectory::new(records)
}

/// Follows the most probable action (lowest index on ties) to the goal.
pub fn greedy_plan(
    policy: &PolicyStack,
    kernels: &TransitionKernelSet,
    start: Pose,
    goal: GoalSpec,
    t_max: usize,
) -> Result<Trajectory> {
    check_start(policy, kernels, start, goal)?;
    let (rows, cols) = (policy.rows(), policy.cols());
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut pose = start;
    while pose.0 != goal.cell {
        if records.len() == t_max {
            return Err(Error::Planning(format!("goal not reached within {t_max} steps")));
        }
        if !seen.insert(pose) {
            return Err(Error::Planning(format!("greedy plan revisits {:?}/{}", pose.0, pose.1)));
        }
        let mut best = 0;
        for i in 1..kernels.num_actions() {
            if policy.get(pose.1, i, pose.0) > policy.get(pose.1, best, pose.0) {
                best = i;
            }
        }
        let next = kernels
            .step(rows, cols, pose.0, pose.1, best)
            .ok_or_else(|| Error::Planning(format!("best action at {:?}/{} leaves the map", pose.0, pose.1)))?;
        push(&mut records, pose, Some(best));
        pose = next;
    }
    push(&mut records, pose, None);
    Trajectory::new(records)
}

/// Discounted reward `sum_t gamma^(t-1) R(s_t)` over all records.
pub fn trajectory_reward(reward: &Plane, traj: &Trajectory, gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut w = 1.0;
    for r in traj.records() {
        if r.row >= reward.rows() || r.col >= reward.cols() {
            return Err(Error::data(format!("record t={} is outside the reward map", r.t)));
        }
        total += w * reward.get(r.cell());
        w *= gamma;
    }
    Ok(total)
}

fn directed_hd(a: &[Cell], b: &[Cell]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let dr = p.0 as f64 - q.0 as f64;
                    let dc = p.1 as f64 - q.1 as f64;
                    dr.hypot(dc)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between cell-centre sets, in cells.
pub fn hausdorff_cells(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("Hausdorff distance needs two non-empty trajectories"));
    }
    let (pa, pb) = (a.cells(), b.cells());
    Ok(directed_hd(&pa, &pb).max(directed_hd(&pb, &pa)))
}

/// Symmetric Hausdorff distance in metres.
pub fn hausdorff_distance(a: &Trajectory, b: &Trajectory, resolution_m: f64) -> Result<f64> {
    Ok(hausdorff_cells(a, b)? * resolution_m)
}

/// Default number of sampled trajectories per evaluation.
pub const DEFAULT_EVAL_SAMPLES: usize = 30;

/// One sampled rollout compared against a demo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutEval {
    pub rollout: usize,
    pub hd_m: f64,
    pub hd_cells: f64,
    pub completed: bool,
    pub reward: f64,
}

/// Samples `n` trajectories (seeds `seed`, `seed + 1`, ...) and compares each
/// with the demo. Incomplete rollouts are kept.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_rollouts(
    policy: &PolicyStack,
    kernels: &TransitionKernelSet,
    demo: &DemoSample,
    reward: &Plane,
    n: usize,
    t_max: usize,
    seed: u64,
) -> Result<Vec<RolloutEval>> {
    if n < 1 {
        return Err(Error::arg("need at least one rollout"));
    }
    let res = demo.scene.shape().resolution_m;
    let gamma = kernels.gamma();
    (0..n)
        .into_par_iter()
        .map(|k| {
            let traj = sample_trajectory(policy, kernels, demo.start, demo.goal, t_max, seed.wrapping_add(k as u64))?;
            let hd_cells = hausdorff_cells(&demo.trajectory, &traj)?;
            Ok(RolloutEval {
                rollout: k,
                hd_m: hd_cells * res,
                hd_cells,
                completed: traj.reaches(demo.goal),
                reward: trajectory_reward(reward, &traj, gamma)?,
            })
        })
        .collect()
}

/// Default rollout horizon: generous for any path across the grid.
pub fn default_horizon(shape: &GridShape) -> usize {
    4 * (shape.rows + shape.cols)
}

/// Mean Hausdorff distance (metres) between the demo and `n` sampled
/// trajectories.
pub fn average_hd(
    policy: &PolicyStack,
    kernels: &TransitionKernelSet,
    demo: &DemoSample,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let shape = demo.scene.shape();
    let reward = Plane::zeros(shape.rows, shape.cols);
    let evals = evaluate_rollouts(policy, kernels, demo, &reward, n, default_horizon(&shape), seed)?;
    Ok(evals.iter().map(|e| e.hd_m).sum::<f64>() / n as f64)
}
