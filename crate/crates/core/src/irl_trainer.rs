//! Maximum-entropy deep IRL training loop.
//!
//! Per demonstration: cost from the network, soft value iteration on the
//! negated cost, expected visitation under the resulting policy, and the
//! visitation gap `mu_E - mu_D` as the log-likelihood gradient with respect
//! to cost, which is back-propagated through the network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridShape, Plane};
use crate::grid_mdp::{GoalSpec, TransitionKernelSet, DEFAULT_GAMMA};
use crate::planner_eval::{default_horizon, sample_trajectory, trajectory_reward, Pose, Trajectory};
use crate::reward_net::{adam_step, fcn_backward, fcn_forward, AdamState, FcnParams, SceneMap};
use crate::soft_vi::{soft_value_iteration, ValueStack, DEFAULT_ITERATIONS};
use crate::svf::{expected_svf, InitialDistribution, SvfMap, DEFAULT_STEPS};

/// One scene with its demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSample {
    pub scene: SceneMap,
    pub trajectory: Trajectory,
    pub start: Pose,
    pub goal: GoalSpec,
}

impl DemoSample {
    /// Takes the start pose from the first record and checks the sample.
    pub fn new(scene: SceneMap, trajectory: Trajectory, goal: GoalSpec, kernels: &TransitionKernelSet) -> Result<Self> {
        let start = trajectory
            .first()
            .ok_or_else(|| Error::data("demonstration is empty"))?
            .pose();
        let sample = Self {
            scene,
            trajectory,
            start,
            goal,
        };
        sample.validate(kernels)?;
        Ok(sample)
    }

    /// Trajectory in bounds, kernel-legal, from `start` to `goal`.
    pub fn validate(&self, kernels: &TransitionKernelSet) -> Result<()> {
        let shape = self.scene.shape();
        let first = self
            .trajectory
            .first()
            .ok_or_else(|| Error::data("demonstration is empty"))?;
        if first.pose() != self.start {
            return Err(Error::data(format!(
                "demonstration starts at {:?}, sample says {:?}",
                first.pose(),
                self.start
            )));
        }
        if !shape.contains(self.goal.cell) {
            return Err(Error::data(format!("goal {:?} is outside the grid", self.goal.cell)));
        }
        if !self.trajectory.reaches(self.goal) {
            return Err(Error::data("demonstration does not end at the goal"));
        }
        let visits_goal_early = self.trajectory.records()[..self.trajectory.steps()]
            .iter()
            .any(|r| r.cell() == self.goal.cell);
        if visits_goal_early {
            return Err(Error::data("demonstration passes the goal before its end"));
        }
        self.trajectory.validate(kernels, &shape)
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub value_iters: usize,
    pub svf_iters: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            batch_size: 5,
            lr: 1e-4,
            lr_decay: 0.99,
            value_iters: DEFAULT_ITERATIONS,
            svf_iters: DEFAULT_STEPS,
            gamma: DEFAULT_GAMMA,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::arg(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.value_iters < 1 || self.svf_iters < 1 {
            return Err(Error::arg("value_iters and svf_iters must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::arg(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// One line of the training report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportRow {
    pub iteration: usize,
    pub l1_svf_gap: f64,
    pub mean_nll: f64,
    pub expert_reward: f64,
    pub policy_reward: f64,
}

/// Per-iteration batch means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<ReportRow>,
}

impl TrainReport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn l1_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.l1_svf_gap).collect()
    }
}

/// Centred moving average with the window clipped at the ends.
pub fn smooth(series: &[f64], half_width: usize) -> Vec<f64> {
    (0..series.len())
        .map(|k| {
            let lo = k.saturating_sub(half_width);
            let hi = (k + half_width + 1).min(series.len());
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Visit counts of a trajectory; repeated cells count repeatedly.
pub fn demo_svf(traj: &Trajectory, shape: &GridShape) -> Result<SvfMap> {
    if traj.is_empty() {
        return Err(Error::data("demonstration is empty"));
    }
    let mut mu = Plane::zeros(shape.rows, shape.cols);
    for r in traj.records() {
        if !shape.contains(r.cell()) {
            return Err(Error::data(format!("record t={} at {:?} is outside the grid", r.t, r.cell())));
        }
        mu.set(r.cell(), mu.get(r.cell()) + 1.0);
    }
    Ok(SvfMap::from_plane(mu))
}

/// `mu_E - mu_D`: gradient of the demo log-likelihood with respect to
/// per-cell cost. Training ascends it, lowering cost where the expert goes
/// more often than the policy.
pub fn loss_gradient_wrt_cost(mu_e: &SvfMap, mu_d: &SvfMap) -> Result<Plane> {
    if mu_e.mu().dims() != mu_d.mu().dims() {
        return Err(Error::arg("visitation maps differ in shape"));
    }
    let data = mu_e.mu().data().iter().zip(mu_d.mu().data()).map(|(e, d)| e - d).collect();
    Plane::from_vec(mu_e.rows(), mu_e.cols(), data)
}

/// `log p = sum_t gamma^(t-1) R(s_t) - V(start)` with the sum over every
/// record before the terminal one; `values` must come from soft value
/// iteration on the same reward.
pub fn log_likelihood_from_values(reward: &Plane, values: &ValueStack, traj: &Trajectory, gamma: f64) -> Result<f64> {
    let first = traj.first().ok_or_else(|| Error::data("demonstration is empty"))?;
    let mut total = 0.0;
    let mut w = 1.0;
    for r in &traj.records()[..traj.steps()] {
        if r.row >= reward.rows() || r.col >= reward.cols() {
            return Err(Error::data(format!("record t={} is outside the reward map", r.t)));
        }
        total += w * reward.get(r.cell());
        w *= gamma;
    }
    Ok(total - values.get(first.orientation, first.cell()))
}

/// Demo log-likelihood under reward `reward` after `k` value-iteration sweeps.
pub fn trajectory_log_likelihood(
    reward: &Plane,
    kernels: &TransitionKernelSet,
    demo: &DemoSample,
    k: usize,
) -> Result<f64> {
    let (values, _) = soft_value_iteration(reward, kernels, demo.goal, k)?;
    log_likelihood_from_values(reward, &values, &demo.trajectory, kernels.gamma())
}

/// Everything one sample contributes to an iteration.
#[derive(Debug, Clone)]
pub struct SampleStep {
    /// Gradient of the negative log-likelihood.
    pub grads: FcnParams,
    pub l1_svf_gap: f64,
    pub nll: f64,
    pub expert_reward: f64,
    pub policy_reward: f64,
    pub mu_e: SvfMap,
    pub mu_d: SvfMap,
}

/// Forward, planning, visitation and backward pass for one sample.
pub fn sample_step(
    params: &FcnParams,
    demo: &DemoSample,
    kernels: &TransitionKernelSet,
    config: &TrainConfig,
    rollout_seed: u64,
) -> Result<SampleStep> {
    let shape = demo.scene.shape();
    let (cost, cache) = fcn_forward(params, &demo.scene)?;
    let reward = cost.reward();
    let (values, policy) = soft_value_iteration(&reward, kernels, demo.goal, config.value_iters).map_err(|e| match e {
        Error::Argument(m) => Error::Numeric(m),
        other => other,
    })?;
    let init = InitialDistribution::one_hot(shape.rows, shape.cols, kernels.num_orientations(), demo.start.0, demo.start.1)?;
    let mu_e = expected_svf(&policy, kernels, &init, demo.goal, config.svf_iters)?;
    let mu_d = demo_svf(&demo.trajectory, &shape)?;
    let grad_c = loss_gradient_wrt_cost(&mu_e, &mu_d)?;
    // descent on the negative log-likelihood
    let grads = fcn_backward(params, &cache, &grad_c.map(|g| -g))?;
    let nll = -log_likelihood_from_values(&reward, &values, &demo.trajectory, config.gamma)?;
    let sampled = sample_trajectory(&policy, kernels, demo.start, demo.goal, default_horizon(&shape), rollout_seed)?;
    Ok(SampleStep {
        grads,
        l1_svf_gap: mu_e.l1_distance(&mu_d),
        nll,
        expert_reward: trajectory_reward(&reward, &demo.trajectory, config.gamma)?,
        policy_reward: trajectory_reward(&reward, &sampled, config.gamma)?,
        mu_e,
        mu_d,
    })
}

/// Trains without per-iteration hooks.
pub fn train(config: &TrainConfig, dataset: &[DemoSample], params: FcnParams) -> Result<(FcnParams, TrainReport)> {
    train_with(config, dataset, params, |_, _, _| Ok(()))
}

/// Minibatch Adam training. `on_iteration(iteration, params, row)` runs after
/// every update, e.g. for checkpoints. Batches walk a per-epoch shuffle of
/// the dataset; the learning rate decays once per epoch.
pub fn train_with(
    config: &TrainConfig,
    dataset: &[DemoSample],
    mut params: FcnParams,
    mut on_iteration: impl FnMut(usize, &FcnParams, &ReportRow) -> Result<()>,
) -> Result<(FcnParams, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let kernels = TransitionKernelSet::standard(config.gamma)?;
    for (k, d) in dataset.iter().enumerate() {
        d.validate(&kernels)
            .map_err(|e| Error::data(format!("sample {k}: {e}")))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(params.len(), config.lr, config.lr_decay);
    let per_epoch = dataset.len().div_ceil(config.batch_size);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport::default();

    for it in 0..config.iterations {
        let pos = it % per_epoch;
        if pos == 0 {
            order.shuffle(&mut rng);
        }
        let batch = &order[pos * config.batch_size..((pos + 1) * config.batch_size).min(order.len())];
        let steps: Vec<SampleStep> = batch
            .par_iter()
            .map(|&k| {
                let seed = config.seed ^ ((it * dataset.len() + k) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                sample_step(&params, &dataset[k], &kernels, config, seed)
                    .map_err(|e| annotate(e, k))
            })
            .collect::<Result<_>>()?;

        let n = steps.len() as f64;
        let mut grads = FcnParams::zeros();
        for s in &steps {
            grads.add_scaled(&s.grads, 1.0);
        }
        grads.scale(1.0 / n);
        adam_step(&mut params, &grads, &mut adam)?;

        let mean = |f: fn(&SampleStep) -> f64| steps.iter().map(f).sum::<f64>() / n;
        let row = ReportRow {
            iteration: it + 1,
            l1_svf_gap: mean(|s| s.l1_svf_gap),
            mean_nll: mean(|s| s.nll),
            expert_reward: mean(|s| s.expert_reward),
            policy_reward: mean(|s| s.policy_reward),
        };
        report.rows.push(row);
        on_iteration(it + 1, &params, &row)?;
        if pos + 1 == per_epoch {
            adam.decay_lr();
        }
    }
    Ok((params, report))
}

fn annotate(e: Error, k: usize) -> Error {
    match e {
        Error::Data(m) => Error::Data(format!("sample {k}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("sample {k}: {m}")),
        Error::Argument(m) => Error::Argument(format!("sample {k}: {m}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner_eval::TrajRecord;
    use crate::reward_net::init_params;

    fn line(cells: &[(usize, usize)]) -> Trajectory {
        let n = cells.len();
        Trajectory::new(
            cells
                .iter()
                .enumerate()
                .map(|(k, &(row, col))| TrajRecord {
                    t: k + 1,
                    row,
                    col,
                    orientation: 0,
                    action: (k + 1 < n).then_some(0),
                })
                .collect(),
        )
        .unwrap()
    }

    fn flat_scene(n: usize) -> SceneMap {
        let h = Plane::from_fn(n, n, |r, _| if r == n / 2 { 0.0 } else { 0.3 });
        SceneMap::from_height(GridShape::square(n).unwrap(), h, Plane::filled(n, n, 1.0)).unwrap()
    }

    fn corridor_demo(n: usize) -> DemoSample {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let cells: Vec<_> = (0..n).map(|c| (n / 2, c)).collect();
        DemoSample::new(flat_scene(n), line(&cells), GoalSpec { cell: (n / 2, n - 1) }, &k).unwrap()
    }

    #[test]
    fn demo_counts() {
        let shape = GridShape::square(5).unwrap();
        let mu = demo_svf(&line(&[(0, 0), (0, 1), (0, 2)]), &shape).unwrap();
        assert_eq!(mu.total(), 3.0);
        assert_eq!(mu.get((0, 1)), 1.0);
        let mu = demo_svf(&line(&[(2, 2), (2, 3), (2, 2)]), &shape).unwrap();
        assert_eq!(mu.get((2, 2)), 2.0);
        assert!(matches!(demo_svf(&Trajectory::empty(), &shape), Err(Error::Data(_))));
        assert!(matches!(demo_svf(&line(&[(5, 0)]), &shape), Err(Error::Data(_))));
    }

    #[test]
    fn gradient_sign() {
        let a = SvfMap::from_plane(Plane::zeros(3, 3));
        let mut p = Plane::zeros(3, 3);
        p.set((1, 1), 1.0);
        let b = SvfMap::from_plane(p);
        let g = loss_gradient_wrt_cost(&a, &b).unwrap();
        assert_eq!(g.get((1, 1)), -1.0);
        assert_eq!(loss_gradient_wrt_cost(&b, &b).unwrap().sum(), 0.0);
        assert!(loss_gradient_wrt_cost(&a, &SvfMap::from_plane(Plane::zeros(4, 3))).is_err());
    }

    #[test]
    fn one_step_into_goal() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let r = Plane::filled(5, 5, -1.0);
        let demo = DemoSample::new(flat_scene(5), line(&[(2, 3), (2, 4)]), GoalSpec { cell: (2, 4) }, &k).unwrap();
        let (v, _) = soft_value_iteration(&r, &k, demo.goal, 150).unwrap();
        let lp = trajectory_log_likelihood(&r, &k, &demo, 150).unwrap();
        assert_eq!(lp, -1.0 - v.get(0, (2, 3)));
        assert!(lp < 0.0);
    }

    #[test]
    fn higher_reward_path_is_more_likely() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let mut r = Plane::filled(7, 7, -3.0);
        r.set((3, 2), -1.0);
        let scene = flat_scene(7);
        let goal = GoalSpec { cell: (3, 4) };
        let a = DemoSample::new(scene.clone(), line(&[(3, 1), (3, 2), (3, 3), (3, 4)]), goal, &k).unwrap();
        let b_cells = [((3, 1), 0), ((2, 2), 1), ((2, 3), 0), ((3, 4), 7)];
        let b_traj = Trajectory::from_poses(&b_cells, &k).unwrap();
        let b = DemoSample::new(scene, b_traj, goal, &k).unwrap();
        let la = trajectory_log_likelihood(&r, &k, &a, 150).unwrap();
        let lb = trajectory_log_likelihood(&r, &k, &b, 150).unwrap();
        assert!(la > lb, "{la} {lb}");
    }

    #[test]
    fn demo_validation() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let goal = GoalSpec { cell: (2, 4) };
        assert!(DemoSample::new(flat_scene(5), line(&[(2, 0), (2, 2)]), goal, &k).is_err());
        assert!(DemoSample::new(flat_scene(5), line(&[(2, 0), (2, 1)]), goal, &k).is_err());
        assert!(DemoSample::new(flat_scene(5), Trajectory::empty(), goal, &k).is_err());
    }

    #[test]
    fn smoothing_clips_window() {
        let s = smooth(&[1.0, 2.0, 3.0, 4.0], 1);
        assert_eq!(s, vec![1.5, 2.0, 3.0, 3.5]);
    }

    #[test]
    fn training_is_deterministic_and_moves_params() {
        let data = vec![corridor_demo(8), corridor_demo(9), corridor_demo(8)];
        let config = TrainConfig {
            iterations: 3,
            batch_size: 2,
            lr: 1e-3,
            value_iters: 40,
            svf_iters: 30,
            seed: 4,
            ..TrainConfig::default()
        };
        let p0 = init_params(1);
        let (p1, rep1) = train(&config, &data, p0.clone()).unwrap();
        let (p2, rep2) = train(&config, &data, p0.clone()).unwrap();
        assert_eq!(rep1, rep2);
        assert_eq!(p1, p2);
        assert_eq!(rep1.len(), 3);
        assert_ne!(p1, p0);
        assert!(rep1.rows.iter().all(|r| r.l1_svf_gap.is_finite() && r.mean_nll.is_finite()));
    }

    #[test]
    fn training_rejects_bad_input() {
        let config = TrainConfig::default();
        assert!(matches!(train(&config, &[], init_params(0)), Err(Error::Data(_))));
        let mut bad = corridor_demo(6);
        bad.goal = GoalSpec { cell: (0, 0) };
        let err = train(&config, &[corridor_demo(6), bad], init_params(0)).unwrap_err();
        assert!(err.to_string().contains("sample 1"), "{err}");
        let zero_batch = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&zero_batch, &[corridor_demo(6)], init_params(0)).is_err());
    }
}
