//! Wall-time of the two planning stages (RL and Svf) for either engine.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::grid_mdp::{build_transition_kernels, ActionSet, GoalSpec, OrientationSet, TransitionKernelSet, DEFAULT_GAMMA};
use crate::io_formats::BenchRow;
use crate::soft_vi::{reference_value_iteration, soft_value_iteration};
use crate::svf::{expected_svf, reference_expected_svf, InitialDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    /// Orientation-stacked convolution.
    Conv,
    /// Explicit augmented-state loops.
    Naive,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Conv => "conv",
            Engine::Naive => "naive",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(Engine::Conv),
            "naive" => Ok(Engine::Naive),
            other => Err(Error::arg(format!("unknown engine `{other}`, expected conv or naive"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub size: usize,
    pub orientations: usize,
    pub actions: usize,
    pub iterations: usize,
    pub svf_steps: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            size: 100,
            orientations: 8,
            actions: 6,
            iterations: 150,
            svf_steps: 120,
            seed: 0,
        }
    }
}

impl BenchSpec {
    /// Kernels for the requested heading and action counts.
    pub fn kernels(&self) -> Result<TransitionKernelSet> {
        if self.orientations != 8 {
            return Err(Error::arg(format!("only 8 orientations are supported, got {}", self.orientations)));
        }
        let actions = match self.actions {
            6 => ActionSet::standard(),
            3 => ActionSet::forward_only(),
            n => return Err(Error::arg(format!("action count must be 3 or 6, got {n}"))),
        };
        build_transition_kernels(&OrientationSet::compass8(), &actions, DEFAULT_GAMMA)
    }

    /// Random reward in `[-5, -0.1]`, goal near the east edge and start
    /// near the west edge facing east.
    pub fn instance(&self) -> Result<(Plane, GoalSpec, InitialDistribution)> {
        if self.size < 3 {
            return Err(Error::arg(format!("size must be at least 3, got {}", self.size)));
        }
        let n = self.size;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let data = (0..n * n).map(|_| rng.random_range(-5.0..-0.1)).collect();
        let reward = Plane::from_vec(n, n, data)?;
        let goal = GoalSpec::new((n / 2, n - 2), n, n)?;
        let init = InitialDistribution::one_hot(n, n, self.orientations, (n / 2, 1), 0)?;
        Ok((reward, goal, init))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimes {
    pub rl: Duration,
    pub svf: Duration,
}

impl StageTimes {
    pub fn rows(&self, engine: Engine, spec: &BenchSpec) -> Vec<BenchRow> {
        let row = |stage: &str, iterations, d: Duration| BenchRow {
            engine: engine.to_string(),
            stage: stage.to_string(),
            size: spec.size,
            orientations: spec.orientations,
            actions: spec.actions,
            iterations,
            seconds: d.as_secs_f64(),
        };
        vec![row("RL", spec.iterations, self.rl), row("Svf", spec.svf_steps, self.svf)]
    }
}

/// Runs value iteration then SVF propagation once with `engine`.
pub fn time_stages(spec: &BenchSpec, engine: Engine) -> Result<StageTimes> {
    let kernels = spec.kernels()?;
    let (reward, goal, init) = spec.instance()?;
    let t = Instant::now();
    let (_, policy) = match engine {
        Engine::Conv => soft_value_iteration(&reward, &kernels, goal, spec.iterations)?,
        Engine::Naive => reference_value_iteration(&reward, &kernels, goal, spec.iterations)?,
    };
    let rl = t.elapsed();
    let t = Instant::now();
    let svf = match engine {
        Engine::Conv => expected_svf(&policy, &kernels, &init, goal, spec.svf_steps)?,
        Engine::Naive => reference_expected_svf(&policy, &kernels, &init, goal, spec.svf_steps)?,
    };
    let svf_time = t.elapsed();
    if !svf.total().is_finite() {
        return Err(Error::Numeric("visitation total is not finite".into()));
    }
    Ok(StageTimes { rl, svf: svf_time })
}
