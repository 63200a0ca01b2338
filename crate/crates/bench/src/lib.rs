//! Shared fixtures for the criterion benches.

use kinirl_core::soft_vi::soft_value_iteration;
use kinirl_core::stage_timing::BenchSpec;
use kinirl_core::{GoalSpec, InitialDistribution, Plane, PolicyStack, SceneMap, TransitionKernelSet};

/// One planning problem with its converged soft policy.
pub struct Fixture {
    pub kernels: TransitionKernelSet,
    pub reward: Plane,
    pub goal: GoalSpec,
    pub init: InitialDistribution,
    pub policy: PolicyStack,
    pub iterations: usize,
    pub svf_steps: usize,
}

/// Square instance of side `size` with the standard 8 headings and 6 actions.
pub fn fixture(size: usize, iterations: usize, svf_steps: usize) -> Fixture {
    let spec = BenchSpec {
        size,
        iterations,
        svf_steps,
        ..BenchSpec::default()
    };
    let kernels = spec.kernels().expect("standard shape");
    let (reward, goal, init) = spec.instance().expect("valid size");
    let (_, policy) = soft_value_iteration(&reward, &kernels, goal, iterations).expect("solvable");
    Fixture {
        kernels,
        reward,
        goal,
        init,
        policy,
        iterations,
        svf_steps,
    }
}

/// Rolling terrain with a masked border, enough structure to keep the
/// rectifiers mixed.
pub fn scene(size: usize) -> SceneMap {
    let height = Plane::from_fn(size, size, |r, c| {
        let (y, x) = (r as f64 / size as f64, c as f64 / size as f64);
        (6.0 * x).sin() * (4.0 * y).cos() - 0.5 * y
    });
    let mask = Plane::from_fn(size, size, |r, c| {
        if r == 0 || c == 0 || r + 1 == size || c + 1 == size {
            0.0
        } else {
            1.0
        }
    });
    SceneMap::from_height(kinirl_core::GridShape::square(size).expect("size"), height, mask).expect("scene")
}
