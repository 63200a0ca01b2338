//! Synthetic off-road scenes and demonstrations.
//!
//! A scene is a horizontal road through vegetation, optionally with sunken
//! elliptical pits on the road. Demonstrations come from planning on a
//! hand-written ground-truth cost that encodes the behavior:
//!
//! | behavior | road | vegetation | pit |
//! |----------|------|------------|-----|
//! | E1       | 1    | 50         | (no pits) |
//! | E2       | 1    | 50         | 50  |
//! | E3       | 1    | 50         | 3   |
//! | E4       | 1    | 50         | 0.2 |

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Cell, GridShape, Plane};
use crate::grid_mdp::{GoalSpec, TransitionKernelSet};
use crate::irl_trainer::DemoSample;
use crate::planner_eval::{default_horizon, greedy_plan, Pose, Trajectory};
use crate::reward_net::SceneMap;
use crate::soft_vi::{soft_value_iteration, DEFAULT_ITERATIONS};

/// Scene size used for datasets unless stated otherwise.
pub const DEFAULT_SCENE_SIZE: usize = 32;

/// Multiplier on the ground-truth cost before soft value iteration, so the
/// demonstrator behaves close to a shortest-path planner.
pub const DEMO_SHARPNESS: f64 = 20.0;

/// The demonstrator plans undiscounted: with discounting, values far from
/// the goal flatten out and greedy decoding can circle.
pub const DEMO_GAMMA: f64 = 1.0;

const ROAD_COST: f64 = 1.0;
const VEGETATION_COST: f64 = 50.0;
const ROAD_NOISE_M: f64 = 0.02;

/// Demonstrated driving behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    /// Normal driving on flat roads.
    E1,
    /// Avoid pits.
    E2,
    /// Cross a pit only when it blocks the road.
    E3,
    /// Prefer crossing pits.
    E4,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [Behavior::E1, Behavior::E2, Behavior::E3, Behavior::E4];

    pub fn pit_cost(self) -> Option<f64> {
        match self {
            Behavior::E1 => None,
            Behavior::E2 => Some(50.0),
            Behavior::E3 => Some(3.0),
            Behavior::E4 => Some(0.2),
        }
    }

    pub fn has_pits(self) -> bool {
        self != Behavior::E1
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Behavior::E1 => "E1",
            Behavior::E2 => "E2",
            Behavior::E3 => "E3",
            Behavior::E4 => "E4",
        };
        f.write_str(s)
    }
}

impl FromStr for Behavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "E1" => Ok(Behavior::E1),
            "E2" => Ok(Behavior::E2),
            "E3" => Ok(Behavior::E3),
            "E4" => Ok(Behavior::E4),
            _ => Err(Error::arg(format!("unknown behavior `{s}`, expected E1..E4"))),
        }
    }
}

/// Terrain class of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terrain {
    Road,
    Vegetation,
    Pit,
}

/// Scene parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub shape: GridShape,
    pub road_width_cells: usize,
    pub n_positive_obstacles: usize,
    pub n_pits: usize,
    pub pit_depth_m: f64,
    pub vegetation_height_m: f64,
    pub behavior: Behavior,
    pub seed: u64,
}

impl SceneSpec {
    /// Defaults scaled to a square grid of side `size`.
    pub fn for_behavior(behavior: Behavior, size: usize, seed: u64) -> Result<Self> {
        let shape = GridShape::square(size)?;
        Ok(Self {
            shape,
            road_width_cells: (size * 5).div_ceil(16).max(3),
            n_positive_obstacles: 3,
            n_pits: if behavior.has_pits() { 2 } else { 0 },
            pit_depth_m: 0.8,
            vegetation_height_m: 1.5,
            behavior,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let GridShape { rows, cols, .. } = self.shape;
        if rows < 12 || cols < 16 {
            return Err(Error::arg(format!("scenes need at least 12x16 cells, got {rows}x{cols}")));
        }
        if self.road_width_cells < 3 || self.road_width_cells + 4 > rows {
            return Err(Error::arg(format!(
                "road width {} does not fit in {rows} rows",
                self.road_width_cells
            )));
        }
        if self.behavior == Behavior::E1 && self.n_pits > 0 {
            return Err(Error::arg("E1 scenes have no pits"));
        }
        if self.n_pits > 0 && self.road_width_cells < 7 {
            return Err(Error::arg("pits need a road at least 7 cells wide"));
        }
        if (cols - 12) / 7 < self.n_pits {
            return Err(Error::arg(format!("{} pits do not fit along {cols} columns", self.n_pits)));
        }
        if !(self.pit_depth_m > 0.0 && self.vegetation_height_m > 0.0) {
            return Err(Error::arg("pit depth and vegetation height must be positive"));
        }
        Ok(())
    }
}

/// Hidden cost used only to produce demonstrations, with the terrain labels
/// it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthCost {
    pub cost: Plane,
    pub terrain: Vec<Terrain>,
}

impl GroundTruthCost {
    pub fn terrain_at(&self, (r, c): Cell) -> Terrain {
        self.terrain[r * self.cost.cols() + c]
    }

    pub fn cells_of(&self, kind: Terrain) -> Vec<Cell> {
        let cols = self.cost.cols();
        self.terrain
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == kind)
            .map(|(i, _)| (i / cols, i % cols))
            .collect()
    }
}

/// Output of [`generate_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: SceneMap,
    pub truth: GroundTruthCost,
    pub start: Pose,
    pub goal: GoalSpec,
}

struct Pit {
    row: f64,
    col: f64,
    a: f64,
    b: f64,
}

impl Pit {
    /// Normalised squared radius, `<= 1` inside.
    fn rho2(&self, r: usize, c: usize) -> f64 {
        let dr = (r as f64 - self.row) / self.a;
        let dc = (c as f64 - self.col) / self.b;
        dr * dr + dc * dc
    }
}

/// Builds the height map, labels and ground-truth cost for a spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let GridShape { rows, cols, .. } = spec.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = spec.road_width_cells;
    let center = rows / 2 + rng.random_range(0..3) - 1;
    let top = (center - w / 2).clamp(2, rows - 2 - w);
    let road = top..top + w;
    let mid = top + w / 2;

    let mut terrain = vec![Terrain::Vegetation; rows * cols];
    for r in road.clone() {
        for c in 0..cols {
            terrain[r * cols + c] = Terrain::Road;
        }
    }

    let pits = place_pits(spec, &mut rng, top, w);
    for r in road.clone() {
        for c in 0..cols {
            if pits.iter().any(|p| p.rho2(r, c) <= 1.0) {
                terrain[r * cols + c] = Terrain::Pit;
            }
        }
    }

    let noise = Normal::new(0.0, ROAD_NOISE_M).expect("valid deviation");
    let blobs: Vec<(f64, f64, f64)> = (0..spec.n_positive_obstacles)
        .map(|_| {
            let r = if rng.random_bool(0.5) {
                rng.random_range(0..top) as f64
            } else {
                rng.random_range(top + w..rows) as f64
            };
            (r, rng.random_range(0..cols) as f64, rng.random_range(1.5..3.5))
        })
        .collect();
    let mut height = Plane::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let h = match terrain[r * cols + c] {
                Terrain::Road => noise.sample(&mut rng),
                Terrain::Pit => {
                    let rho2 = pits.iter().map(|p| p.rho2(r, c)).fold(f64::INFINITY, f64::min);
                    -spec.pit_depth_m * (1.0 - 0.4 * rho2)
                }
                Terrain::Vegetation => {
                    let bump: f64 = blobs
                        .iter()
                        .map(|&(br, bc, rad)| {
                            let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                            0.5 * (-d2 / (rad * rad)).exp()
                        })
                        .sum();
                    spec.vegetation_height_m * rng.random_range(0.7..1.0) + bump
                }
            };
            height.set((r, c), h);
        }
    }

    let pit_cost = spec.behavior.pit_cost().unwrap_or(VEGETATION_COST);
    let cost = Plane::from_fn(rows, cols, |r, c| match terrain[r * cols + c] {
        Terrain::Road => ROAD_COST,
        Terrain::Vegetation => VEGETATION_COST,
        Terrain::Pit => pit_cost,
    });
    let scene = SceneMap::from_height(spec.shape, height, Plane::filled(rows, cols, 1.0))?;
    Ok(GeneratedScene {
        scene,
        truth: GroundTruthCost { cost, terrain },
        start: ((mid, 1), 0),
        goal: GoalSpec::new((mid, cols - 2), rows, cols)?,
    })
}

/// Pits sit in separate column bands away from the road ends. E4 pits
/// straddle the centre line; E3 blocks the whole road half of the time.
fn place_pits(spec: &SceneSpec, rng: &mut ChaCha8Rng, top: usize, w: usize) -> Vec<Pit> {
    let cols = spec.shape.cols;
    if spec.n_pits == 0 {
        return Vec::new();
    }
    let band = (cols - 12) / spec.n_pits;
    let blocking = spec.behavior == Behavior::E3 && rng.random_bool(0.5);
    let mid = (top + w / 2) as f64;
    (0..spec.n_pits)
        .map(|k| {
            let b = rng.random_range(1.6..2.6);
            let lo = 6 + k * band + 3;
            let hi = (6 + (k + 1) * band).saturating_sub(3).max(lo + 1);
            let col = rng.random_range(lo..hi) as f64;
            if blocking && k == 0 {
                return Pit {
                    row: mid,
                    col,
                    a: w as f64,
                    b,
                };
            }
            let a = rng.random_range(1.6..((w as f64 - 2.0) / 2.0 - 0.5).max(1.7));
            match spec.behavior {
                // on the straight route, with a bypass of at least two rows
                Behavior::E2 | Behavior::E4 => {
                    let row = mid + rng.random_range(-1.0..1.0);
                    let room = (row - top as f64).max((top + w) as f64 - 1.0 - row) - 2.0;
                    let a = if spec.behavior == Behavior::E2 { a.min(room) } else { a };
                    Pit { row, col, a, b }
                }
                _ => {
                    let lo = top as f64 + a;
                    let hi = (top + w) as f64 - 1.0 - a;
                    let r = rng.random_range(lo..hi.max(lo + 1e-9));
                    let gap_above = r - a - top as f64;
                    let gap_below = (top + w) as f64 - 1.0 - (r + a);
                    let row = if gap_above < 2.0 && gap_below < 2.0 { top as f64 + 2.0 + a } else { r };
                    Pit { row, col, a, b }
                }
            }
        })
        .collect()
}

/// Plans on the sharpened ground-truth cost and greedily decodes the route.
pub fn synthesize_demo(
    scene: &SceneMap,
    truth: &GroundTruthCost,
    kernels: &TransitionKernelSet,
    start: Pose,
    goal: GoalSpec,
) -> Result<Trajectory> {
    let shape = scene.shape();
    if truth.cost.dims() != (shape.rows, shape.cols) {
        return Err(Error::arg("ground-truth cost does not match the scene"));
    }
    let reward = truth.cost.map(|c| -DEMO_SHARPNESS * c);
    let sweeps = DEFAULT_ITERATIONS.max(default_horizon(&shape));
    let (values, policy) = soft_value_iteration(&reward, kernels, goal, sweeps)?;
    if !values.is_reachable(start.1, start.0) {
        return Err(Error::Planning(format!(
            "goal {:?} is not reachable from {:?} within {sweeps} steps",
            goal.cell, start
        )));
    }
    greedy_plan(&policy, kernels, start, goal, default_horizon(&shape))
}

/// A generated scene with its demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub demo: DemoSample,
    pub truth: GroundTruthCost,
    pub behavior: Behavior,
    pub seed: u64,
}

/// Scene plus demonstration for one spec, planned with [`DEMO_GAMMA`].
pub fn generate_sample(spec: &SceneSpec) -> Result<SyntheticSample> {
    let kernels = TransitionKernelSet::standard(DEMO_GAMMA)?;
    let g = generate_scene(spec)?;
    let traj = synthesize_demo(&g.scene, &g.truth, &kernels, g.start, g.goal)?;
    let demo = DemoSample::new(g.scene, traj, g.goal, &kernels)?;
    Ok(SyntheticSample {
        demo,
        truth: g.truth,
        behavior: spec.behavior,
        seed: spec.seed,
    })
}

/// `count` samples with seeds `base_seed`, `base_seed + 1`, ... on square
/// grids of side `size`.
pub fn make_samples(behavior: Behavior, count: usize, base_seed: u64, size: usize) -> Result<Vec<SyntheticSample>> {
    if count < 1 {
        return Err(Error::arg("count must be at least 1"));
    }
    (0..count)
        .into_par_iter()
        .map(|k| generate_sample(&SceneSpec::for_behavior(behavior, size, base_seed + k as u64)?))
        .collect()
}

/// `count` demonstration samples at the default scene size.
pub fn make_dataset(behavior: Behavior, count: usize, base_seed: u64) -> Result<Vec<DemoSample>> {
    Ok(make_samples(behavior, count, base_seed, DEFAULT_SCENE_SIZE)?
        .into_iter()
        .map(|s| s.demo)
        .collect())
}
