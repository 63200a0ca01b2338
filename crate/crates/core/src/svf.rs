//! Expected state-visitation frequencies under a fixed stochastic policy.
//!
//! [`expected_svf`] propagates heading-stacked mass planes: each plane is
//! split over actions by pointwise multiplication with the policy, pushed
//! with the (flipped, undiscounted) SVF kernel and regrouped by successor
//! heading. [`reference_expected_svf`] does the same walk state by state and
//! [`monte_carlo_svf`] estimates the counts by sampling rollouts.
//!
//! The goal absorbs: mass reaching it is counted once and then removed.
//! Mass pushed off the map is dropped.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, Plane};
use crate::grid_mdp::{GoalSpec, TransitionKernelSet};
use crate::soft_vi::{ExplicitModel, PolicyStack};

/// Default number of propagation steps.
pub const DEFAULT_STEPS: usize = 120;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Starting mass over `(heading, cell)` states.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution {
    rows: usize,
    cols: usize,
    orientations: usize,
    data: Vec<f64>,
}

impl InitialDistribution {
    /// Unit mass on a single state.
    pub fn one_hot(rows: usize, cols: usize, orientations: usize, cell: Cell, heading: usize) -> Result<Self> {
        if cell.0 >= rows || cell.1 >= cols || heading >= orientations {
            return Err(Error::arg(format!(
                "start {cell:?} heading {heading} outside {rows}x{cols}x{orientations}"
            )));
        }
        let mut d = Self::zeros(rows, cols, orientations);
        d.data[(heading * rows + cell.0) * cols + cell.1] = 1.0;
        Ok(d)
    }

    pub fn zeros(rows: usize, cols: usize, orientations: usize) -> Self {
        Self {
            rows,
            cols,
            orientations,
            data: vec![0.0; rows * cols * orientations],
        }
    }

    /// Arbitrary non-negative mass, heading-major. Total mass may not exceed one.
    pub fn from_data(rows: usize, cols: usize, orientations: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * orientations {
            return Err(Error::arg("initial distribution has the wrong size"));
        }
        if data.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::arg("initial distribution must be finite and non-negative"));
        }
        let total: f64 = data.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::arg(format!("initial mass {total} exceeds one")));
        }
        Ok(Self {
            rows,
            cols,
            orientations,
            data,
        })
    }

    pub fn mass(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Visitation counts per cell, plus the per-heading breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct SvfMap {
    mu: Plane,
    orientations: usize,
    per_heading: Vec<f64>,
}

impl SvfMap {
    /// Counts without a heading breakdown, e.g. from demonstrations.
    pub fn from_plane(mu: Plane) -> Self {
        Self {
            mu,
            orientations: 0,
            per_heading: Vec::new(),
        }
    }

    fn from_stack(rows: usize, cols: usize, orientations: usize, per_heading: Vec<f64>) -> Self {
        let hw = rows * cols;
        let mut mu = vec![0.0; hw];
        for plane in per_heading.chunks(hw) {
            for (m, &v) in mu.iter_mut().zip(plane) {
                *m += v;
            }
        }
        Self {
            mu: Plane::from_vec(rows, cols, mu).expect("dimensions are consistent"),
            orientations,
            per_heading,
        }
    }

    pub fn mu(&self) -> &Plane {
        &self.mu
    }

    pub fn rows(&self) -> usize {
        self.mu.rows()
    }

    pub fn cols(&self) -> usize {
        self.mu.cols()
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.mu.get(cell)
    }

    pub fn total(&self) -> f64 {
        self.mu.sum()
    }

    /// Accumulated mass of one heading, if the breakdown was kept.
    pub fn heading_plane(&self, j: usize) -> Option<&[f64]> {
        let hw = self.mu.rows() * self.mu.cols();
        (j < self.orientations).then(|| &self.per_heading[j * hw..(j + 1) * hw])
    }

    pub fn max_abs_diff(&self, other: &SvfMap) -> f64 {
        self.mu.max_abs_diff(&other.mu)
    }

    pub fn l1_distance(&self, other: &SvfMap) -> f64 {
        assert_eq!(self.mu.dims(), other.mu.dims());
        self.mu
            .data()
            .iter()
            .zip(other.mu.data())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn to_grid(&self) -> Grid {
        Grid::from(self.mu.clone())
    }
}

fn check_inputs(
    policy: &PolicyStack,
    kernels: &TransitionKernelSet,
    init: &InitialDistribution,
    goal: GoalSpec,
    steps: usize,
) -> Result<()> {
    if steps < 1 {
        return Err(Error::arg("need at least one propagation step"));
    }
    let (rows, cols) = (policy.rows(), policy.cols());
    if policy.orientations() != kernels.num_orientations() || policy.actions() != kernels.num_actions() {
        return Err(Error::arg("policy and kernels disagree on headings or actions"));
    }
    if (init.rows, init.cols, init.orientations) != (rows, cols, policy.orientations()) {
        return Err(Error::arg("initial distribution and policy differ in shape"));
    }
    GoalSpec::new(goal.cell, rows, cols)?;
    if policy.data().iter().any(|p| p.is_nan() || *p < 0.0) {
        return Err(Error::arg("policy has negative or NaN probabilities"));
    }
    let err = policy.max_normalization_error();
    if err > NORMALIZATION_TOLERANCE {
        return Err(Error::arg(format!("policy is not normalized (off by {err:e})")));
    }
    Ok(())
}

/// `(heading, action, dr, dc, w)`, with `(dr, dc)` the SVF kernel tap.
type Push = (usize, usize, i32, i32, f64);

/// For each successor heading, the pushes that land in it.
fn gather_plan(kernels: &TransitionKernelSet) -> Vec<Vec<Push>> {
    let m = kernels.num_orientations();
    let mut plan = vec![Vec::new(); m];
    for j in 0..m {
        for i in 0..kernels.num_actions() {
            let g = kernels.next_orientation(j, i);
            for (dr, dc, w) in kernels.svf_kernel(j, i).taps() {
                plan[g].push((j, i, dr, dc, w));
            }
        }
    }
    plan
}

/// `out(r, c) += w * pi(r + dr, c + dc) * e(r + dr, c + dc)`, zero outside.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn push_tap(out: &mut [f64], pi: &[f64], e: &[f64], rows: usize, cols: usize, dr: i32, dc: i32, w: f64) {
    let c0 = ((-dc).max(0) as usize).min(cols);
    let c1 = (cols as i64 - dc.max(0) as i64).max(c0 as i64) as usize;
    let r0 = ((-dr).max(0) as usize).min(rows);
    let r1 = (rows as i64 - dr.max(0) as i64).max(r0 as i64) as usize;
    for r in r0..r1 {
        let sr = (r as i64 + dr as i64) as usize;
        let start = (sr as i64 * cols as i64 + c0 as i64 + dc as i64) as usize;
        let len = c1 - c0;
        let o = &mut out[r * cols + c0..r * cols + c1];
        for ((o, &p), &x) in o.iter_mut().zip(&pi[start..start + len]).zip(&e[start..start + len]) {
            *o += w * (p * x);
        }
    }
}

#[inline(always)]
fn gather_heading_body(
    taps: &[(usize, usize, i32, i32, f64)],
    policy: &PolicyStack,
    e: &[f64],
    out: &mut [f64],
    (rows, cols): (usize, usize),
) {
    let hw = rows * cols;
    out.fill(0.0);
    for &(j, i, dr, dc, w) in taps {
        push_tap(out, policy.plane(j, i), &e[j * hw..(j + 1) * hw], rows, cols, dr, dc, w);
    }
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use crate::soft_vi::PolicyStack;

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn gather_heading(
        taps: &[(usize, usize, i32, i32, f64)],
        policy: &PolicyStack,
        e: &[f64],
        out: &mut [f64],
        dims: (usize, usize),
    ) {
        super::gather_heading_body(taps, policy, e, out, dims)
    }

    pub(super) fn available() -> bool {
        std::is_x86_feature_detected!("avx2")
    }
}

fn gather_heading(
    taps: &[(usize, usize, i32, i32, f64)],
    policy: &PolicyStack,
    e: &[f64],
    out: &mut [f64],
    dims: (usize, usize),
) {
    #[cfg(target_arch = "x86_64")]
    if simd::available() {
        // SAFETY: AVX2 support was checked at runtime just above.
        return unsafe { simd::gather_heading(taps, policy, e, out, dims) };
    }
    gather_heading_body(taps, policy, e, out, dims)
}

fn accumulate(acc: &mut [f64], e: &[f64]) {
    for (a, &x) in acc.iter_mut().zip(e) {
        *a += x;
    }
}

fn absorb(e: &mut [f64], orientations: usize, hw: usize, goal_idx: usize) {
    for j in 0..orientations {
        e[j * hw + goal_idx] = 0.0;
    }
}

/// Plane-wise expected visitation over `steps` time steps, counting the
/// initial distribution as step one.
pub fn expected_svf(
    policy: &PolicyStack,
    kernels: &TransitionKernelSet,
    init: &InitialDistribution,
    goal: GoalSpec,
    steps: usize,
) -> Result<SvfMap> {
    check_inputs(policy, kernels, init, goal, steps)?;
    let (rows, cols) = (policy.rows(), policy.cols());
    let hw = rows * cols;
    let m = kernels.num_orientations();
    let goal_idx = goal.cell.0 * cols + goal.cell.1;
    let plan = gather_plan(kernels);

    let mut e = init.data.clone();
    let mut next = vec![0.0; m * hw];
    let mut acc = vec![0.0; m * hw];
    for t in 1..=steps {
        accumulate(&mut acc, &e);
        if t == steps {
            break;
        }
        absorb(&mut e, m, hw, goal_idx);
        next.par_chunks_mut(hw)
            .zip(plan.par_iter())
            .for_each(|(out, taps)| gather_heading(taps, policy, &e, out, (rows, cols)));
        std::mem::swap(&mut e, &mut next);
    }
    Ok(SvfMap::from_stack(rows, cols, m, acc))
}

/// State-by-state forward propagation:
/// `E_{t+1}(s) = sum_{s', a} P(s | s', a) pi(a | s') E_t(s')`.
pub fn reference_expected_svf(
    policy: &PolicyStack,
    kernels: &TransitionKernelSet,
    init: &InitialDistribution,
    goal: GoalSpec,
    steps: usize,
) -> Result<SvfMap> {
    check_inputs(policy, kernels, init, goal, steps)?;
    let (rows, cols) = (policy.rows(), policy.cols());
    let model = ExplicitModel::from_kernels(kernels, rows, cols);
    let hw = rows * cols;
    let n = model.actions;
    let goal_idx = goal.cell.0 * cols + goal.cell.1;

    let mut e = init.data.clone();
    let mut acc = vec![0.0; model.states()];
    for t in 1..=steps {
        for (a, &x) in acc.iter_mut().zip(&e) {
            *a += x;
        }
        if t == steps {
            break;
        }
        let mut next = vec![0.0; model.states()];
        for (s_prev, &mass) in e.iter().enumerate() {
            if model.cell_index(s_prev) == goal_idx {
                continue;
            }
            let j = s_prev / hw;
            let cell_idx = model.cell_index(s_prev);
            for i in 0..n {
                let pi = policy.data()[(j * n + i) * hw + cell_idx];
                for &(s, p) in &model.succ[s_prev * n + i] {
                    next[s] += p * pi * mass;
                }
            }
        }
        e = next;
    }
    Ok(SvfMap::from_stack(rows, cols, model.orientations, acc))
}

/// Rollouts per independently seeded chunk.
const CHUNK: usize = 1024;

/// Monte-Carlo visit counts: samples `rollouts` trajectories from `init`
/// under `policy`, each stopping at the goal, after `steps` visited states,
/// or when it steps off the map. Returns mean counts scaled by the initial
/// mass. Deterministic for a given seed regardless of thread count.
pub fn monte_carlo_svf(
    policy: &PolicyStack,
    kernels: &TransitionKernelSet,
    init: &InitialDistribution,
    goal: GoalSpec,
    steps: usize,
    rollouts: usize,
    seed: u64,
) -> Result<SvfMap> {
    check_inputs(policy, kernels, init, goal, steps)?;
    if rollouts < 1 {
        return Err(Error::arg("need at least one rollout"));
    }
    let (rows, cols) = (policy.rows(), policy.cols());
    let hw = rows * cols;
    let m = kernels.num_orientations();
    let mass = init.mass();
    if mass == 0.0 {
        return Ok(SvfMap::from_stack(rows, cols, m, vec![0.0; m * hw]));
    }
    let start = WeightedIndex::new(&init.data).map_err(|e| Error::arg(e.to_string()))?;
    let n = kernels.num_actions();
    let chunks = rollouts.div_ceil(CHUNK);

    let counts = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut counts = vec![0u64; m * hw];
            let todo = CHUNK.min(rollouts - k * CHUNK);
            for _ in 0..todo {
                let s0 = start.sample(&mut rng);
                let mut j = s0 / hw;
                let mut cell = ((s0 % hw) / cols, s0 % cols);
                for t in 1..=steps {
                    counts[j * hw + cell.0 * cols + cell.1] += 1;
                    if cell == goal.cell || t == steps {
                        break;
                    }
                    let i = sample_action(policy, j, cell, n, rng.random::<f64>());
                    match kernels.step(rows, cols, cell, j, i) {
                        Some((c2, j2)) => {
                            cell = c2;
                            j = j2;
                        }
                        None => break,
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; m * hw],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let scale = mass / rollouts as f64;
    let per_heading = counts.into_iter().map(|c| c as f64 * scale).collect();
    Ok(SvfMap::from_stack(rows, cols, m, per_heading))
}

fn sample_action(policy: &PolicyStack, j: usize, cell: Cell, n: usize, u: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for i in 0..n {
        let p = policy.get(j, i, cell);
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_mdp::build_transition_kernels;
    use crate::grid_mdp::{ActionSet, OrientationSet};
    use crate::soft_vi::soft_value_iteration;
    use rand::Rng;

    fn random_policy(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> PolicyStack {
        let raw: Vec<f64> = (0..rows * cols * 8 * 6).map(|_| rng.random_range(0.05..1.0)).collect();
        let hw = rows * cols;
        PolicyStack::from_fn(rows, cols, 8, 6, |j, i, (r, c)| {
            let s = r * cols + c;
            let total: f64 = (0..6).map(|a| raw[(j * 6 + a) * hw + s]).sum();
            raw[(j * 6 + i) * hw + s] / total
        })
    }

    fn straight(rows: usize, cols: usize) -> PolicyStack {
        PolicyStack::from_fn(rows, cols, 8, 6, |_, i, _| if i == 0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn one_step_is_marginal_of_init() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_policy(&mut rng, 6, 7);
        let mut d = vec![0.0; 6 * 7 * 8];
        d[5] = 0.25;
        d[6 * 7 * 3 + 10] = 0.75;
        let init = InitialDistribution::from_data(6, 7, 8, d).unwrap();
        let mu = expected_svf(&p, &k, &init, GoalSpec { cell: (0, 0) }, 1).unwrap();
        assert_eq!(mu.get((0, 5)), 0.25);
        assert_eq!(mu.get((1, 3)), 0.75);
        assert_eq!(mu.total(), 1.0);
    }

    #[test]
    fn straight_corridor_translates_unit_mass() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let p = straight(11, 11);
        let init = InitialDistribution::one_hot(11, 11, 8, (5, 0), 0).unwrap();
        let goal = GoalSpec { cell: (5, 10) };
        for mu in [
            expected_svf(&p, &k, &init, goal, 11).unwrap(),
            reference_expected_svf(&p, &k, &init, goal, 11).unwrap(),
            monte_carlo_svf(&p, &k, &init, goal, 11, 7, 1).unwrap(),
        ] {
            for r in 0..11 {
                for c in 0..11 {
                    let want = if r == 5 { 1.0 } else { 0.0 };
                    assert_eq!(mu.get((r, c)), want, "({r},{c})");
                }
            }
        }
    }

    #[test]
    fn conv_matches_reference() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (rows, cols) in [(6, 6), (9, 12), (12, 12)] {
            let p = random_policy(&mut rng, rows, cols);
            let start = (rng.random_range(0..rows), rng.random_range(0..cols));
            let goal = GoalSpec { cell: (rng.random_range(0..rows), rng.random_range(0..cols)) };
            let init = InitialDistribution::one_hot(rows, cols, 8, start, rng.random_range(0..8)).unwrap();
            let a = expected_svf(&p, &k, &init, goal, 120).unwrap();
            let b = reference_expected_svf(&p, &k, &init, goal, 120).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12, "{}", a.max_abs_diff(&b));
            assert!(a.mu().data().iter().all(|&v| v >= 0.0));
            for j in 0..8 {
                let (x, y) = (a.heading_plane(j).unwrap(), b.heading_plane(j).unwrap());
                assert!(x.iter().zip(y).all(|(u, v)| (u - v).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn works_with_soft_vi_policy_and_other_action_sets() {
        let k = build_transition_kernels(&OrientationSet::compass8(), &ActionSet::forward_only(), 0.9).unwrap();
        let r = Plane::from_fn(8, 8, |a, b| -1.0 - ((a + 2 * b) % 3) as f64);
        let goal = GoalSpec { cell: (6, 6) };
        let (_, p) = soft_value_iteration(&r, &k, goal, 50).unwrap();
        let init = InitialDistribution::one_hot(8, 8, 8, (1, 1), 7).unwrap();
        let a = expected_svf(&p, &k, &init, goal, 40).unwrap();
        let b = reference_expected_svf(&p, &k, &init, goal, 40).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_on_high_mass_cells() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_policy(&mut rng, 8, 8);
        let init = InitialDistribution::one_hot(8, 8, 8, (4, 4), 2).unwrap();
        let goal = GoalSpec { cell: (0, 7) };
        let exact = reference_expected_svf(&p, &k, &init, goal, 30).unwrap();
        let mc = monte_carlo_svf(&p, &k, &init, goal, 30, 50_000, 9).unwrap();
        for (e, m) in exact.mu().data().iter().zip(mc.mu().data()) {
            if *e > 0.5 {
                assert!(((m - e) / e).abs() < 0.03, "exact {e} mc {m}");
            }
        }
        let again = monte_carlo_svf(&p, &k, &init, goal, 30, 50_000, 9).unwrap();
        assert_eq!(mc, again);
    }

    #[test]
    fn zero_mass_gives_zero_counts() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let p = PolicyStack::uniform(5, 5, 8, 6);
        let init = InitialDistribution::zeros(5, 5, 8);
        let goal = GoalSpec { cell: (2, 2) };
        assert_eq!(expected_svf(&p, &k, &init, goal, 20).unwrap().total(), 0.0);
        assert_eq!(reference_expected_svf(&p, &k, &init, goal, 20).unwrap().total(), 0.0);
        assert_eq!(monte_carlo_svf(&p, &k, &init, goal, 20, 10, 0).unwrap().total(), 0.0);
    }

    #[test]
    fn discount_does_not_matter_for_fixed_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_policy(&mut rng, 7, 7);
        let init = InitialDistribution::one_hot(7, 7, 8, (3, 3), 4).unwrap();
        let goal = GoalSpec { cell: (6, 0) };
        let a = expected_svf(&p, &TransitionKernelSet::standard(0.5).unwrap(), &init, goal, 30).unwrap();
        let b = expected_svf(&p, &TransitionKernelSet::standard(0.99).unwrap(), &init, goal, 30).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn goal_absorbs_at_most_unit_mass() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let p = PolicyStack::uniform(5, 5, 8, 6);
        let init = InitialDistribution::one_hot(5, 5, 8, (2, 1), 0).unwrap();
        let goal = GoalSpec { cell: (2, 3) };
        let mu = expected_svf(&p, &k, &init, goal, 200).unwrap();
        assert!(mu.get(goal.cell) <= 1.0 + 1e-12);
        assert!(mu.get(goal.cell) > 0.0);
        // per-step mass never exceeds one, so the total is bounded by the horizon
        assert!(mu.total() <= 200.0);
    }

    #[test]
    fn rejects_unnormalized_policy_and_bad_args() {
        let k = TransitionKernelSet::standard(0.95).unwrap();
        let p = PolicyStack::from_fn(4, 4, 8, 6, |_, _, _| 0.2);
        let init = InitialDistribution::one_hot(4, 4, 8, (0, 0), 0).unwrap();
        let goal = GoalSpec { cell: (3, 3) };
        assert!(matches!(expected_svf(&p, &k, &init, goal, 5), Err(Error::Argument(_))));
        assert!(matches!(reference_expected_svf(&p, &k, &init, goal, 5), Err(Error::Argument(_))));
        let ok = PolicyStack::uniform(4, 4, 8, 6);
        assert!(expected_svf(&ok, &k, &init, goal, 0).is_err());
        assert!(monte_carlo_svf(&ok, &k, &init, goal, 5, 0, 1).is_err());
        assert!(InitialDistribution::one_hot(4, 4, 8, (4, 0), 0).is_err());
        assert!(InitialDistribution::from_data(4, 4, 8, vec![1.0; 128]).is_err());
    }
}
