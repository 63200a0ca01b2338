//! Soft (maximum-entropy) value iteration over heading-stacked value maps.
//!
//! Two engines share one contract:
//!
//! * [`soft_value_iteration`] works on whole planes. For every heading `j` and
//!   action `i` the Q plane is the reward plus the value plane of the
//!   successor heading correlated with the action's 3x3 kernel; the new value
//!   plane is the log-sum-exp over the action planes.
//! * [`reference_value_iteration`] enumerates the augmented `(cell, heading)`
//!   states one by one against an explicit sparse transition table.
//!
//! Both run synchronous (Jacobi) sweeps, start from the [`V_MIN`] sentinel,
//! pin the goal value to zero in every heading plane after each sweep, and
//! treat moves off the map or into still-unreachable states as forbidden
//! (their Q is the sentinel).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fastmath;
use crate::grid::{Cell, Grid, Plane};
use crate::grid_mdp::{GoalSpec, TransitionKernelSet};

/// Sentinel for "unreachable". Stands in for minus infinity so that
/// `exp(Q - V)` stays finite.
pub const V_MIN: f64 = -1e6;

/// Default number of value-iteration sweeps.
pub const DEFAULT_ITERATIONS: usize = 150;

/// Rewards must stay well clear of the sentinel.
const REWARD_LIMIT: f64 = 1e5;

/// One value plane per heading.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueStack {
    rows: usize,
    cols: usize,
    orientations: usize,
    data: Vec<f64>,
}

impl ValueStack {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn plane(&self, j: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[j * n..(j + 1) * n]
    }

    #[inline]
    pub fn get(&self, j: usize, (r, c): Cell) -> f64 {
        self.data[(j * self.rows + r) * self.cols + c]
    }

    pub fn is_reachable(&self, j: usize, cell: Cell) -> bool {
        self.get(j, cell) > V_MIN
    }

    pub fn max_abs_diff(&self, other: &ValueStack) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }

    pub fn to_grid(&self) -> Grid {
        Grid::new(self.rows, self.cols, self.orientations, self.data.clone())
            .expect("value stack dimensions are consistent")
    }
}

/// One action-probability plane per (heading, action) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStack {
    rows: usize,
    cols: usize,
    orientations: usize,
    actions: usize,
    data: Vec<f64>,
}

impl PolicyStack {
    /// Builds a policy from a closure `(heading, action, cell) -> probability`.
    /// The result is not checked for normalisation.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        orientations: usize,
        actions: usize,
        mut f: impl FnMut(usize, usize, Cell) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(rows * cols * orientations * actions);
        for j in 0..orientations {
            for i in 0..actions {
                for r in 0..rows {
                    for c in 0..cols {
                        data.push(f(j, i, (r, c)));
                    }
                }
            }
        }
        Self {
            rows,
            cols,
            orientations,
            actions,
            data,
        }
    }

    /// Uniform policy over all actions.
    pub fn uniform(rows: usize, cols: usize, orientations: usize, actions: usize) -> Self {
        Self::from_fn(rows, cols, orientations, actions, |_, _, _| 1.0 / actions as f64)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    /// Raw probabilities, heading-major then action then row-major cells.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, j: usize, i: usize) -> &[f64] {
        let n = self.rows * self.cols;
        let k = j * self.actions + i;
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize, (r, c): Cell) -> f64 {
        self.data[((j * self.actions + i) * self.rows + r) * self.cols + c]
    }

    /// Action probabilities at one augmented state.
    pub fn distribution(&self, j: usize, cell: Cell) -> Vec<f64> {
        (0..self.actions).map(|i| self.get(j, i, cell)).collect()
    }

    /// Largest deviation of any per-state action distribution from unit mass.
    pub fn max_normalization_error(&self) -> f64 {
        let n = self.rows * self.cols;
        let mut worst: f64 = 0.0;
        for j in 0..self.orientations {
            for s in 0..n {
                let total: f64 = (0..self.actions)
                    .map(|i| self.data[(j * self.actions + i) * n + s])
                    .sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &PolicyStack) -> f64 {
        max_abs_diff(&self.data, &other.data)
    }

    pub fn to_grid(&self) -> Grid {
        Grid::new(
            self.rows,
            self.cols,
            self.orientations * self.actions,
            self.data.clone(),
        )
        .expect("policy stack dimensions are consistent")
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "stack shapes differ");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Log-sum-exp soft maximum with max-shift. Entries at or below [`V_MIN`]
/// are treated as minus infinity; if nothing is above it the result is
/// [`V_MIN`].
pub fn soft_max_reduce(q: &[f64]) -> f64 {
    let m = q.iter().copied().fold(V_MIN, f64::max);
    if m <= V_MIN {
        return V_MIN;
    }
    let mut s = 0.0;
    for &x in q {
        if x > V_MIN {
            s += (x - m).exp();
        }
    }
    m + s.ln()
}

fn check_inputs(reward: &Plane, goal: GoalSpec, iterations: usize) -> Result<()> {
    if iterations < 1 {
        return Err(Error::arg("value iteration needs at least one sweep"));
    }
    let (rows, cols) = reward.dims();
    GoalSpec::new(goal.cell, rows, cols)?;
    if let Some(v) = reward.data().iter().find(|v| v.is_nan() || v.abs() >= REWARD_LIMIT) {
        return Err(Error::arg(format!("reward {v} is not finite or too large")));
    }
    Ok(())
}

fn clamp_goal(values: &mut [f64], orientations: usize, hw: usize, goal_idx: usize) {
    for j in 0..orientations {
        values[j * hw + goal_idx] = 0.0;
    }
}

/// Per-(heading, action) correlation taps resolved against the successor
/// heading: `(source heading, dr, dc, weight)`.
struct BackupPlan {
    taps: Vec<Vec<(usize, i32, i32, f64)>>,
}

impl BackupPlan {
    fn new(kernels: &TransitionKernelSet) -> Self {
        let m = kernels.num_orientations();
        let n = kernels.num_actions();
        let mut taps = Vec::with_capacity(m * n);
        for j in 0..m {
            for i in 0..n {
                let src = kernels.next_orientation(j, i);
                taps.push(
                    kernels
                        .vi_kernel(j, i)
                        .taps()
                        .into_iter()
                        .map(|(dr, dc, w)| (src, dr, dc, w))
                        .collect(),
                );
            }
        }
        Self { taps }
    }
}

/// Q planes of one heading: `q[i] = R + P_j^i (x) V_g(j,i)` with sentinel
/// padding and forbidden-move propagation.
#[inline(always)]
fn backup_heading(
    plan: &BackupPlan,
    n_actions: usize,
    j: usize,
    reward: &[f64],
    values: &[f64],
    q: &mut [f64],
    (rows, cols): (usize, usize),
) {
    for r in 0..rows {
        backup_row(plan, n_actions, j, r, reward, values, q, rows, cols, rows * cols);
    }
}

/// Q rows of heading `j` at map row `r`; `q` holds `n_actions` rows spaced
/// `stride` apart, written at offset `r * cols` within each.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn backup_row(
    plan: &BackupPlan,
    n_actions: usize,
    j: usize,
    r: usize,
    reward: &[f64],
    values: &[f64],
    q: &mut [f64],
    rows: usize,
    cols: usize,
    stride: usize,
) {
    let hw = rows * cols;
    let at = if stride == hw { r * cols } else { 0 };
    let base = &reward[r * cols..(r + 1) * cols];
    for i in 0..n_actions {
        let out = &mut q[i * stride + at..i * stride + at + cols];
        let taps = &plan.taps[j * n_actions + i];
        match taps.split_first() {
            None => out.fill(V_MIN),
            Some((&(src_j, dr, dc, w), rest)) => {
                let src = &values[src_j * hw..(src_j + 1) * hw];
                correlate_row(out, base, src, r, rows, cols, dr, dc, w);
                for &(src_j, dr, dc, w) in rest {
                    let src = &values[src_j * hw..(src_j + 1) * hw];
                    let acc = out.to_vec();
                    correlate_row(out, &acc, src, r, rows, cols, dr, dc, w);
                }
            }
        }
    }
}

/// `out(c) = base(c) + w * src(r + dr, c + dc)`; reads outside the map, of
/// unreachable values, or on a forbidden base force the sentinel.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn correlate_row(
    out: &mut [f64],
    base: &[f64],
    src: &[f64],
    r: usize,
    rows: usize,
    cols: usize,
    dr: i32,
    dc: i32,
    w: f64,
) {
    let sr = r as i64 + dr as i64;
    if sr < 0 || sr >= rows as i64 {
        out.fill(V_MIN);
        return;
    }
    let c0 = ((-dc).max(0) as usize).min(cols);
    let c1 = (cols as i64 - dc.max(0) as i64).max(c0 as i64) as usize;
    out[..c0].fill(V_MIN);
    out[c1..].fill(V_MIN);
    let start = (sr * cols as i64 + c0 as i64 + dc as i64) as usize;
    let src_row = &src[start..start + (c1 - c0)];
    for ((o, &s), &b) in out[c0..c1].iter_mut().zip(src_row).zip(&base[c0..c1]) {
        *o = if s <= V_MIN || b <= V_MIN { V_MIN } else { b + w * s };
    }
}

/// Log-sum-exp across `n` stacked rows/planes in `q`, written to `out`.
#[inline(always)]
fn lse_planes<const FMA: bool>(q: &[f64], n: usize, out: &mut [f64], max_buf: &mut [f64]) {
    let hw = out.len();
    max_buf.copy_from_slice(&q[..hw]);
    for i in 1..n {
        for (m, &x) in max_buf.iter_mut().zip(&q[i * hw..(i + 1) * hw]) {
            *m = m.max(x);
        }
    }
    out.fill(0.0);
    for i in 0..n {
        for ((s, &x), &m) in out.iter_mut().zip(&q[i * hw..(i + 1) * hw]).zip(max_buf.iter()) {
            // exp(V_MIN - m) underflows to exactly zero for any live m
            *s += fastmath::exp_with::<FMA>(x - m);
        }
    }
    for (s, &m) in out.iter_mut().zip(max_buf.iter()) {
        *s = if m <= V_MIN { V_MIN } else { m + s.ln() };
    }
}

#[inline(always)]
fn policy_from_q<const FMA: bool>(q: &[f64], lse: &[f64], n: usize, out: &mut [f64]) {
    let hw = lse.len();
    let uniform = 1.0 / n as f64;
    for i in 0..n {
        let qi = &q[i * hw..(i + 1) * hw];
        let pi = &mut out[i * hw..(i + 1) * hw];
        for ((p, &x), &v) in pi.iter_mut().zip(qi).zip(lse) {
            *p = if v <= V_MIN { uniform } else { fastmath::exp_with::<FMA>(x - v) };
        }
    }
}

/// One heading of one sweep, row by row so the Q rows stay in cache.
/// `scratch` needs `(n + 1) * cols` values.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn sweep_heading_body<const FMA: bool>(
    plan: &BackupPlan,
    n: usize,
    j: usize,
    reward: &[f64],
    values: &[f64],
    out: &mut [f64],
    scratch: &mut [f64],
    (rows, cols): (usize, usize),
) {
    let (q, max_buf) = scratch.split_at_mut(n * cols);
    for r in 0..rows {
        backup_row(plan, n, j, r, reward, values, q, rows, cols, cols);
        lse_planes::<FMA>(q, n, &mut out[r * cols..(r + 1) * cols], max_buf);
    }
}

/// Last sweep: full Q planes are kept so the policy can be read off them.
/// `scratch` needs `(n + 1) * rows * cols` values.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn final_heading_body<const FMA: bool>(
    plan: &BackupPlan,
    n: usize,
    j: usize,
    reward: &[f64],
    values: &[f64],
    out: &mut [f64],
    policy: &mut [f64],
    scratch: &mut [f64],
    dims: (usize, usize),
) {
    let hw = dims.0 * dims.1;
    let (q, max_buf) = scratch.split_at_mut(n * hw);
    backup_heading(plan, n, j, reward, values, q, dims);
    lse_planes::<FMA>(q, n, out, max_buf);
    policy_from_q::<FMA>(q, out, n, policy);
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use super::BackupPlan;

    #[allow(clippy::too_many_arguments)]
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn sweep_heading(
        plan: &BackupPlan,
        n: usize,
        j: usize,
        reward: &[f64],
        values: &[f64],
        out: &mut [f64],
        scratch: &mut [f64],
        dims: (usize, usize),
    ) {
        super::sweep_heading_body::<true>(plan, n, j, reward, values, out, scratch, dims)
    }

    #[allow(clippy::too_many_arguments)]
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn final_heading(
        plan: &BackupPlan,
        n: usize,
        j: usize,
        reward: &[f64],
        values: &[f64],
        out: &mut [f64],
        policy: &mut [f64],
        scratch: &mut [f64],
        dims: (usize, usize),
    ) {
        super::final_heading_body::<true>(plan, n, j, reward, values, out, policy, scratch, dims)
    }

    pub(super) fn available() -> bool {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_heading(
    plan: &BackupPlan,
    n: usize,
    j: usize,
    reward: &[f64],
    values: &[f64],
    out: &mut [f64],
    scratch: &mut [f64],
    dims: (usize, usize),
) {
    #[cfg(target_arch = "x86_64")]
    if simd::available() {
        // SAFETY: AVX2 and FMA support was checked at runtime just above.
        return unsafe { simd::sweep_heading(plan, n, j, reward, values, out, scratch, dims) };
    }
    sweep_heading_body::<false>(plan, n, j, reward, values, out, scratch, dims)
}

#[allow(clippy::too_many_arguments)]
fn final_heading(
    plan: &BackupPlan,
    n: usize,
    j: usize,
    reward: &[f64],
    values: &[f64],
    out: &mut [f64],
    policy: &mut [f64],
    scratch: &mut [f64],
    dims: (usize, usize),
) {
    #[cfg(target_arch = "x86_64")]
    if simd::available() {
        // SAFETY: AVX2 and FMA support was checked at runtime just above.
        return unsafe {
            simd::final_heading(plan, n, j, reward, values, out, policy, scratch, dims)
        };
    }
    final_heading_body::<false>(plan, n, j, reward, values, out, policy, scratch, dims)
}

/// Plane-wise soft value iteration.
///
/// Runs `iterations` Jacobi sweeps and returns the final value stack (goal
/// pinned to zero) together with the stochastic policy
/// `pi_j^i = exp(Q_j^i - logsumexp_i Q_j^i)` from the last sweep. States that
/// cannot reach the goal within the sweep budget keep [`V_MIN`] and get the
/// uniform policy.
pub fn soft_value_iteration(
    reward: &Plane,
    kernels: &TransitionKernelSet,
    goal: GoalSpec,
    iterations: usize,
) -> Result<(ValueStack, PolicyStack)> {
    check_inputs(reward, goal, iterations)?;
    let (rows, cols) = reward.dims();
    let hw = rows * cols;
    let m = kernels.num_orientations();
    let n = kernels.num_actions();
    let goal_idx = goal.cell.0 * cols + goal.cell.1;
    let plan = BackupPlan::new(kernels);

    let mut v = vec![V_MIN; m * hw];
    clamp_goal(&mut v, m, hw, goal_idx);
    let mut v_next = vec![0.0; m * hw];
    let dims = (rows, cols);
    let r = reward.data();
    let mut scratch = vec![0.0; m * (n + 1) * cols];

    for _ in 0..iterations - 1 {
        v_next
            .par_chunks_mut(hw)
            .zip(scratch.par_chunks_mut((n + 1) * cols))
            .enumerate()
            .for_each(|(j, (out, buf))| sweep_heading(&plan, n, j, r, &v, out, buf, dims));
        clamp_goal(&mut v_next, m, hw, goal_idx);
        std::mem::swap(&mut v, &mut v_next);
    }

    // Last sweep also emits the policy.
    let mut policy = vec![0.0; m * n * hw];
    v_next
        .par_chunks_mut(hw)
        .zip(policy.par_chunks_mut(n * hw))
        .enumerate()
        .for_each(|(j, (out, pol))| {
            let mut buf = vec![0.0; (n + 1) * hw];
            final_heading(&plan, n, j, r, &v, out, pol, &mut buf, dims);
        });
    clamp_goal(&mut v_next, m, hw, goal_idx);

    Ok((
        ValueStack {
            rows,
            cols,
            orientations: m,
            data: v_next,
        },
        PolicyStack {
            rows,
            cols,
            orientations: m,
            actions: n,
            data: policy,
        },
    ))
}

/// Explicit augmented-state transition table: for every `(state, action)` the
/// list of `(successor state, probability)` pairs. State index is
/// `(heading * rows + row) * cols + col`.
pub(crate) struct ExplicitModel {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) orientations: usize,
    pub(crate) actions: usize,
    pub(crate) succ: Vec<Vec<(usize, f64)>>,
}

impl ExplicitModel {
    /// Reads `P(s' | s, a)` off the value kernels (weights divided by the
    /// discount they carry).
    pub(crate) fn from_kernels(kernels: &TransitionKernelSet, rows: usize, cols: usize) -> Self {
        let m = kernels.num_orientations();
        let n = kernels.num_actions();
        let gamma = kernels.gamma();
        let mut succ = Vec::with_capacity(m * rows * cols * n);
        for j in 0..m {
            for r in 0..rows {
                for c in 0..cols {
                    for i in 0..n {
                        let j_next = kernels.next_orientation(j, i);
                        let list = kernels
                            .vi_kernel(j, i)
                            .taps()
                            .into_iter()
                            .filter_map(|(dr, dc, w)| {
                                crate::grid::offset_within(rows, cols, (r, c), dr, dc)
                                    .map(|(r2, c2)| ((j_next * rows + r2) * cols + c2, w / gamma))
                            })
                            .collect();
                        succ.push(list);
                    }
                }
            }
        }
        Self {
            rows,
            cols,
            orientations: m,
            actions: n,
            succ,
        }
    }

    pub(crate) fn states(&self) -> usize {
        self.orientations * self.rows * self.cols
    }

    #[inline]
    pub(crate) fn cell_index(&self, s: usize) -> usize {
        s % (self.rows * self.cols)
    }
}

/// State-by-state soft value iteration on the augmented state space.
///
/// Same contract as [`soft_value_iteration`]; kept as an independent check
/// and as the baseline for timing comparisons.
pub fn reference_value_iteration(
    reward: &Plane,
    kernels: &TransitionKernelSet,
    goal: GoalSpec,
    iterations: usize,
) -> Result<(ValueStack, PolicyStack)> {
    check_inputs(reward, goal, iterations)?;
    let (rows, cols) = reward.dims();
    let model = ExplicitModel::from_kernels(kernels, rows, cols);
    let gamma = kernels.gamma();
    let m = model.orientations;
    let n = model.actions;
    let hw = rows * cols;
    let ns = model.states();
    let goal_idx = goal.cell.0 * cols + goal.cell.1;

    let mut v = vec![V_MIN; ns];
    clamp_goal(&mut v, m, hw, goal_idx);
    let mut v_new = vec![V_MIN; ns];
    let mut q_last = vec![V_MIN; ns * n];
    let mut q = vec![0.0; n];

    for t in 1..=iterations {
        let last = t == iterations;
        for s in 0..ns {
            let r_s = reward.data()[model.cell_index(s)];
            for (a, qa) in q.iter_mut().enumerate() {
                let succ = &model.succ[s * n + a];
                let mut expected = 0.0;
                let mut forbidden = succ.is_empty();
                for &(s2, p) in succ {
                    if v[s2] <= V_MIN {
                        forbidden = true;
                        break;
                    }
                    expected += p * v[s2];
                }
                *qa = if forbidden { V_MIN } else { r_s + gamma * expected };
            }
            v_new[s] = soft_max_reduce(&q);
            if last {
                q_last[s * n..(s + 1) * n].copy_from_slice(&q);
            }
        }
        clamp_goal(&mut v_new, m, hw, goal_idx);
        std::mem::swap(&mut v, &mut v_new);
    }

    // v now holds the clamped final values; the policy uses the unclamped
    // soft maximum of the last Q so that the goal row is normalised too.
    let mut policy = vec![0.0; ns * n];
    for s in 0..ns {
        let qs = &q_last[s * n..(s + 1) * n];
        let lse = soft_max_reduce(qs);
        let j = s / hw;
        let cell = s % hw;
        for (a, &qa) in qs.iter().enumerate() {
            policy[(j * n + a) * hw + cell] = if lse <= V_MIN {
                1.0 / n as f64
            } else {
                (qa - lse).exp()
            };
        }
    }

    Ok((
        ValueStack {
            rows,
            cols,
            orientations: m,
            data: v,
        },
        PolicyStack {
            rows,
            cols,
            orientations: m,
            actions: n,
            data: policy,
        },
    ))
}
