//! Orientation-augmented grid MDP.
//!
//! A vehicle state is a grid cell plus one of eight compass headings. Each
//! action steers by -45°, 0° or +45° and then drives one cell forward or
//! backward along the *new* heading. Heading updates are deterministic, so the
//! whole transition model collapses to one 3x3 kernel per (heading, action)
//! pair plus a lookup table for the successor heading.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{Cell, GridShape};

/// Discount used when none is given.
pub const DEFAULT_GAMMA: f64 = 0.95;

/// Unit displacement `(dr, dc)` of each compass heading, counter-clockwise
/// from East. Row 0 is the top of the map, so North is `dr = -1`.
const COMPASS8: [(i32, i32); 8] = [
    (0, 1),   // E
    (-1, 1),  // NE
    (-1, 0),  // N
    (-1, -1), // NW
    (0, -1),  // W
    (1, -1),  // SW
    (1, 0),   // S
    (1, 1),   // SE
];

const HEADING_NAMES: [&str; 8] = ["E", "NE", "N", "NW", "W", "SW", "S", "SE"];

/// Discrete vehicle headings at 45° spacing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrientationSet {
    headings: Vec<(i32, i32)>,
}

impl OrientationSet {
    pub fn compass8() -> Self {
        Self {
            headings: COMPASS8.to_vec(),
        }
    }

    pub fn count(&self) -> usize {
        self.headings.len()
    }

    pub fn heading(&self, j: usize) -> Result<(i32, i32)> {
        self.headings
            .get(j)
            .copied()
            .ok_or_else(|| Error::arg(format!("orientation {j} out of range 0..{}", self.count())))
    }

    pub fn name(j: usize) -> &'static str {
        HEADING_NAMES.get(j).copied().unwrap_or("?")
    }

    /// Index of the heading whose unit step is `(dr, dc)`.
    pub fn index_of(&self, dr: i32, dc: i32) -> Option<usize> {
        self.headings.iter().position(|&h| h == (dr, dc))
    }
}

impl Default for OrientationSet {
    fn default() -> Self {
        Self::compass8()
    }
}

/// Steering command relative to the current heading. Positive is
/// counter-clockwise (a left turn).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Steer {
    Right,
    Straight,
    Left,
}

impl Steer {
    /// Heading index change, in 45° steps.
    pub fn steps(self) -> i32 {
        match self {
            Steer::Right => -1,
            Steer::Straight => 0,
            Steer::Left => 1,
        }
    }

    pub fn degrees(self) -> i32 {
        self.steps() * 45
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub steer: Steer,
    pub direction: Direction,
}

impl Action {
    pub const fn new(steer: Steer, direction: Direction) -> Self {
        Self { steer, direction }
    }
}

/// Ordered list of actions. Action indices refer to positions in this list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSet {
    actions: Vec<Action>,
}

impl ActionSet {
    /// The six steer/direction combinations. Straight-forward is index 0.
    pub fn standard() -> Self {
        use Direction::*;
        use Steer::*;
        Self {
            actions: vec![
                Action::new(Straight, Forward),
                Action::new(Left, Forward),
                Action::new(Right, Forward),
                Action::new(Straight, Backward),
                Action::new(Left, Backward),
                Action::new(Right, Backward),
            ],
        }
    }

    /// The three forward actions only.
    pub fn forward_only() -> Self {
        Self {
            actions: Self::standard().actions[..3].to_vec(),
        }
    }

    pub fn new(actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::arg("action set must not be empty"));
        }
        for (i, a) in actions.iter().enumerate() {
            if actions[..i].contains(a) {
                return Err(Error::arg(format!("duplicate action {a:?}")));
            }
        }
        Ok(Self { actions })
    }

    pub fn count(&self) -> usize {
        self.actions.len()
    }

    pub fn get(&self, i: usize) -> Result<Action> {
        self.actions
            .get(i)
            .copied()
            .ok_or_else(|| Error::arg(format!("action {i} out of range 0..{}", self.count())))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        Self::standard()
    }
}

/// Heading after applying `action` at heading `j`. Driving direction does not
/// affect the heading update.
pub fn next_orientation(orients: &OrientationSet, j: usize, action: Action) -> Result<usize> {
    let m = orients.count();
    if j >= m {
        return Err(Error::arg(format!("orientation {j} out of range 0..{m}")));
    }
    Ok((j as i32 + action.steer.steps()).rem_euclid(m as i32) as usize)
}

/// Cell displacement for one move along heading `j_next`.
pub fn displacement(orients: &OrientationSet, j_next: usize, direction: Direction) -> Result<(i32, i32)> {
    let (dr, dc) = orients.heading(j_next)?;
    Ok(match direction {
        Direction::Forward => (dr, dc),
        Direction::Backward => (-dr, -dc),
    })
}

/// 3x3 correlation kernel. `w[1][1]` is the centre tap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel3 {
    pub w: [[f64; 3]; 3],
}

impl Kernel3 {
    pub fn zero() -> Self {
        Self { w: [[0.0; 3]; 3] }
    }

    fn single(dr: i32, dc: i32, weight: f64) -> Self {
        let mut k = Self::zero();
        k.w[(dr + 1) as usize][(dc + 1) as usize] = weight;
        k
    }

    /// Non-zero entries as `(dr, dc, weight)` offsets from the centre.
    pub fn taps(&self) -> Vec<(i32, i32, f64)> {
        let mut out = Vec::new();
        for (u, row) in self.w.iter().enumerate() {
            for (v, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    out.push((u as i32 - 1, v as i32 - 1, w));
                }
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().flatten().sum()
    }

    /// Kernel rotated by 180°.
    pub fn flipped(&self) -> Self {
        let mut k = Self::zero();
        for u in 0..3 {
            for v in 0..3 {
                k.w[2 - u][2 - v] = self.w[u][v];
            }
        }
        k
    }
}

/// The kinematic transition model: one value-iteration kernel (carrying the
/// discount) and one visitation kernel (weight 1, spatially flipped) per
/// (heading, action) pair, plus the successor-heading table.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernelSet {
    orients: OrientationSet,
    actions: ActionSet,
    gamma: f64,
    vi: Vec<Kernel3>,
    svf: Vec<Kernel3>,
    next: Vec<usize>,
    offsets: Vec<(i32, i32)>,
}

impl TransitionKernelSet {
    /// Standard 8 headings x 6 actions.
    pub fn standard(gamma: f64) -> Result<Self> {
        build_transition_kernels(&OrientationSet::compass8(), &ActionSet::standard(), gamma)
    }

    pub fn orientations(&self) -> &OrientationSet {
        &self.orients
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn num_orientations(&self) -> usize {
        self.orients.count()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.count()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    fn idx(&self, j: usize, i: usize) -> usize {
        debug_assert!(j < self.num_orientations() && i < self.num_actions());
        j * self.actions.count() + i
    }

    pub fn vi_kernel(&self, j: usize, i: usize) -> &Kernel3 {
        &self.vi[self.idx(j, i)]
    }

    pub fn svf_kernel(&self, j: usize, i: usize) -> &Kernel3 {
        &self.svf[self.idx(j, i)]
    }

    /// Successor heading `g(j, i)`.
    #[inline]
    pub fn next_orientation(&self, j: usize, i: usize) -> usize {
        self.next[self.idx(j, i)]
    }

    /// Cell displacement produced by action `i` at heading `j`.
    #[inline]
    pub fn offset(&self, j: usize, i: usize) -> (i32, i32) {
        self.offsets[self.idx(j, i)]
    }

    /// Deterministic successor of `(cell, j)` under action `i` on a
    /// `rows x cols` map, or `None` if the move leaves the map.
    pub fn step(&self, rows: usize, cols: usize, cell: Cell, j: usize, i: usize) -> Option<(Cell, usize)> {
        let (dr, dc) = self.offset(j, i);
        crate::grid::offset_within(rows, cols, cell, dr, dc).map(|c| (c, self.next_orientation(j, i)))
    }

    /// Index of the action that moves `(from, j)` to `to`, if any.
    pub fn action_between(&self, from: Cell, j: usize, to: Cell, j_to: usize) -> Option<usize> {
        let dr = to.0 as i64 - from.0 as i64;
        let dc = to.1 as i64 - from.1 as i64;
        (0..self.num_actions()).find(|&i| {
            let (odr, odc) = self.offset(j, i);
            odr as i64 == dr && odc as i64 == dc && self.next_orientation(j, i) == j_to
        })
    }

    /// Text listing of every kernel pair, one line per (heading, action).
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for j in 0..self.num_orientations() {
            for i in 0..self.num_actions() {
                let (dr, dc) = self.offset(j, i);
                let _ = writeln!(
                    out,
                    "({j},{i}) -> offset({dr},{dc}), next_j {}, weight {}",
                    self.next_orientation(j, i),
                    self.vi_kernel(j, i).sum()
                );
            }
        }
        out
    }
}

/// Builds the kernel pairs for every (heading, action) combination.
///
/// `gamma` must lie in `(0, 1]`: a zero discount would leave the value
/// kernels without support, and `1` is well posed because value iteration
/// always runs a fixed number of sweeps towards an absorbing goal.
pub fn build_transition_kernels(
    orients: &OrientationSet,
    actions: &ActionSet,
    gamma: f64,
) -> Result<TransitionKernelSet> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::arg(format!("discount must lie in (0, 1], got {gamma}")));
    }
    let m = orients.count();
    let n = actions.count();
    let mut vi = Vec::with_capacity(m * n);
    let mut svf = Vec::with_capacity(m * n);
    let mut next = Vec::with_capacity(m * n);
    let mut offsets = Vec::with_capacity(m * n);
    for j in 0..m {
        for a in actions.iter() {
            let j_next = next_orientation(orients, j, *a)?;
            let (dr, dc) = displacement(orients, j_next, a.direction)?;
            if dr.abs() > 1 || dc.abs() > 1 || (dr, dc) == (0, 0) {
                return Err(Error::arg(format!("heading {j_next} is not a unit move")));
            }
            vi.push(Kernel3::single(dr, dc, gamma));
            svf.push(Kernel3::single(-dr, -dc, 1.0));
            next.push(j_next);
            offsets.push((dr, dc));
        }
    }
    Ok(TransitionKernelSet {
        orients: orients.clone(),
        actions: actions.clone(),
        gamma,
        vi,
        svf,
        next,
        offsets,
    })
}

/// Terminal cell shared by every heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoalSpec {
    pub cell: Cell,
}

impl GoalSpec {
    pub fn new(cell: Cell, rows: usize, cols: usize) -> Result<Self> {
        if cell.0 >= rows || cell.1 >= cols {
            return Err(Error::arg(format!(
                "goal {cell:?} outside {rows}x{cols} grid"
            )));
        }
        Ok(Self { cell })
    }

    pub fn within(cell: Cell, shape: &GridShape) -> Result<Self> {
        Self::new(cell, shape.rows, shape.cols)
    }
}
