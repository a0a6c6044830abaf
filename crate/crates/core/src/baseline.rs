//! RRT-Connect in joint space with a rectangular-profile time
//! parameterization, used as the online baseline.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::Clock;
use crate::collision::Obstacle;
use crate::kinematics::ManipulatorModel;
use crate::JointVec;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RrtError {
    #[error("planning budget exhausted")]
    Timeout,
    #[error("invalid planning request: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrtParams {
    /// Maximum joint-space extension per step (rad, Euclidean).
    pub step: f64,
    /// Probability of sampling the other tree's root.
    pub goal_bias: f64,
    /// Wall-clock budget (s).
    pub time_budget: f64,
    /// Largest per-joint change between collision checks (rad).
    pub check_resolution: f64,
    pub seed: u64,
    /// Greedy shortcutting of the returned path.
    pub shortcut: bool,
}

impl Default for RrtParams {
    fn default() -> Self {
        Self {
            step: 0.2,
            goal_bias: 0.05,
            time_budget: 2.0,
            check_resolution: 0.02,
            seed: 0,
            shortcut: false,
        }
    }
}

/// Step as a fraction of the joint-space diagonal, the usual library
/// default for RRT-Connect's range.
pub const RANGE_FRACTION: f64 = 0.2;

impl RrtParams {
    /// Defaults with `step = RANGE_FRACTION * |joint-limit diagonal|`.
    pub fn for_model(model: &ManipulatorModel) -> Self {
        Self {
            step: RANGE_FRACTION * joint_space_extent(model),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RrtError> {
        if !(self.step > 0.0) || !(self.check_resolution > 0.0) {
            return Err(RrtError::Invalid(
                "step and check resolution must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(RrtError::Invalid("goal bias outside [0, 1]"));
        }
        if !(self.time_budget >= 0.0) {
            return Err(RrtError::Invalid("negative time budget"));
        }
        Ok(())
    }
}

/// Euclidean length of the joint-limit box diagonal.
pub fn joint_space_extent(model: &ManipulatorModel) -> f64 {
    model
        .joint_limits
        .iter()
        .map(|(lo, hi)| (hi - lo) * (hi - lo))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrtPath {
    pub waypoints: Vec<JointVec>,
    /// Samples drawn before the trees connected.
    pub iterations: usize,
}

struct Tree {
    nodes: Vec<JointVec>,
    parent: Vec<usize>,
}

impl Tree {
    fn new(root: JointVec) -> Self {
        Self {
            nodes: vec![root],
            parent: vec![0],
        }
    }

    fn nearest(&self, q: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = dist2(n, q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn push(&mut self, q: JointVec, parent: usize) -> usize {
        self.nodes.push(q);
        self.parent.push(parent);
        self.nodes.len() - 1
    }

    /// Root-to-node path.
    fn path_to(&self, mut i: usize) -> Vec<JointVec> {
        let mut out = vec![self.nodes[i].clone()];
        while i != 0 {
            i = self.parent[i];
            out.push(self.nodes[i].clone());
        }
        out.reverse();
        out
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Straight joint-space segment checked at `resolution`, endpoints
/// included.
pub fn segment_free(
    model: &ManipulatorModel,
    a: &[f64],
    b: &[f64],
    obstacles: &[Obstacle],
    resolution: f64,
) -> bool {
    let span = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let n = (span / resolution).ceil().max(1.0) as usize;
    let mut q = vec![0.0; a.len()];
    (0..=n).all(|i| {
        let s = i as f64 / n as f64;
        for (j, v) in q.iter_mut().enumerate() {
            *v = a[j] + s * (b[j] - a[j]);
        }
        model.within_limits(&q) && !model.in_collision(&q, obstacles)
    })
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

fn extend(
    tree: &mut Tree,
    target: &[f64],
    model: &ManipulatorModel,
    obstacles: &[Obstacle],
    params: &RrtParams,
) -> Extend {
    let near = tree.nearest(target);
    let from = &tree.nodes[near];
    let d = dist2(from, target).sqrt();
    let (q, reached) = if d <= params.step {
        (target.to_vec(), true)
    } else {
        let s = params.step / d;
        (
            from.iter()
                .zip(target)
                .map(|(a, b)| a + s * (b - a))
                .collect(),
            false,
        )
    };
    if !segment_free(model, from, &q, obstacles, params.check_resolution) {
        return Extend::Trapped;
    }
    let i = tree.push(q, near);
    if reached {
        Extend::Reached(i)
    } else {
        Extend::Advanced(i)
    }
}

fn connect(
    tree: &mut Tree,
    target: &[f64],
    model: &ManipulatorModel,
    obstacles: &[Obstacle],
    params: &RrtParams,
) -> Extend {
    loop {
        match extend(tree, target, model, obstacles, params) {
            Extend::Advanced(_) => continue,
            other => return other,
        }
    }
}

/// Bidirectional RRT-Connect from `start` to `goal`. Trees swap roles
/// after every sample.
pub fn rrt_connect(
    model: &ManipulatorModel,
    start: &[f64],
    goal: &[f64],
    obstacles: &[Obstacle],
    params: &RrtParams,
    clock: &dyn Clock,
) -> Result<RrtPath, RrtError> {
    params.validate()?;
    let t0 = clock.now();
    for q in [start, goal] {
        if q.len() != model.dof() || !model.within_limits(q) {
            return Err(RrtError::Invalid("endpoint outside the joint limits"));
        }
        if model.in_collision(q, obstacles) {
            return Err(RrtError::Invalid("endpoint in collision"));
        }
    }
    if start == goal {
        return Ok(RrtPath {
            waypoints: vec![start.to_vec()],
            iterations: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut a = Tree::new(start.to_vec());
    let mut b = Tree::new(goal.to_vec());
    // true while `a` is rooted at the start
    let mut a_is_start = true;
    let mut iterations = 0;
    let mut sample = vec![0.0; model.dof()];
    while clock.now() - t0 < params.time_budget {
        iterations += 1;
        if rng.gen::<f64>() < params.goal_bias {
            sample.copy_from_slice(&b.nodes[0]);
        } else {
            for (v, &(lo, hi)) in sample.iter_mut().zip(&model.joint_limits) {
                *v = rng.gen_range(lo..=hi);
            }
        }
        let new = match extend(&mut a, &sample, model, obstacles, params) {
            Extend::Trapped => None,
            Extend::Advanced(i) | Extend::Reached(i) => Some(i),
        };
        if let Some(i) = new {
            let q = a.nodes[i].clone();
            if let Extend::Reached(j) = connect(&mut b, &q, model, obstacles, params) {
                let mut first = a.path_to(i);
                let mut second = b.path_to(j);
                second.pop();
                second.reverse();
                first.extend(second);
                if !a_is_start {
                    first.reverse();
                }
                if params.shortcut {
                    first = shortcut(model, &first, obstacles, params.check_resolution);
                }
                return Ok(RrtPath {
                    waypoints: first,
                    iterations,
                });
            }
        }
        core::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(RrtError::Timeout)
}

/// Greedy shortcutting: from each kept waypoint jump to the farthest
/// later waypoint reachable by a free straight segment.
pub fn shortcut(
    model: &ManipulatorModel,
    path: &[JointVec],
    obstacles: &[Obstacle],
    resolution: f64,
) -> Vec<JointVec> {
    let mut out = vec![path[0].clone()];
    let mut i = 0;
    while i + 1 < path.len() {
        let mut j = path.len() - 1;
        while j > i + 1 && !segment_free(model, &path[i], &path[j], obstacles, resolution) {
            j -= 1;
        }
        out.push(path[j].clone());
        i = j;
    }
    out
}

/// Waypoints with arrival times.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub waypoints: Vec<JointVec>,
    pub times: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn evaluate(&self, t: f64) -> JointVec {
        let k = self.times.partition_point(|&ti| ti <= t);
        if k == 0 {
            return self.waypoints[0].clone();
        }
        if k == self.times.len() {
            return self.waypoints[k - 1].clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let s = (t - t0) / (t1 - t0);
        let (a, b) = (&self.waypoints[k - 1], &self.waypoints[k]);
        a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
    }
}

/// Rectangular velocity profile: each segment takes the slowest joint's
/// `|dq| / vmax`.
pub fn time_parameterize(path: &[JointVec], velocity_limits: &[f64]) -> (f64, PiecewiseLinear) {
    let mut times = Vec::with_capacity(path.len());
    let mut t = 0.0;
    for (k, q) in path.iter().enumerate() {
        if k > 0 {
            t += q
                .iter()
                .zip(&path[k - 1])
                .zip(velocity_limits)
                .map(|((a, b), v)| (a - b).abs() / v)
                .fold(0.0, f64::max);
        }
        times.push(t);
    }
    (
        t,
        PiecewiseLinear {
            waypoints: path.to_vec(),
            times,
        },
    )
}
