//! Lattice search interleaved with trajectory optimization.
//!
//! The low-dimensional graph is a joint-position lattice anchored at the
//! start configuration. Expanding a node generates `±1` lattice steps per
//! joint; each successor is connected by optimizing from every ancestor of
//! the expanded node (nearest first) and, when that local trajectory is
//! valid, re-optimizing the whole path from the start warm-started with
//! the concatenation. Node cost is the cost of the full start-to-node
//! trajectory and starts at `+inf`.
//!
//! A node within one lattice step (per joint) of a goal configuration
//! triggers the same ancestor loop toward the exact goal configuration;
//! the first goal connection that validates ends the search.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::clock::Clock;
use crate::collision::Obstacle;
use crate::geometry::ShieldGoalPose;
use crate::kinematics::{IkParams, JointState, ManipulatorModel, IK_TOLERANCE};
use crate::spline::BSplineTrajectory;
use crate::trajopt::{
    optimize, optimize_with_warm_start, TrajOptProblem, TrajOptResult, TrajOptSettings,
};
use crate::JointVec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("no goal pose has an inverse kinematics solution")]
    NoIkSolution,
    #[error("search space exhausted without reaching a goal")]
    SearchExhausted,
    #[error("planning budget exceeded")]
    Timeout,
    #[error("invalid planning request: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsatParams {
    /// Lattice spacing per joint (rad).
    pub resolution: f64,
    /// Heuristic inflation of weighted A*.
    pub weight: f64,
    /// Stop the ancestor loop at the first valid warm-started trajectory.
    pub first_valid_ancestor: bool,
    /// Try one direct optimization to each goal before searching.
    pub direct_first: bool,
    pub max_expansions: usize,
    /// Wall-clock budget per plan call (s).
    pub time_budget: f64,
    pub trajopt: TrajOptSettings,
    pub ik: IkParams,
}

impl Default for InsatParams {
    fn default() -> Self {
        Self {
            resolution: 7.5f64.to_radians(),
            weight: 3.0,
            first_valid_ancestor: false,
            direct_first: true,
            max_expansions: 2_000,
            time_budget: 10.0,
            trajopt: TrajOptSettings::default(),
            ik: IkParams::default(),
        }
    }
}

impl InsatParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.resolution > 0.0) {
            return Err(PlanError::Invalid("resolution must be positive"));
        }
        if !(self.weight >= 1.0) {
            return Err(PlanError::Invalid("heuristic weight must be >= 1"));
        }
        if !(self.time_budget > 0.0) {
            return Err(PlanError::Invalid("time budget must be positive"));
        }
        self.trajopt
            .validate()
            .map_err(|_| PlanError::Invalid("invalid trajectory optimization settings"))
    }
}

/// Lattice state: `q = origin + coords * resolution`, `origin` being the
/// start configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LowDState {
    pub coords: Vec<i32>,
    pub q: JointVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub origin: JointVec,
    pub resolution: f64,
}

impl Lattice {
    pub fn state(&self, coords: Vec<i32>) -> LowDState {
        let q = self
            .origin
            .iter()
            .zip(&coords)
            .map(|(o, &c)| o + c as f64 * self.resolution)
            .collect();
        LowDState { coords, q }
    }
}

/// `±1` step per joint, dropping states outside the joint limits or in
/// collision. Order: joint 0 `+`, joint 0 `-`, joint 1 `+`, ...
pub fn successors(
    model: &ManipulatorModel,
    obstacles: &[Obstacle],
    lattice: &Lattice,
    state: &LowDState,
) -> Vec<LowDState> {
    let mut out = Vec::with_capacity(2 * state.coords.len());
    for j in 0..state.coords.len() {
        for step in [1, -1] {
            let mut coords = state.coords.clone();
            coords[j] += step;
            let next = lattice.state(coords);
            if model.within_limits(&next.q) && !model.in_collision(&next.q, obstacles) {
                out.push(next);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub state: LowDState,
    /// Cost of `trajectory`; `+inf` until a valid one is stored.
    pub cost: f64,
    pub parent: Option<usize>,
    /// Valid trajectory from the start to this state (`None` at the start).
    pub trajectory: Option<BSplineTrajectory>,
    closed: bool,
}

/// Nodes of one search; index 0 is the start.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
}

impl SearchTree {
    /// Parent chain from the node's immediate parent back to the start.
    pub fn ancestors(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.nodes[node].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub trajectory: BSplineTrajectory,
    pub cost: f64,
    /// Index into the goal list that was reached.
    pub goal_index: usize,
    pub expansions: usize,
    /// `f` value of each expanded node in expansion order.
    pub expansion_f: Vec<f64>,
}

/// Planner interface used by the database builder.
pub trait MotionPlanner {
    /// Plans from `start` to any of `goals`, ending at rest.
    fn plan_to_configs(
        &self,
        model: &ManipulatorModel,
        obstacles: &[Obstacle],
        start: &JointState,
        goals: &[JointVec],
        clock: &dyn Clock,
    ) -> Result<Plan, PlanError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Insat {
    pub params: InsatParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OpenEntry {
    f: f64,
    seq: u64,
    node: usize,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    // min-heap on (f, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'a> {
    model: &'a ManipulatorModel,
    obstacles: &'a [Obstacle],
    params: &'a InsatParams,
    start: &'a JointState,
    clock: &'a dyn Clock,
    deadline: f64,
}

impl Search<'_> {
    fn timed_out(&self) -> bool {
        self.clock.now() > self.deadline
    }

    /// Optimizes from `from` (the start state when `from_start`) to `to`
    /// at rest.
    fn trajopt(&self, from: &[f64], from_start: bool, to: &[f64]) -> Option<TrajOptResult> {
        let n = from.len();
        let problem = TrajOptProblem {
            model: self.model,
            obstacles: self.obstacles,
            x0: from.to_vec(),
            xf: to.to_vec(),
            xdot0: if from_start {
                self.start.qdot.clone()
            } else {
                vec![0.0; n]
            },
            xdotf: vec![0.0; n],
            settings: self.params.trajopt,
        };
        optimize(&problem, None).ok()
    }

    /// Ancestor loop: best valid start-to-`target` trajectory through any
    /// of `preds` (nearest first).
    fn connect(
        &self,
        tree: &SearchTree,
        preds: &[usize],
        target: &[f64],
    ) -> Option<(BSplineTrajectory, f64, usize)> {
        let mut best: Option<(BSplineTrajectory, f64, usize)> = None;
        for &p in preds {
            if self.timed_out() {
                break;
            }
            let pred = &tree.nodes[p];
            let from_start = pred.trajectory.is_none();
            let Some(result) = self.trajopt(&pred.state.q, from_start, target) else {
                continue;
            };
            // the iterate cache recovers a valid trajectory when the final
            // iterate regressed
            let Some((local, local_cost)) = result.usable() else {
                continue;
            };
            let candidate = match &pred.trajectory {
                None => Some((local.clone(), local_cost)),
                Some(prefix) => {
                    let n = target.len();
                    let problem = TrajOptProblem {
                        model: self.model,
                        obstacles: self.obstacles,
                        x0: self.start.q.clone(),
                        xf: target.to_vec(),
                        xdot0: self.start.qdot.clone(),
                        xdotf: vec![0.0; n],
                        settings: self.params.trajopt,
                    };
                    optimize_with_warm_start(prefix, local, &problem)
                        .ok()
                        .and_then(|r| r.usable().map(|(t, c)| (t.clone(), c)))
                }
            };
            if let Some((traj, cost)) = candidate {
                if best.as_ref().is_none_or(|(_, c, _)| cost < *c) {
                    best = Some((traj, cost, p));
                }
                if self.params.first_valid_ancestor {
                    break;
                }
            }
        }
        best
    }
}

impl Insat {
    pub fn new(params: InsatParams) -> Self {
        Self { params }
    }

    /// IK for each goal pose, then search. Goals whose IK solutions are
    /// all in collision are dropped; if that leaves none the search space
    /// holds no goal and the result is `SearchExhausted`.
    pub fn plan(
        &self,
        model: &ManipulatorModel,
        start: &JointVec,
        goal_poses: &[ShieldGoalPose],
        obstacles: &[Obstacle],
        clock: &dyn Clock,
    ) -> Result<Plan, PlanError> {
        let mut reachable = false;
        let mut configs = Vec::new();
        let mut pose_of = Vec::new();
        for (k, pose) in goal_poses.iter().enumerate() {
            let target = pose.to_pose();
            let tol = IK_TOLERANCE;
            if model
                .inverse_kinematics(&target, start, &tol, &self.params.ik)
                .is_err()
            {
                continue;
            }
            reachable = true;
            let free =
                model.inverse_kinematics_filtered(&target, start, &tol, &self.params.ik, |q| {
                    !model.in_collision(q, obstacles)
                });
            if let Ok(sol) = free {
                configs.push(sol.q);
                pose_of.push(k);
            }
        }
        if !reachable {
            return Err(PlanError::NoIkSolution);
        }
        if configs.is_empty() {
            return Err(PlanError::SearchExhausted);
        }
        let mut plan = self.plan_to_configs(
            model,
            obstacles,
            &JointState::at_rest(start.clone()),
            &configs,
            clock,
        )?;
        plan.goal_index = pose_of[plan.goal_index];
        Ok(plan)
    }

    /// Runs the search and also returns the search tree.
    pub fn search(
        &self,
        model: &ManipulatorModel,
        obstacles: &[Obstacle],
        start: &JointState,
        goals: &[JointVec],
        clock: &dyn Clock,
    ) -> (Result<Plan, PlanError>, SearchTree) {
        let mut tree = SearchTree::default();
        let p = &self.params;
        if let Err(e) = p.validate() {
            return (Err(e), tree);
        }
        let dof = model.dof();
        if start.q.len() != dof || start.qdot.len() != dof || goals.iter().any(|g| g.len() != dof) {
            return (Err(PlanError::Invalid("dimension mismatch")), tree);
        }
        if goals.is_empty() {
            return (Err(PlanError::Invalid("no goal configurations")), tree);
        }
        if !model.within_limits(&start.q) || model.in_collision(&start.q, obstacles) {
            return (
                Err(PlanError::Invalid("start outside limits or in collision")),
                tree,
            );
        }
        let search = Search {
            model,
            obstacles,
            params: p,
            start,
            clock,
            deadline: clock.now() + p.time_budget,
        };
        let goal_positions: Vec<_> = goals
            .iter()
            .map(|g| {
                model
                    .forward_kinematics(g)
                    .map(|fk| fk.ee.translation.vector)
            })
            .collect::<Result<_, _>>()
            .unwrap_or_default();
        let speed = model.max_tool_speed();
        let heuristic = |q: &[f64]| -> f64 {
            let Ok(fk) = model.forward_kinematics(q) else {
                return f64::INFINITY;
            };
            let pos = fk.ee.translation.vector;
            goal_positions
                .iter()
                .map(|g| (g - pos).norm())
                .fold(f64::INFINITY, f64::min)
                / speed
        };
        let lattice = Lattice {
            origin: start.q.clone(),
            resolution: p.resolution,
        };
        let start_state = lattice.state(vec![0; dof]);
        tree.nodes.push(SearchNode {
            state: start_state,
            cost: 0.0,
            parent: None,
            trajectory: None,
            closed: false,
        });
        let mut index: BTreeMap<Vec<i32>, usize> = BTreeMap::new();
        index.insert(vec![0; dof], 0);

        if p.direct_first {
            for (k, g) in goals.iter().enumerate() {
                if search.timed_out() {
                    return (Err(PlanError::Timeout), tree);
                }
                if let Some((trajectory, cost, _)) = search.connect(&tree, &[0], g) {
                    let plan = Plan {
                        trajectory,
                        cost,
                        goal_index: k,
                        expansions: 0,
                        expansion_f: Vec::new(),
                    };
                    return (Ok(plan), tree);
                }
            }
        }

        let mut open = BinaryHeap::new();
        let mut seq = 0u64;
        open.push(OpenEntry {
            f: p.weight * heuristic(&start.q),
            seq,
            node: 0,
        });
        let mut expansions = 0usize;
        let mut expansion_f = Vec::new();
        while let Some(entry) = open.pop() {
            let x = entry.node;
            if tree.nodes[x].closed {
                continue;
            }
            let f_now = tree.nodes[x].cost + p.weight * heuristic(&tree.nodes[x].state.q);
            if entry.f != f_now {
                continue; // stale key
            }
            if search.timed_out() {
                return (Err(PlanError::Timeout), tree);
            }
            if expansions >= p.max_expansions {
                return (Err(PlanError::Timeout), tree);
            }
            tree.nodes[x].closed = true;
            expansions += 1;
            expansion_f.push(entry.f);

            let mut chain = vec![x];
            chain.extend(tree.ancestors(x));
            // goal snap: within one lattice step on every joint
            let xq = tree.nodes[x].state.q.clone();
            for (k, g) in goals.iter().enumerate() {
                let near = xq
                    .iter()
                    .zip(g)
                    .all(|(a, b)| (a - b).abs() <= p.resolution + 1e-12);
                if !near || (x == 0 && p.direct_first) {
                    continue;
                }
                if let Some((trajectory, cost, _)) = search.connect(&tree, &chain, g) {
                    let plan = Plan {
                        trajectory,
                        cost,
                        goal_index: k,
                        expansions,
                        expansion_f,
                    };
                    return (Ok(plan), tree);
                }
            }

            let state = tree.nodes[x].state.clone();
            for next in successors(model, obstacles, &lattice, &state) {
                if search.timed_out() {
                    return (Err(PlanError::Timeout), tree);
                }
                let id = match index.get(&next.coords) {
                    Some(&id) => id,
                    None => {
                        tree.nodes.push(SearchNode {
                            state: next.clone(),
                            cost: f64::INFINITY,
                            parent: None,
                            trajectory: None,
                            closed: false,
                        });
                        index.insert(next.coords.clone(), tree.nodes.len() - 1);
                        tree.nodes.len() - 1
                    }
                };
                if tree.nodes[id].closed || id == 0 {
                    continue;
                }
                if let Some((trajectory, cost, pred)) = search.connect(&tree, &chain, &next.q) {
                    let node = &mut tree.nodes[id];
                    if cost < node.cost {
                        node.cost = cost;
                        node.parent = Some(pred);
                        node.trajectory = Some(trajectory);
                        seq += 1;
                        open.push(OpenEntry {
                            f: cost + p.weight * heuristic(&next.q),
                            seq,
                            node: id,
                        });
                    }
                }
            }
        }
        (Err(PlanError::SearchExhausted), tree)
    }
}

impl MotionPlanner for Insat {
    fn plan_to_configs(
        &self,
        model: &ManipulatorModel,
        obstacles: &[Obstacle],
        start: &JointState,
        goals: &[JointVec],
        clock: &dyn Clock,
    ) -> Result<Plan, PlanError> {
        self.search(model, obstacles, start, goals, clock).0
    }
}
