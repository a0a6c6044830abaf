//! Offline preprocessing: the tunnel-indexed trajectory database, the
//! replan tensor for mid-execution goal switching, the coverage audit and
//! the binary file format.
//!
//! File layout (little-endian, all floats `f64`): magic `CTMPDB01`,
//! `u32` version, 32-byte config fingerprint, `u32` tunnel count, then one
//! length-prefixed record per tunnel, then the replan tensor.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::clock::Clock;
use crate::collision::Obstacle;
use crate::geometry::{
    discretize_domes, enumerate_tunnels, sample_goal_poses, shield_blocks_tunnel, DomeConfig,
    ShieldGoalPose, Tunnel,
};
use crate::insat::MotionPlanner;
use crate::kinematics::{IkParams, JointState, ManipulatorModel, IK_TOLERANCE};
use crate::spline::BSplineTrajectory;
use crate::trajopt::{validate, TrajOptProblem, TrajOptSettings, TrajOptStatus};
use crate::{JointVec, Vec3};

pub const MAGIC: &[u8; 8] = b"CTMPDB01";
pub const FORMAT_VERSION: u32 = 1;
pub const MAX_REPLAN_DEPTH: u32 = 3;

pub type Fingerprint = [u8; 32];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatabaseError {
    #[error("configuration error: {0}")]
    Config(alloc::string::String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryStatus {
    Covered,
    Unreachable,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseEntry {
    pub status: EntryStatus,
    pub trajectory: Option<BSplineTrajectory>,
    /// Which sampled goal pose of the tunnel the stored trajectory reaches.
    pub goal_pose_index: Option<u32>,
    /// Duration of the stored trajectory; `+inf` when not covered.
    pub tf: f64,
}

impl DatabaseEntry {
    fn empty(status: EntryStatus) -> Self {
        Self {
            status,
            trajectory: None,
            goal_pose_index: None,
            tf: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDatabase {
    pub version: u32,
    pub fingerprint: Fingerprint,
    /// Dense, indexed by tunnel id.
    pub entries: Vec<DatabaseEntry>,
}

impl TrajectoryDatabase {
    pub fn covered(&self) -> impl Iterator<Item = (u32, &DatabaseEntry)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.status == EntryStatus::Covered)
            .map(|(i, e)| (i as u32, e))
    }

    pub fn count(&self, status: EntryStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildParams {
    /// Goal poses sampled per tunnel centerline.
    pub goals_per_tunnel: usize,
    pub goal_margin: f64,
    pub ik: IkParams,
    /// States sampled per trajectory for the replan tensor (`K`).
    pub replan_states: u32,
    pub replan_depth: u32,
    /// Only targets whose goal position lies within this distance (m) of
    /// the source's goal position get a tensor entry.
    pub replan_radius: f64,
    /// Keep transition trajectories; otherwise only feasibility is stored
    /// (depth must then be at most 1).
    pub store_transitions: bool,
    /// Rays for the blocking checks of the build and the audit.
    pub audit_rays: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            goals_per_tunnel: 3,
            goal_margin: crate::geometry::DEFAULT_GOAL_MARGIN,
            ik: IkParams::default(),
            replan_states: 3,
            replan_depth: 1,
            replan_radius: 0.2,
            store_transitions: true,
            audit_rays: 10_000,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<(), DatabaseError> {
        let err = |m: &str| Err(DatabaseError::Config(m.into()));
        if self.goals_per_tunnel == 0 {
            return err("goals_per_tunnel must be at least 1");
        }
        if self.replan_states == 0 {
            return err("replan_states must be at least 1");
        }
        if self.replan_depth > MAX_REPLAN_DEPTH {
            return err("replan_depth above the hard cap of 3");
        }
        if !self.store_transitions && self.replan_depth > 1 {
            return err("replan_depth above 1 needs stored transitions");
        }
        if !(self.replan_radius >= 0.0) || !(self.goal_margin >= 0.0) {
            return err("replan_radius and goal_margin must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttemptOutcome {
    /// The sampled pose itself leaves rays through the tunnel (slanted
    /// tunnels near their ends); not planned.
    PoseNotBlocking,
    NoIk,
    PlanFailed,
    /// Planned, but the end pose within IK tolerance no longer blocks.
    EndNotBlocking {
        tf: f64,
    },
    Planned {
        tf: f64,
    },
}

/// Build-time record of every goal pose tried for one tunnel.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub tunnel: u32,
    pub attempts: Vec<AttemptOutcome>,
    pub stored: Option<u32>,
}

/// Everything the builder needs besides the planner.
#[derive(Debug, Clone, Copy)]
pub struct BuildContext<'a> {
    pub model: &'a ManipulatorModel,
    pub home: &'a [f64],
    pub config: &'a DomeConfig,
    pub obstacles: &'a [Obstacle],
    pub params: &'a BuildParams,
}

impl BuildContext<'_> {
    pub fn check(&self) -> Result<(), DatabaseError> {
        self.params.validate()?;
        self.config
            .validate()
            .map_err(|e| DatabaseError::Config(alloc::format!("{e}")))?;
        self.model
            .validate()
            .map_err(|e| DatabaseError::Config(alloc::format!("{e}")))?;
        if self.home.len() != self.model.dof() || !self.model.within_limits(self.home) {
            return Err(DatabaseError::Config(
                "home configuration outside the joint limits".into(),
            ));
        }
        if self.model.in_collision(self.home, self.obstacles) {
            return Err(DatabaseError::Config(
                "home configuration in collision".into(),
            ));
        }
        Ok(())
    }
}

/// Plans to every goal pose of one tunnel and keeps the least-time plan.
pub fn build_tunnel_entry(
    planner: &dyn MotionPlanner,
    ctx: &BuildContext<'_>,
    tunnel: &Tunnel,
    clock: &dyn Clock,
) -> (DatabaseEntry, AuditRecord) {
    let mut record = AuditRecord {
        tunnel: tunnel.id,
        attempts: Vec::new(),
        stored: None,
    };
    let Ok(poses) = sample_goal_poses(
        tunnel,
        ctx.config,
        ctx.params.goals_per_tunnel,
        ctx.params.goal_margin,
    ) else {
        return (DatabaseEntry::empty(EntryStatus::Infeasible), record);
    };
    let model = ctx.model;
    let start = JointState::at_rest(ctx.home.to_vec());
    let mut best: Option<(f64, u32, BSplineTrajectory)> = None;
    let rays = ctx.params.audit_rays;
    for (k, pose) in poses.iter().enumerate() {
        if !shield_blocks_tunnel(pose, tunnel, ctx.config, rays) {
            record.attempts.push(AttemptOutcome::PoseNotBlocking);
            continue;
        }
        let ik = model.inverse_kinematics_filtered(
            &pose.to_pose(),
            ctx.home,
            &IK_TOLERANCE,
            &ctx.params.ik,
            |q| !model.in_collision(q, ctx.obstacles),
        );
        let Ok(sol) = ik else {
            record.attempts.push(AttemptOutcome::NoIk);
            continue;
        };
        match planner.plan_to_configs(model, ctx.obstacles, &start, &[sol.q], clock) {
            Ok(plan) => {
                let tf = plan.trajectory.duration();
                if !shield_blocks_tunnel(
                    &end_pose(model, &plan.trajectory, ctx.config),
                    tunnel,
                    ctx.config,
                    rays,
                ) {
                    record.attempts.push(AttemptOutcome::EndNotBlocking { tf });
                    continue;
                }
                record.attempts.push(AttemptOutcome::Planned { tf });
                if best.as_ref().is_none_or(|(b, _, _)| tf < *b) {
                    best = Some((tf, k as u32, plan.trajectory));
                }
            }
            Err(_) => record.attempts.push(AttemptOutcome::PlanFailed),
        }
    }
    match best {
        Some((tf, k, trajectory)) => {
            record.stored = Some(k);
            let entry = DatabaseEntry {
                status: EntryStatus::Covered,
                trajectory: Some(trajectory),
                goal_pose_index: Some(k),
                tf,
            };
            (entry, record)
        }
        None => (DatabaseEntry::empty(EntryStatus::Unreachable), record),
    }
}

/// Feasible and infeasible tunnels of the configured domes, by id.
pub fn dome_tunnels(config: &DomeConfig) -> Result<Vec<Tunnel>, DatabaseError> {
    let cells =
        discretize_domes(config).map_err(|e| DatabaseError::Config(alloc::format!("{e}")))?;
    Ok(enumerate_tunnels(&cells))
}

/// Sequential database build; see [`build_tunnel_entry`] for one tunnel.
pub fn build_database(
    planner: &dyn MotionPlanner,
    ctx: &BuildContext<'_>,
    fingerprint: Fingerprint,
    clock: &dyn Clock,
) -> Result<(TrajectoryDatabase, Vec<AuditRecord>), DatabaseError> {
    ctx.check()?;
    let tunnels = dome_tunnels(ctx.config)?;
    let (entries, audit) = tunnels
        .iter()
        .map(|t| build_tunnel_entry(planner, ctx, t, clock))
        .unzip();
    Ok((
        TrajectoryDatabase {
            version: FORMAT_VERSION,
            fingerprint,
            entries,
        },
        audit,
    ))
}

/// Coverage-soundness failure of one entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditFailure {
    MissingTrajectory,
    DurationMismatch,
    NotFromHome,
    StartVelocity,
    Invalid(TrajOptStatus),
    NotOrthogonal,
    NotBlocking,
}

/// Re-checks one entry: stored trajectory valid from home at rest, shield
/// orthogonal to the centerline at the end, and blocking the tunnel under
/// the brute-force ray oracle.
pub fn audit_entry(
    entry: &DatabaseEntry,
    tunnel: &Tunnel,
    ctx: &BuildContext<'_>,
    settings: &TrajOptSettings,
    n_rays: usize,
) -> Result<(), AuditFailure> {
    if entry.status != EntryStatus::Covered {
        return Ok(());
    }
    let t = entry
        .trajectory
        .as_ref()
        .ok_or(AuditFailure::MissingTrajectory)?;
    if entry.tf != t.duration() {
        return Err(AuditFailure::DurationMismatch);
    }
    if t.start() != ctx.home {
        return Err(AuditFailure::NotFromHome);
    }
    let d = t.derivative().map_err(|_| AuditFailure::StartVelocity)?;
    if d.evaluate_clamped(t.t0()).iter().any(|v| v.abs() > 1e-6) {
        return Err(AuditFailure::StartVelocity);
    }
    let problem = TrajOptProblem::rest_to_rest(
        ctx.model,
        ctx.obstacles,
        t.start().to_vec(),
        t.end().to_vec(),
        *settings,
    );
    match validate(t, &problem) {
        TrajOptStatus::Valid => {}
        s => return Err(AuditFailure::Invalid(s)),
    }
    let end = end_pose(ctx.model, t, ctx.config);
    let angle = end.normal().angle(&(-tunnel.centerline.direction()));
    if angle > end.tolerance.angle {
        return Err(AuditFailure::NotOrthogonal);
    }
    if !shield_blocks_tunnel(&end, tunnel, ctx.config, n_rays) {
        return Err(AuditFailure::NotBlocking);
    }
    Ok(())
}

/// Shield pose reached at the end of `trajectory`.
pub fn end_pose(
    model: &ManipulatorModel,
    trajectory: &BSplineTrajectory,
    config: &DomeConfig,
) -> ShieldGoalPose {
    let fk = model
        .forward_kinematics(trajectory.end())
        .expect("trajectory dimension matches the model");
    let tolerance = crate::geometry::PoseTolerance {
        position: config.pose_tolerance,
        angle: crate::geometry::DEFAULT_GOAL_ANGLE_TOLERANCE,
    };
    ShieldGoalPose::from_pose(&fk.ee, tolerance)
}

/// Which trajectory a tensor row starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    /// The database trajectory of a tunnel.
    Tunnel(u32),
    /// A stored transition (index into [`ReplanTensor::transitions`]).
    Transition(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorEntry {
    pub feasible: bool,
    /// Stored transition; `None` for infeasible entries, for "continue the
    /// current trajectory" entries and when transitions are not stored.
    pub trajectory: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub source: Source,
    pub state: u32,
    pub target: u32,
    pub depth: u32,
    pub trajectory: BSplineTrajectory,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplanTensor {
    pub k: u32,
    pub depth: u32,
    pub transitions: Vec<Transition>,
    /// Sparse table keyed by `(source, state index, target tunnel)`.
    pub table: BTreeMap<(Source, u32, u32), TensorEntry>,
}

impl ReplanTensor {
    pub fn get(&self, source: Source, state: u32, target: u32) -> Option<&TensorEntry> {
        self.table.get(&(source, state, target))
    }
}

/// Normalized time of replan state `k` of `n`.
pub fn state_fraction(k: u32, n: u32) -> f64 {
    if n <= 1 {
        0.0
    } else {
        k as f64 / (n - 1) as f64
    }
}

/// Position and velocity at replan state `k` of `n`.
pub fn sample_state(trajectory: &BSplineTrajectory, k: u32, n: u32) -> JointState {
    let t = trajectory.t0() + state_fraction(k, n) * trajectory.duration();
    let q = trajectory.evaluate_clamped(t);
    let qdot = trajectory
        .derivative()
        .map(|d| d.evaluate_clamped(t))
        .unwrap_or_else(|_| vec![0.0; q.len()]);
    JointState { q, qdot }
}

/// One planning job of the tensor build.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplanJob {
    pub source: Source,
    pub state: u32,
    pub target: u32,
    pub start: JointState,
    pub goal: JointVec,
}

fn goal_position(model: &ManipulatorModel, traj: &BSplineTrajectory) -> Vec3 {
    model
        .forward_kinematics(traj.end())
        .map(|fk| fk.ee.translation.vector)
        .unwrap_or_else(|_| Vec3::repeat(f64::NAN))
}

/// Jobs for one tensor level: every `(source, k)` state toward every
/// covered tunnel within the replan radius, other than the source's own
/// target (which is a "continue" entry).
pub fn replan_jobs(
    db: &TrajectoryDatabase,
    sources: &[(Source, u32, &BSplineTrajectory)],
    model: &ManipulatorModel,
    params: &BuildParams,
) -> Vec<ReplanJob> {
    let targets: Vec<(u32, Vec3, JointVec)> = db
        .covered()
        .filter_map(|(id, e)| {
            e.trajectory
                .as_ref()
                .map(|t| (id, goal_position(model, t), t.end().to_vec()))
        })
        .collect();
    let mut jobs = Vec::new();
    for &(source, own, traj) in sources {
        let here = goal_position(model, traj);
        for k in 0..params.replan_states {
            let start = sample_state(traj, k, params.replan_states);
            for (id, pos, goal) in &targets {
                if *id == own || (pos - here).norm() > params.replan_radius {
                    continue;
                }
                jobs.push(ReplanJob {
                    source,
                    state: k,
                    target: *id,
                    start: start.clone(),
                    goal: goal.clone(),
                });
            }
        }
    }
    jobs
}

pub fn run_replan_job(
    planner: &dyn MotionPlanner,
    model: &ManipulatorModel,
    obstacles: &[Obstacle],
    job: &ReplanJob,
    clock: &dyn Clock,
) -> Option<BSplineTrajectory> {
    planner
        .plan_to_configs(
            model,
            obstacles,
            &job.start,
            core::slice::from_ref(&job.goal),
            clock,
        )
        .ok()
        .map(|p| p.trajectory)
}

/// Assembles tensor levels from job results in job order. `run` executes
/// a batch of jobs and returns results in the same order, so callers can
/// parallelize it.
pub fn assemble_replan_tensor(
    db: &TrajectoryDatabase,
    model: &ManipulatorModel,
    params: &BuildParams,
    mut run: impl FnMut(&[ReplanJob]) -> Vec<Option<BSplineTrajectory>>,
) -> ReplanTensor {
    let mut tensor = ReplanTensor {
        k: params.replan_states,
        depth: params.replan_depth,
        ..Default::default()
    };
    let mut level: Vec<(Source, u32)> = db
        .covered()
        .map(|(id, _)| (Source::Tunnel(id), id))
        .collect();
    for depth in 1..=params.replan_depth {
        if level.is_empty() {
            break;
        }
        let sources: Vec<(Source, u32, &BSplineTrajectory)> = level
            .iter()
            .map(|&(s, own)| {
                let traj = match s {
                    Source::Tunnel(id) => db.entries[id as usize]
                        .trajectory
                        .as_ref()
                        .expect("covered"),
                    Source::Transition(i) => &tensor.transitions[i as usize].trajectory,
                };
                (s, own, traj)
            })
            .collect();
        let jobs = replan_jobs(db, &sources, model, params);
        let results = run(&jobs);
        let mut next = Vec::new();
        let mut continues = Vec::new();
        for &(s, own) in &level {
            for k in 0..params.replan_states {
                continues.push((s, k, own));
            }
        }
        for (job, result) in jobs.into_iter().zip(results) {
            let entry = match result {
                Some(_) if !params.store_transitions => TensorEntry {
                    feasible: true,
                    trajectory: None,
                },
                Some(trajectory) => {
                    let idx = tensor.transitions.len() as u32;
                    tensor.transitions.push(Transition {
                        source: job.source,
                        state: job.state,
                        target: job.target,
                        depth,
                        trajectory,
                    });
                    next.push((Source::Transition(idx), job.target));
                    TensorEntry {
                        feasible: true,
                        trajectory: Some(idx),
                    }
                }
                None => TensorEntry {
                    feasible: false,
                    trajectory: None,
                },
            };
            tensor
                .table
                .insert((job.source, job.state, job.target), entry);
        }
        for key in continues {
            tensor.table.insert(
                key,
                TensorEntry {
                    feasible: true,
                    trajectory: None,
                },
            );
        }
        level = next;
    }
    tensor
}

/// Sequential replan-tensor build.
pub fn build_replan_tensor(
    db: &TrajectoryDatabase,
    planner: &dyn MotionPlanner,
    model: &ManipulatorModel,
    obstacles: &[Obstacle],
    params: &BuildParams,
    clock: &dyn Clock,
) -> Result<ReplanTensor, DatabaseError> {
    params.validate()?;
    Ok(assemble_replan_tensor(db, model, params, |jobs| {
        jobs.iter()
            .map(|j| run_replan_job(planner, model, obstacles, j, clock))
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("file truncated")]
    Truncated,
    #[error("not a database file")]
    BadMagic,
    #[error("format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("database built for a different configuration")]
    FingerprintMismatch,
    #[error("corrupt database: {0}")]
    Corrupt(&'static str),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length fits in u32"));
    }
    fn opt_u32(&mut self, v: Option<u32>) {
        self.u32(v.unwrap_or(u32::MAX));
    }
    fn trajectory(&mut self, t: &BSplineTrajectory) {
        self.len(t.degree());
        self.len(t.dim());
        self.len(t.knots().len());
        t.knots().iter().for_each(|&k| self.f64(k));
        self.len(t.control_flat().len());
        t.control_flat().iter().for_each(|&c| self.f64(c));
    }
    fn source(&mut self, s: Source) {
        match s {
            Source::Tunnel(id) => {
                self.u8(0);
                self.u32(id);
            }
            Source::Transition(id) => {
                self.u8(1);
                self.u32(id);
            }
        }
    }
    /// Appends `body` with a `u32` length prefix.
    fn record(&mut self, body: impl FnOnce(&mut Writer)) {
        let mut inner = Writer(Vec::new());
        body(&mut inner);
        self.len(inner.0.len());
        self.0.extend_from_slice(&inner.0);
    }
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn count(&mut self, elem_size: usize) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        // reject counts that cannot fit in the remaining bytes
        if n.saturating_mul(elem_size) > self.buf.len() - self.pos {
            return Err(DecodeError::Truncated);
        }
        Ok(n)
    }
    fn opt_u32(&mut self) -> Result<Option<u32>, DecodeError> {
        let v = self.u32()?;
        Ok((v != u32::MAX).then_some(v))
    }
    fn trajectory(&mut self) -> Result<BSplineTrajectory, DecodeError> {
        let degree = self.u32()? as usize;
        let dim = self.u32()? as usize;
        let nk = self.count(8)?;
        let knots = (0..nk).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        let nc = self.count(8)?;
        let control = (0..nc).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        BSplineTrajectory::from_flat(degree, knots, dim, control)
            .map_err(|_| DecodeError::Corrupt("trajectory"))
    }
    fn source(&mut self) -> Result<Source, DecodeError> {
        match (self.u8()?, self.u32()?) {
            (0, id) => Ok(Source::Tunnel(id)),
            (1, id) => Ok(Source::Transition(id)),
            _ => Err(DecodeError::Corrupt("source tag")),
        }
    }
    /// Runs `body` on a length-prefixed record, which must consume it.
    fn record<T>(
        &mut self,
        body: impl FnOnce(&mut Reader<'b>) -> Result<T, DecodeError>,
    ) -> Result<T, DecodeError> {
        let n = self.count(1)?;
        let mut inner = Reader {
            buf: self.take(n)?,
            pos: 0,
        };
        let v = body(&mut inner)?;
        if inner.pos != inner.buf.len() {
            return Err(DecodeError::Corrupt("record length"));
        }
        Ok(v)
    }
}

pub fn encode(db: &TrajectoryDatabase, tensor: &ReplanTensor) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(db.version);
    w.0.extend_from_slice(&db.fingerprint);
    w.len(db.entries.len());
    for e in &db.entries {
        w.record(|w| {
            w.u8(match e.status {
                EntryStatus::Covered => 0,
                EntryStatus::Unreachable => 1,
                EntryStatus::Infeasible => 2,
            });
            w.opt_u32(e.goal_pose_index);
            w.f64(e.tf);
            match &e.trajectory {
                Some(t) => {
                    w.u8(1);
                    w.trajectory(t);
                }
                None => w.u8(0),
            }
        });
    }
    w.u32(tensor.k);
    w.u32(tensor.depth);
    w.len(tensor.transitions.len());
    for t in &tensor.transitions {
        w.record(|w| {
            w.source(t.source);
            w.u32(t.state);
            w.u32(t.target);
            w.u32(t.depth);
            w.trajectory(&t.trajectory);
        });
    }
    w.len(tensor.table.len());
    for (&(source, state, target), e) in &tensor.table {
        w.source(source);
        w.u32(state);
        w.u32(target);
        w.u8(e.feasible as u8);
        w.opt_u32(e.trajectory);
    }
    w.0
}

/// Decodes a whole file. With `expected` set, a different fingerprint is
/// rejected.
pub fn decode(
    bytes: &[u8],
    expected: Option<&Fingerprint>,
) -> Result<(TrajectoryDatabase, ReplanTensor), DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(DecodeError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let fingerprint: Fingerprint = r.take(32)?.try_into().expect("32 bytes");
    if expected.is_some_and(|f| *f != fingerprint) {
        return Err(DecodeError::FingerprintMismatch);
    }
    let n = r.count(4)?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        entries.push(r.record(|r| {
            let status = match r.u8()? {
                0 => EntryStatus::Covered,
                1 => EntryStatus::Unreachable,
                2 => EntryStatus::Infeasible,
                _ => return Err(DecodeError::Corrupt("entry status")),
            };
            let goal_pose_index = r.opt_u32()?;
            let tf = r.f64()?;
            let trajectory = match r.u8()? {
                0 => None,
                1 => Some(r.trajectory()?),
                _ => return Err(DecodeError::Corrupt("trajectory flag")),
            };
            Ok(DatabaseEntry {
                status,
                trajectory,
                goal_pose_index,
                tf,
            })
        })?);
    }
    let k = r.u32()?;
    let depth = r.u32()?;
    let nt = r.count(4)?;
    let mut transitions = Vec::with_capacity(nt);
    for _ in 0..nt {
        transitions.push(r.record(|r| {
            Ok(Transition {
                source: r.source()?,
                state: r.u32()?,
                target: r.u32()?,
                depth: r.u32()?,
                trajectory: r.trajectory()?,
            })
        })?);
    }
    let ne = r.count(18)?;
    let mut table = BTreeMap::new();
    for _ in 0..ne {
        let key = (r.source()?, r.u32()?, r.u32()?);
        let feasible = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(DecodeError::Corrupt("feasible flag")),
        };
        let trajectory = r.opt_u32()?;
        if trajectory.is_some_and(|i| i as usize >= transitions.len()) {
            return Err(DecodeError::Corrupt("transition index"));
        }
        table.insert(
            key,
            TensorEntry {
                feasible,
                trajectory,
            },
        );
    }
    if r.pos != bytes.len() {
        return Err(DecodeError::Corrupt("trailing bytes"));
    }
    Ok((
        TrajectoryDatabase {
            version,
            fingerprint,
            entries,
        },
        ReplanTensor {
            k,
            depth,
            transitions,
            table,
        },
    ))
}
