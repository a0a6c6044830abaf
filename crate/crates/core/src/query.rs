//! Online stage: projectile to tunnel to stored trajectory, goal switching
//! through the replan tensor, and interception scoring.
//!
//! The access path has no loops over tunnels: the dome crossing gives one
//! point per dome, each point maps to its cell by grid arithmetic, and the
//! cell pair indexes the dense entry array.

use crate::ballistics::{dome_crossing, DomeCrossing, ProjectileState};
use crate::clock::Clock;
use crate::database::{
    end_pose, EntryStatus, ReplanTensor, Source, TrajectoryDatabase, Transition,
};
use crate::geometry::{
    discretize_domes, shield_blocks_tunnel, DomeCells, DomeConfig, Segment, Tunnel,
};
use crate::kinematics::ManipulatorModel;
use crate::spline::BSplineTrajectory;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("projectile misses the domes")]
    Miss,
    #[error("tunnel {tunnel} has no stored trajectory ({status:?})")]
    NoSolution { tunnel: u32, status: EntryStatus },
    #[error("no stored transition for this switch")]
    TransitionInfeasible,
    #[error("elapsed fraction outside [0, 1]")]
    InvalidFraction,
    #[error("database has {found} entries, configuration has {expected} tunnels")]
    SizeMismatch { found: usize, expected: usize },
    #[error("invalid dome configuration")]
    Config,
}

/// Precomputed cell grids for one dome configuration.
#[derive(Debug, Clone)]
pub struct QueryContext {
    pub config: DomeConfig,
    pub cells: DomeCells,
}

impl QueryContext {
    pub fn new(config: DomeConfig) -> Result<Self, QueryError> {
        let cells = discretize_domes(&config).map_err(|_| QueryError::Config)?;
        Ok(Self { config, cells })
    }

    /// Checks that `db` is dense over this configuration's tunnels.
    pub fn check(&self, db: &TrajectoryDatabase) -> Result<(), QueryError> {
        let expected = self.cells.num_tunnels();
        if db.entries.len() != expected {
            return Err(QueryError::SizeMismatch {
                found: db.entries.len(),
                expected,
            });
        }
        Ok(())
    }

    /// Tunnel crossed by a projectile with the given dome crossing.
    pub fn tunnel_of(&self, crossing: &DomeCrossing) -> Option<u32> {
        let (_, _, o) = self
            .cells
            .outer_grid
            .locate(crossing.outer_face, &crossing.segment.start)?;
        let (_, _, i) = self
            .cells
            .inner_grid
            .locate(crossing.inner_face, &crossing.segment.end)?;
        Some(self.cells.tunnel_id(o, i))
    }

    /// Tunnel geometry for an id (not used on the timed path).
    pub fn tunnel(&self, id: u32) -> Tunnel {
        let n_inner = self.cells.inner.len();
        let outer = self.cells.outer[id as usize / n_inner];
        let inner = self.cells.inner[id as usize % n_inner];
        Tunnel {
            id,
            outer_cell: outer,
            inner_cell: inner,
            centerline: Segment::new(outer.center, inner.center),
            feasible: crate::geometry::tunnel_feasible(&outer, &inner, &self.cells.inner_grid),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult<'db> {
    pub tunnel: u32,
    pub trajectory: &'db BSplineTrajectory,
    pub tf: f64,
    pub crossing: DomeCrossing,
    /// Dome crossing and cell mapping (s).
    pub crossing_time: f64,
    /// Table access (s).
    pub access_time: f64,
    /// Sum of the two.
    pub lookup_time: f64,
}

/// Failure of [`lookup`], still carrying the time spent.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupFailure {
    pub error: QueryError,
    pub lookup_time: f64,
    pub crossing: Option<DomeCrossing>,
}

pub fn lookup<'db>(
    theta: &ProjectileState,
    db: &'db TrajectoryDatabase,
    ctx: &QueryContext,
    clock: &dyn Clock,
) -> Result<QueryResult<'db>, LookupFailure> {
    let t0 = clock.now();
    let located = dome_crossing(theta, &ctx.config)
        .ok()
        .and_then(|c| ctx.tunnel_of(&c).map(|id| (c, id)));
    let t1 = clock.now();
    let Some((crossing, tunnel)) = located else {
        return Err(LookupFailure {
            error: QueryError::Miss,
            lookup_time: t1 - t0,
            crossing: None,
        });
    };
    let entry = db.entries.get(tunnel as usize);
    let t2 = clock.now();
    let fail = |error| LookupFailure {
        error,
        lookup_time: t2 - t0,
        crossing: Some(crossing),
    };
    let entry = entry.ok_or_else(|| {
        fail(QueryError::SizeMismatch {
            found: db.entries.len(),
            expected: ctx.cells.num_tunnels(),
        })
    })?;
    match (&entry.trajectory, entry.status) {
        (Some(trajectory), EntryStatus::Covered) => Ok(QueryResult {
            tunnel,
            trajectory,
            tf: entry.tf,
            crossing,
            crossing_time: t1 - t0,
            access_time: t2 - t1,
            lookup_time: t2 - t0,
        }),
        (_, status) => Err(fail(QueryError::NoSolution { tunnel, status })),
    }
}

/// Nearest precomputed state index for an elapsed fraction; halves round
/// up.
pub fn snap_state(fraction: f64, k: u32) -> Result<u32, QueryError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(QueryError::InvalidFraction);
    }
    if k <= 1 {
        return Ok(0);
    }
    Ok((fraction * (k - 1) as f64).round() as u32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Switch<'t> {
    /// The new goal is the current one; keep executing.
    Continue,
    Transition(&'t Transition),
    /// Feasible, but the tensor was built without stored transitions.
    Unstored,
}

/// Switches from `current` (a tunnel or a stored transition) to tunnel
/// `target` at the precomputed state nearest to `fraction`.
pub fn replan_switch<'t>(
    current: Source,
    fraction: f64,
    target: u32,
    tensor: &'t ReplanTensor,
) -> Result<Switch<'t>, QueryError> {
    let k = snap_state(fraction, tensor.k)?;
    let entry = tensor
        .get(current, k, target)
        .ok_or(QueryError::TransitionInfeasible)?;
    if !entry.feasible {
        return Err(QueryError::TransitionInfeasible);
    }
    let own = match current {
        Source::Tunnel(id) => Some(id),
        Source::Transition(x) => tensor.transitions.get(x as usize).map(|t| t.target),
    };
    match entry.trajectory {
        None if own == Some(target) => Ok(Switch::Continue),
        None => Ok(Switch::Unstored),
        Some(i) => tensor
            .transitions
            .get(i as usize)
            .map(Switch::Transition)
            .ok_or(QueryError::TransitionInfeasible),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterceptionParams {
    /// Fixed deduction for perception and system latency (s).
    pub overhead: f64,
    /// Multiplier on the time of flight in the success test.
    pub success_slack: f64,
    /// Rays for the blocking cross-check.
    pub n_rays: usize,
}

impl Default for InterceptionParams {
    fn default() -> Self {
        Self {
            overhead: 0.0,
            success_slack: 1.0,
            n_rays: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterceptionOutcome {
    pub found_solution: bool,
    pub success: bool,
    /// Shield at the trajectory end blocks the tunnel.
    pub blocked: bool,
    pub tunnel: Option<u32>,
    pub query_time: f64,
    pub execution_time: f64,
    /// Launch to inner-dome crossing; 0 when the projectile misses.
    pub time_of_flight: f64,
}

/// `query + overhead + execution < slack * time_of_flight`.
pub fn meets_deadline(
    query: f64,
    execution: f64,
    time_of_flight: f64,
    params: &InterceptionParams,
) -> bool {
    query + params.overhead + execution < params.success_slack * time_of_flight
}

/// Looks up `theta` (the launch state) and scores the interception.
pub fn simulate_interception(
    theta: &ProjectileState,
    db: &TrajectoryDatabase,
    ctx: &QueryContext,
    model: &ManipulatorModel,
    clock: &dyn Clock,
    params: &InterceptionParams,
) -> InterceptionOutcome {
    match lookup(theta, db, ctx, clock) {
        Ok(r) => {
            let pose = end_pose(model, r.trajectory, &ctx.config);
            let blocked =
                shield_blocks_tunnel(&pose, &ctx.tunnel(r.tunnel), &ctx.config, params.n_rays);
            let tof = r.crossing.t_inner;
            InterceptionOutcome {
                found_solution: true,
                success: blocked && meets_deadline(r.lookup_time, r.tf, tof, params),
                blocked,
                tunnel: Some(r.tunnel),
                query_time: r.lookup_time,
                execution_time: r.tf,
                time_of_flight: tof,
            }
        }
        Err(f) => InterceptionOutcome {
            found_solution: false,
            success: false,
            blocked: false,
            tunnel: match f.error {
                QueryError::NoSolution { tunnel, .. } => Some(tunnel),
                _ => None,
            },
            query_time: f.lookup_time,
            execution_time: 0.0,
            time_of_flight: f.crossing.map_or(0.0, |c| c.t_inner),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballistics::{sample_projectile, ProjectileSampleSpec, GRAVITY};
    use crate::clock::VirtualClock;
    use crate::database::{DatabaseEntry, TensorEntry, FORMAT_VERSION};
    use crate::geometry::{sample_goal_poses, Cell, Face};
    use crate::kinematics::{IkParams, IK_TOLERANCE};
    use crate::Vec3;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empty_db(n: usize) -> TrajectoryDatabase {
        TrajectoryDatabase {
            version: FORMAT_VERSION,
            fingerprint: [0; 32],
            entries: vec![
                DatabaseEntry {
                    status: EntryStatus::Unreachable,
                    trajectory: None,
                    goal_pose_index: None,
                    tf: f64::INFINITY
                };
                n
            ],
        }
    }

    /// Brute-force cell containing `p` on `face`, scanning every cell.
    fn containing(cells: &[Cell], face: Face, p: &Vec3, size: f64) -> Vec<usize> {
        cells
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                c.face == face && {
                    let (u, v) = c.axes();
                    let d = p - c.center;
                    d.dot(&u).abs() <= size / 2.0 + 1e-9 && d.dot(&v).abs() <= size / 2.0 + 1e-9
                }
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Launch state whose inner crossing happens at `t` with horizontal
    /// velocity `v`, passing through `p_in`.
    fn through(p_in: Vec3, v: Vec3, t: f64) -> ProjectileState {
        let g = Vec3::new(0.0, 0.0, -GRAVITY);
        let v0 = v - g * t;
        ProjectileState::new(p_in - v0 * t - g * (0.5 * t * t), v0)
    }

    #[test]
    fn lookup_matches_brute_force_cells() {
        let config = DomeConfig {
            active_faces: vec![Face::PosX, Face::PosY, Face::PosZ],
            ..DomeConfig::default()
        };
        let ctx = QueryContext::new(config.clone()).unwrap();
        let db = empty_db(ctx.cells.num_tunnels());
        let spec = ProjectileSampleSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clock = VirtualClock::new(0.0);
        for _ in 0..300 {
            let s = sample_projectile(&spec, &config, &mut rng).unwrap();
            let f = lookup(&s.state, &db, &ctx, &clock).unwrap_err();
            let QueryError::NoSolution { tunnel, .. } = f.error else {
                panic!("{:?}", f.error)
            };
            let c = s.crossing;
            let outer = containing(
                &ctx.cells.outer,
                c.outer_face,
                &c.segment.start,
                config.cell_size,
            );
            let inner = containing(
                &ctx.cells.inner,
                c.inner_face,
                &c.segment.end,
                config.cell_size,
            );
            assert!(!outer.is_empty() && !inner.is_empty());
            // shared edges go to the lower index
            assert_eq!(tunnel, ctx.cells.tunnel_id(outer[0], inner[0]));
            let again = lookup(&s.state, &db, &ctx, &clock).unwrap_err();
            assert_eq!(again, f);
        }
    }

    #[test]
    fn lookup_errors() {
        let ctx = QueryContext::new(DomeConfig::default()).unwrap();
        let db = empty_db(ctx.cells.num_tunnels());
        let clock = VirtualClock::new(1e-5);
        // fired away from the domes
        let away = ProjectileState::new(Vec3::new(8.0, 0.0, 1.0), Vec3::new(5.0, 0.0, 3.0));
        let f = lookup(&away, &db, &ctx, &clock).unwrap_err();
        assert_eq!(f.error, QueryError::Miss);
        assert!(f.crossing.is_none());
        let hit = through(Vec3::new(0.5, 0.05, 0.8), Vec3::new(-8.0, 0.0, 0.0), 1.0);
        let f = lookup(&hit, &db, &ctx, &clock).unwrap_err();
        assert!(matches!(
            f.error,
            QueryError::NoSolution {
                status: EntryStatus::Unreachable,
                ..
            }
        ));
        assert!(ctx.check(&empty_db(3)).is_err());
        assert!(ctx.check(&db).is_ok());
    }

    #[test]
    fn snapping_rule() {
        assert_eq!(snap_state(0.49, 3), Ok(1));
        assert_eq!(snap_state(0.2, 3), Ok(0));
        assert_eq!(snap_state(0.25, 3), Ok(1));
        assert_eq!(snap_state(0.8, 3), Ok(2));
        assert_eq!(snap_state(1.0, 3), Ok(2));
        assert_eq!(snap_state(0.7, 1), Ok(0));
        assert_eq!(snap_state(1.2, 3), Err(QueryError::InvalidFraction));
        assert_eq!(snap_state(f64::NAN, 3), Err(QueryError::InvalidFraction));
    }

    #[test]
    fn switching_uses_the_tensor() {
        let traj = BSplineTrajectory::constant(&[0.0, 0.0], 3, 0.0, 1.0).unwrap();
        let mut tensor = ReplanTensor {
            k: 3,
            depth: 1,
            ..Default::default()
        };
        tensor.transitions.push(Transition {
            source: Source::Tunnel(4),
            state: 1,
            target: 9,
            depth: 1,
            trajectory: traj,
        });
        let feasible = |t| TensorEntry {
            feasible: true,
            trajectory: t,
        };
        for k in 0..3 {
            tensor
                .table
                .insert((Source::Tunnel(4), k, 4), feasible(None));
        }
        tensor
            .table
            .insert((Source::Tunnel(4), 1, 9), feasible(Some(0)));
        tensor.table.insert(
            (Source::Tunnel(4), 2, 9),
            TensorEntry {
                feasible: false,
                trajectory: None,
            },
        );
        for f in [0.0, 0.3, 0.6, 1.0] {
            assert_eq!(
                replan_switch(Source::Tunnel(4), f, 4, &tensor),
                Ok(Switch::Continue)
            );
        }
        match replan_switch(Source::Tunnel(4), 0.49, 9, &tensor) {
            Ok(Switch::Transition(t)) => assert_eq!((t.state, t.target), (1, 9)),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            replan_switch(Source::Tunnel(4), 0.9, 9, &tensor),
            Err(QueryError::TransitionInfeasible)
        );
        assert_eq!(
            replan_switch(Source::Tunnel(4), 0.1, 9, &tensor),
            Err(QueryError::TransitionInfeasible)
        );
        assert_eq!(
            replan_switch(Source::Tunnel(5), 0.5, 9, &tensor),
            Err(QueryError::TransitionInfeasible)
        );
        tensor
            .table
            .insert((Source::Tunnel(4), 0, 7), feasible(None));
        assert_eq!(
            replan_switch(Source::Tunnel(4), 0.1, 7, &tensor),
            Ok(Switch::Unstored)
        );
        tensor
            .table
            .insert((Source::Transition(0), 2, 9), feasible(None));
        assert_eq!(
            replan_switch(Source::Transition(0), 1.0, 9, &tensor),
            Ok(Switch::Continue)
        );
    }

    /// Database with one covered tunnel whose trajectory ends at IK of the
    /// tunnel's middle goal pose (or at home when `blocking` is false).
    fn one_tunnel_db(
        ctx: &QueryContext,
        model: &ManipulatorModel,
        tunnel: u32,
        tf: f64,
        blocking: bool,
    ) -> TrajectoryDatabase {
        let home = &model.home_config;
        let end = if blocking {
            let pose = sample_goal_poses(&ctx.tunnel(tunnel), &ctx.config, 1, 0.05).unwrap()[0];
            model
                .inverse_kinematics(&pose.to_pose(), home, &IK_TOLERANCE, &IkParams::default())
                .unwrap()
                .q
        } else {
            home.clone()
        };
        let control: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let s = (i as f64 / 5.0).clamp(0.0, 1.0);
                home.iter()
                    .zip(&end)
                    .map(|(a, b)| a + s * (b - a))
                    .collect()
            })
            .collect();
        let knots = crate::spline::clamped_uniform_knots(6, 3, 0.0, tf).unwrap();
        let traj = BSplineTrajectory::new(3, knots, &control).unwrap();
        let mut db = empty_db(ctx.cells.num_tunnels());
        db.entries[tunnel as usize] = DatabaseEntry {
            status: EntryStatus::Covered,
            tf: traj.duration(),
            trajectory: Some(traj),
            goal_pose_index: Some(0),
        };
        db
    }

    #[test]
    fn interception_scoring() {
        let ctx = QueryContext::new(DomeConfig::default()).unwrap();
        let model = ManipulatorModel::default_arm();
        let theta = through(Vec3::new(0.5, 0.1, 0.8), Vec3::new(-8.0, 0.0, 0.0), 1.0);
        let crossing = dome_crossing(&theta, &ctx.config).unwrap();
        assert!((crossing.t_inner - 1.0).abs() < 1e-9);
        let tunnel = ctx.tunnel_of(&crossing).unwrap();
        let clock = VirtualClock::new(5e-5);
        let params = InterceptionParams::default();

        let db = one_tunnel_db(&ctx, &model, tunnel, 0.3, true);
        let r = lookup(&theta, &db, &ctx, &clock).unwrap();
        assert_eq!(r.tunnel, tunnel);
        assert!(core::ptr::eq(
            r.trajectory,
            db.entries[tunnel as usize].trajectory.as_ref().unwrap()
        ));
        assert!((r.lookup_time - (r.crossing_time + r.access_time)).abs() < 1e-15);
        let o = simulate_interception(&theta, &db, &ctx, &model, &clock, &params);
        assert!(o.found_solution && o.blocked && o.success, "{o:?}");
        assert_eq!(o.execution_time, 0.3);
        assert!((o.query_time - 1e-4).abs() < 1e-12);

        let slow = one_tunnel_db(&ctx, &model, tunnel, 1.2, true);
        let o = simulate_interception(&theta, &slow, &ctx, &model, &clock, &params);
        assert!(o.found_solution && !o.success);

        let tight = InterceptionParams {
            overhead: 0.75,
            ..params
        };
        assert!(!simulate_interception(&theta, &db, &ctx, &model, &clock, &tight).success);
        let relaxed = InterceptionParams {
            success_slack: 1.5,
            ..params
        };
        assert!(simulate_interception(&theta, &slow, &ctx, &model, &clock, &relaxed).success);

        // fast enough but the shield stays at home
        let idle = one_tunnel_db(&ctx, &model, tunnel, 0.3, false);
        let o = simulate_interception(&theta, &idle, &ctx, &model, &clock, &params);
        assert!(o.found_solution && !o.blocked && !o.success);

        let o = simulate_interception(
            &theta,
            &empty_db(ctx.cells.num_tunnels()),
            &ctx,
            &model,
            &clock,
            &params,
        );
        assert!(!o.found_solution && !o.success);
        assert_eq!(o.tunnel, Some(tunnel));
    }

    #[test]
    fn deadline_inequality_is_strict() {
        let p = InterceptionParams::default();
        assert!(meets_deadline(1e-4, 0.3, 1.0, &p));
        assert!(!meets_deadline(0.0, 1.0, 1.0, &p));
        assert!(!meets_deadline(1e-4, 1.2, 1.0, &p));
    }
}
