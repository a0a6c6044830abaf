//! Simulation benchmark: seeded projectiles, the preprocessed planner's
//! lookup against an online RRT-Connect attempt, per-planner metrics.

use std::fmt::Write as _;

use ctmp_core::ballistics::{dome_crossing, sample_projectile, BallisticsError, SampledProjectile};
use ctmp_core::baseline::{rrt_connect, time_parameterize};
use ctmp_core::clock::{Clock, VirtualClock};
use ctmp_core::collision::Obstacle;
use ctmp_core::database::{ReplanTensor, TrajectoryDatabase};
use ctmp_core::geometry::{sample_goal_poses, shield_blocks_tunnel, ShieldGoalPose};
use ctmp_core::kinematics::{ManipulatorModel, IK_TOLERANCE};
use ctmp_core::query::{
    meets_deadline, simulate_interception, InterceptionOutcome, InterceptionParams, QueryContext,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::build::{pool, BuildError};
use crate::clock::MonotonicClock;
use crate::config::{ClockKind, ConfigError, HarnessConfig};

/// Residual planner budget of the real-robot timing breakdown (ms).
pub const REAL_ROBOT_RESIDUAL_MS: f64 = 4.9;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("database does not match the configuration: {0}")]
    Database(String),
    #[error("projectile sampling: {0}")]
    Sampling(#[from] BallisticsError),
}

/// One planner's attempt on one projectile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attempt {
    pub found_solution: bool,
    /// Found and geometrically blocking, before the timing test.
    pub eligible: bool,
    pub success: bool,
    pub query_time: f64,
    pub execution_time: f64,
    pub time_of_flight: f64,
}

impl From<InterceptionOutcome> for Attempt {
    fn from(o: InterceptionOutcome) -> Self {
        Self {
            found_solution: o.found_solution,
            eligible: o.found_solution && o.blocked,
            success: o.success,
            query_time: o.query_time,
            execution_time: o.execution_time,
            time_of_flight: o.time_of_flight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
            };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerMetrics {
    pub name: &'static str,
    pub n: usize,
    pub found: usize,
    pub eligible: usize,
    pub successes: usize,
    /// Over every attempt, failed ones included.
    pub query_time: MeanStd,
    /// Over attempts that found a solution.
    pub execution_time: MeanStd,
    /// Time left for planning: `slack * ToF - overhead - execution`, over
    /// attempts that found a solution.
    pub residual_budget: MeanStd,
}

impl PlannerMetrics {
    pub fn from_attempts(
        name: &'static str,
        attempts: &[Attempt],
        params: &InterceptionParams,
    ) -> Self {
        let found = || attempts.iter().filter(|a| a.found_solution);
        Self {
            name,
            n: attempts.len(),
            found: found().count(),
            eligible: attempts.iter().filter(|a| a.eligible).count(),
            successes: attempts.iter().filter(|a| a.success).count(),
            query_time: MeanStd::of(attempts.iter().map(|a| a.query_time)),
            execution_time: MeanStd::of(found().map(|a| a.execution_time)),
            residual_budget: MeanStd::of(found().map(|a| {
                params.success_slack * a.time_of_flight - params.overhead - a.execution_time
            })),
        }
    }

    fn rate(&self, k: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            k as f64 / self.n as f64
        }
    }

    pub fn find_solution_rate(&self) -> f64 {
        self.rate(self.found)
    }

    pub fn eligible_rate(&self) -> f64 {
        self.rate(self.eligible)
    }

    pub fn success_rate(&self) -> f64 {
        self.rate(self.successes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub n_projectiles: usize,
    pub seed: u64,
    pub fingerprint: [u8; 32],
    pub overhead_ms: f64,
    pub success_slack: f64,
    pub mean_time_of_flight: f64,
    pub planners: Vec<PlannerMetrics>,
    pub preprocessed: Vec<Attempt>,
    pub rrt: Vec<Attempt>,
}

impl BenchmarkReport {
    pub fn planner(&self, name: &str) -> Option<&PlannerMetrics> {
        self.planners.iter().find(|p| p.name == name)
    }

    /// Aligned table: planners as columns; find rate, success rate, query
    /// and execution time as rows.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<22}", "");
        for p in &self.planners {
            let _ = write!(s, "{:>24}", p.name);
        }
        s.push('\n');
        let row = |s: &mut String, label: &str, f: &dyn Fn(&PlannerMetrics) -> String| {
            let _ = write!(s, "{label:<22}");
            for p in &self.planners {
                let _ = write!(s, "{:>24}", f(p));
            }
            s.push('\n');
        };
        row(&mut s, "Find Solution (%)", &|p| {
            format!("{:.2}", 100.0 * p.find_solution_rate())
        });
        row(&mut s, "Success Rate (%)", &|p| {
            format!("{:.2}", 100.0 * p.success_rate())
        });
        row(&mut s, "Query Time (ms)", &|p| {
            format!(
                "{:.4} ± {:.4}",
                1e3 * p.query_time.mean,
                1e3 * p.query_time.std
            )
        });
        row(&mut s, "Execution Time (ms)", &|p| {
            format!(
                "{:.1} ± {:.1}",
                1e3 * p.execution_time.mean,
                1e3 * p.execution_time.std
            )
        });
        s
    }

    /// One metric per line: `planner metric value`.
    pub fn machine(&self) -> String {
        let mut s = String::new();
        let fp: String = self
            .fingerprint
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let _ = writeln!(s, "bench n_projectiles {}", self.n_projectiles);
        let _ = writeln!(s, "bench seed {}", self.seed);
        let _ = writeln!(s, "bench fingerprint {fp}");
        let _ = writeln!(s, "bench overhead_ms {}", self.overhead_ms);
        let _ = writeln!(s, "bench success_slack {}", self.success_slack);
        let _ = writeln!(
            s,
            "bench mean_time_of_flight_s {:.9}",
            self.mean_time_of_flight
        );
        for p in &self.planners {
            let mut line = |metric: &str, value: String| {
                let _ = writeln!(s, "{} {metric} {value}", p.name);
            };
            line("find_solution_count", p.found.to_string());
            line("eligible_count", p.eligible.to_string());
            line("success_count", p.successes.to_string());
            line(
                "find_solution_rate",
                format!("{:.6}", p.find_solution_rate()),
            );
            line("eligible_rate", format!("{:.6}", p.eligible_rate()));
            line("success_rate", format!("{:.6}", p.success_rate()));
            line("query_time_mean_s", format!("{:.9}", p.query_time.mean));
            line("query_time_std_s", format!("{:.9}", p.query_time.std));
            line(
                "execution_time_mean_s",
                format!("{:.9}", p.execution_time.mean),
            );
            line(
                "execution_time_std_s",
                format!("{:.9}", p.execution_time.std),
            );
            line(
                "residual_budget_mean_s",
                format!("{:.9}", p.residual_budget.mean),
            );
        }
        if let Some(p) = self.planner(PREPROCESSED) {
            let fits = p.query_time.mean * 1e3 < REAL_ROBOT_RESIDUAL_MS;
            let _ = writeln!(s, "{PREPROCESSED} lookup_fits_real_robot_residual {fits}");
        }
        s
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.table(), self.machine())
    }
}

pub const PREPROCESSED: &str = "preprocessed";
pub const RRT_CONNECT: &str = "rrt_connect";

fn bench_clock(cfg: &HarnessConfig) -> Box<dyn Clock> {
    match cfg.bench.clock {
        ClockKind::Monotonic => Box::new(MonotonicClock::new()),
        ClockKind::Virtual => Box::new(VirtualClock::new(cfg.bench.virtual_tick)),
    }
}

/// Seeded projectiles plus one RRT seed each, all from `seed`.
pub fn sample_batch(
    cfg: &HarnessConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<(SampledProjectile, u64)>, BenchError> {
    let dome = cfg.dome()?;
    let spec = cfg.projectiles(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = sample_projectile(&spec, &dome, &mut rng)?;
            Ok((p, rng.gen()))
        })
        .collect()
}

struct RrtSetup<'a> {
    cfg: &'a HarnessConfig,
    ctx: &'a QueryContext,
    model: &'a ManipulatorModel,
    obstacles: &'a [Obstacle],
    params: &'a InterceptionParams,
}

/// Online attempt: tunnel from the crossing, IK on the tunnel's blocking
/// goal poses (the same targets the database build uses), then RRT-Connect.
/// Query time covers all of it.
fn rrt_attempt(s: &RrtSetup<'_>, p: &SampledProjectile, seed: u64, clock: &dyn Clock) -> Attempt {
    let build = s.cfg.build();
    let home = &s.model.home_config;
    let t0 = clock.now();
    let mut out = Attempt {
        found_solution: false,
        eligible: false,
        success: false,
        query_time: 0.0,
        execution_time: 0.0,
        time_of_flight: p.time_of_flight,
    };
    let planned = (|| {
        let crossing = dome_crossing(&p.state, &s.ctx.config).ok()?;
        let tunnel = s.ctx.tunnel(s.ctx.tunnel_of(&crossing)?);
        let poses = sample_goal_poses(
            &tunnel,
            &s.ctx.config,
            build.goals_per_tunnel,
            build.goal_margin,
        )
        .ok()?;
        let rays = build.audit_rays;
        let goal = poses
            .iter()
            .filter(|pose| shield_blocks_tunnel(pose, &tunnel, &s.ctx.config, rays))
            .find_map(|pose| {
                s.model
                    .inverse_kinematics_filtered(
                        &pose.to_pose(),
                        home,
                        &IK_TOLERANCE,
                        &build.ik,
                        |q| !s.model.in_collision(q, s.obstacles),
                    )
                    .ok()
            })?;
        let path =
            rrt_connect(s.model, home, &goal.q, s.obstacles, &s.cfg.rrt(seed), clock).ok()?;
        Some((tunnel, path))
    })();
    out.query_time = clock.now() - t0;
    if let Some((tunnel, path)) = planned {
        let (exec, _) = time_parameterize(&path.waypoints, &s.model.velocity_limits);
        let end = path.waypoints.last().expect("non-empty path");
        let fk = s.model.forward_kinematics(end).expect("dimension checked");
        let pose = ShieldGoalPose::from_pose(&fk.ee, IK_TOLERANCE);
        out.found_solution = true;
        out.execution_time = exec;
        out.eligible = shield_blocks_tunnel(&pose, &tunnel, &s.ctx.config, s.params.n_rays);
        out.success =
            out.eligible && meets_deadline(out.query_time, exec, p.time_of_flight, s.params);
    }
    out
}

/// Runs both planners on `n` seeded projectiles. Read-only over `db`.
pub fn run_benchmark(
    cfg: &HarnessConfig,
    db: &TrajectoryDatabase,
    _tensor: &ReplanTensor,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<BenchmarkReport, BenchError> {
    cfg.validate()?;
    let ctx = QueryContext::new(cfg.dome()?).map_err(|e| BenchError::Database(e.to_string()))?;
    ctx.check(db)
        .map_err(|e| BenchError::Database(e.to_string()))?;
    if db.fingerprint != cfg.fingerprint() {
        return Err(BenchError::Database("fingerprint mismatch".into()));
    }
    let model = cfg.model()?;
    let obstacles = cfg.obstacles();
    let params = cfg.interception();
    let batch = sample_batch(cfg, n, seed)?;
    let setup = RrtSetup {
        cfg,
        ctx: &ctx,
        model: &model,
        obstacles: &obstacles,
        params: &params,
    };
    let results: Vec<(Attempt, Attempt)> = pool(workers)?.install(|| {
        batch
            .par_iter()
            .map(|(p, rrt_seed)| {
                let clock = bench_clock(cfg);
                let pre =
                    simulate_interception(&p.state, db, &ctx, &model, clock.as_ref(), &params);
                let clock = bench_clock(cfg);
                let rrt = rrt_attempt(&setup, p, *rrt_seed, clock.as_ref());
                (Attempt::from(pre), rrt)
            })
            .collect()
    });
    let (preprocessed, rrt): (Vec<Attempt>, Vec<Attempt>) = results.into_iter().unzip();
    let planners = vec![
        PlannerMetrics::from_attempts(PREPROCESSED, &preprocessed, &params),
        PlannerMetrics::from_attempts(RRT_CONNECT, &rrt, &params),
    ];
    Ok(BenchmarkReport {
        n_projectiles: n,
        seed,
        fingerprint: db.fingerprint,
        overhead_ms: cfg.bench.overhead_ms,
        success_slack: cfg.bench.success_slack,
        mean_time_of_flight: MeanStd::of(batch.iter().map(|(p, _)| p.time_of_flight)).mean,
        planners,
        preprocessed,
        rrt,
    })
}
