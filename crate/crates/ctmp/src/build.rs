//! Parallel preprocessing. Tunnels (and tensor jobs) are spread over a
//! worker pool; results are collected in tunnel-id order, so the output
//! does not depend on the worker count.

use ctmp_core::clock::{Clock, VirtualClock};
use ctmp_core::database::{
    assemble_replan_tensor, audit_entry, build_tunnel_entry, dome_tunnels, run_replan_job,
    AuditFailure, AuditRecord, BuildContext, DatabaseError, EntryStatus, ReplanTensor,
    TrajectoryDatabase, FORMAT_VERSION,
};
use ctmp_core::insat::Insat;
use rayon::prelude::*;

use crate::clock::MonotonicClock;
use crate::config::{ConfigError, HarnessConfig};

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Database(#[from] DatabaseError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug)]
pub struct BuildOutput {
    pub db: TrajectoryDatabase,
    pub tensor: ReplanTensor,
    pub audit: Vec<AuditRecord>,
}

pub(crate) fn pool(workers: usize) -> Result<rayon::ThreadPool, BuildError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BuildError::Pool(e.to_string()))
}

/// Planner clock: a frozen clock when the build is deterministic (the
/// expansion cap is then the only budget), the wall clock otherwise.
fn planner_clock(deterministic: bool) -> Box<dyn Clock> {
    if deterministic {
        Box::new(VirtualClock::new(0.0))
    } else {
        Box::new(MonotonicClock::new())
    }
}

/// Builds the database and replan tensor for `cfg` on `workers` threads.
pub fn preprocess(cfg: &HarnessConfig, workers: usize) -> Result<BuildOutput, BuildError> {
    cfg.validate()?;
    let model = cfg.model()?;
    let dome = cfg.dome()?;
    let obstacles = cfg.obstacles();
    let params = cfg.build();
    let ctx = BuildContext {
        model: &model,
        home: &model.home_config,
        config: &dome,
        obstacles: &obstacles,
        params: &params,
    };
    ctx.check()?;
    let planner = Insat::new(cfg.insat());
    let deterministic = cfg.build.deterministic;
    let tunnels = dome_tunnels(&dome)?;
    let pool = pool(workers)?;
    let (entries, audit): (Vec<_>, Vec<_>) = pool.install(|| {
        tunnels
            .par_iter()
            .map(|t| build_tunnel_entry(&planner, &ctx, t, planner_clock(deterministic).as_ref()))
            .collect::<Vec<_>>()
            .into_iter()
            .unzip()
    });
    let db = TrajectoryDatabase {
        version: FORMAT_VERSION,
        fingerprint: cfg.fingerprint(),
        entries,
    };
    let tensor = assemble_replan_tensor(&db, &model, &params, |jobs| {
        pool.install(|| {
            jobs.par_iter()
                .map(|j| {
                    run_replan_job(
                        &planner,
                        &model,
                        &obstacles,
                        j,
                        planner_clock(deterministic).as_ref(),
                    )
                })
                .collect()
        })
    });
    Ok(BuildOutput { db, tensor, audit })
}

/// One failed entry of a database audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditIssue {
    pub tunnel: u32,
    pub failure: AuditFailure,
}

/// Coverage soundness over every Covered entry, with `n_rays` blocking
/// rays per entry. Also rejects databases of the wrong size.
pub fn audit_database(
    cfg: &HarnessConfig,
    db: &TrajectoryDatabase,
    n_rays: usize,
    workers: usize,
) -> Result<Vec<AuditIssue>, BuildError> {
    let model = cfg.model()?;
    let dome = cfg.dome()?;
    let obstacles = cfg.obstacles();
    let params = cfg.build();
    let ctx = BuildContext {
        model: &model,
        home: &model.home_config,
        config: &dome,
        obstacles: &obstacles,
        params: &params,
    };
    let tunnels = dome_tunnels(&dome)?;
    if tunnels.len() != db.entries.len() {
        return Err(BuildError::Database(DatabaseError::Config(format!(
            "database has {} entries, configuration has {} tunnels",
            db.entries.len(),
            tunnels.len()
        ))));
    }
    let settings = cfg.trajopt();
    let issues = pool(workers)?.install(|| {
        db.entries
            .par_iter()
            .zip(tunnels.par_iter())
            .filter(|(e, _)| e.status == EntryStatus::Covered)
            .filter_map(|(e, t)| {
                audit_entry(e, t, &ctx, &settings, n_rays)
                    .err()
                    .map(|failure| AuditIssue {
                        tunnel: t.id,
                        failure,
                    })
            })
            .collect()
    });
    Ok(issues)
}
