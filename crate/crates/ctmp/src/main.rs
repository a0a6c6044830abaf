use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctmp::bench::run_benchmark;
use ctmp::build::{audit_database, preprocess};
use ctmp::clock::MonotonicClock;
use ctmp::config::HarnessConfig;
use ctmp::persist;
use ctmp_core::ballistics::{fit, parse_observations, ProjectileState, GRAVITY};
use ctmp_core::database::{EntryStatus, ReplanTensor, TrajectoryDatabase};
use ctmp_core::query::{lookup, QueryContext};

/// Interception planner: preprocess a trajectory database, query it, and
/// benchmark it against online RRT-Connect.
#[derive(Parser)]
#[command(name = "ctmp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Harness configuration (TOML).
    #[arg(long, default_value = "configs/default.toml")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build the trajectory database and replan tensor.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Output file; defaults to paths.database.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Overrides build.replan_depth.
        #[arg(long)]
        replan_depth: Option<u32>,
        /// Overrides the IK restart seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Look up the stored motion for one projectile state.
    Query {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        db: Option<PathBuf>,
        /// px py pz vx vy vz (m, m/s).
        #[arg(num_args = 6, allow_negative_numbers = true, required = true)]
        theta: Vec<f64>,
    },
    /// Simulated interceptions: preprocessed lookup against RRT-Connect.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        db: Option<PathBuf>,
        /// Projectile count; defaults to bench.n.
        #[arg(long)]
        n: Option<usize>,
        /// Defaults to bench.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report file; defaults to paths.report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Overrides bench.overhead_ms.
        #[arg(long)]
        overhead_ms: Option<f64>,
    },
    /// Fit a projectile state to observations (`t x y z` per line).
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        obs: PathBuf,
        /// Also look the fitted state up in this database.
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Re-check every stored trajectory against the coverage conditions.
    ValidateDb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        db: Option<PathBuf>,
        /// Blocking rays per entry; defaults to build.audit_rays.
        #[arg(long)]
        rays: Option<usize>,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

type Failure = Box<dyn std::error::Error>;

fn load_db(
    cfg: &HarnessConfig,
    db: &Option<PathBuf>,
) -> Result<(TrajectoryDatabase, ReplanTensor), Failure> {
    let path = db.as_deref().unwrap_or(&cfg.paths.database);
    persist::load(path, Some(&cfg.fingerprint())).map_err(|e| {
        if e.is_fingerprint_mismatch() {
            format!("{e} (rebuild with `ctmp preprocess`)").into()
        } else {
            e.into()
        }
    })
}

fn print_lookup(
    db: &TrajectoryDatabase,
    cfg: &HarnessConfig,
    theta: &ProjectileState,
) -> Result<bool, Failure> {
    let ctx = QueryContext::new(cfg.dome()?)?;
    ctx.check(db)?;
    let clock = MonotonicClock::new();
    match lookup(theta, db, &ctx, &clock) {
        Ok(r) => {
            println!("tunnel {}", r.tunnel);
            println!("tf_s {:.6}", r.tf);
            println!("time_to_inner_dome_s {:.6}", r.crossing.t_inner);
            println!("lookup_time_s {:.9}", r.lookup_time);
            let end = r.trajectory.evaluate_clamped(r.tf);
            let q: Vec<String> = end.iter().map(|x| format!("{x:.6}")).collect();
            println!("final_config {}", q.join(" "));
            Ok(true)
        }
        Err(f) => {
            println!("no_solution {}", f.error);
            println!("lookup_time_s {:.9}", f.lookup_time);
            Ok(false)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Preprocess {
            common,
            out,
            workers,
            replan_depth,
            seed,
        } => {
            let mut cfg = HarnessConfig::load(&common.config)?;
            if let Some(d) = replan_depth {
                cfg.build.replan_depth = d;
            }
            if let Some(s) = seed {
                cfg.ik.seed = s;
            }
            let built = preprocess(&cfg, workers)?;
            let path = out.unwrap_or_else(|| cfg.paths.database.clone());
            persist::save(&path, &built.db, &built.tensor)?;
            println!("tunnels {}", built.db.entries.len());
            for (label, s) in [
                ("covered", EntryStatus::Covered),
                ("unreachable", EntryStatus::Unreachable),
                ("infeasible", EntryStatus::Infeasible),
            ] {
                println!("{label} {}", built.db.count(s));
            }
            println!("tensor_entries {}", built.tensor.table.len());
            println!("tensor_transitions {}", built.tensor.transitions.len());
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Query { common, db, theta } => {
            let cfg = HarnessConfig::load(&common.config)?;
            let (db, _) = load_db(&cfg, &db)?;
            let theta: [f64; 6] = theta.try_into().map_err(|_| "expected six values")?;
            print_lookup(&db, &cfg, &ProjectileState::from_theta(theta))
        }
        Command::Bench {
            common,
            db,
            n,
            seed,
            out,
            workers,
            overhead_ms,
        } => {
            let mut cfg = HarnessConfig::load(&common.config)?;
            if let Some(o) = overhead_ms {
                cfg.bench.overhead_ms = o;
            }
            let (db, tensor) = load_db(&cfg, &db)?;
            let report = run_benchmark(
                &cfg,
                &db,
                &tensor,
                n.unwrap_or(cfg.bench.n),
                seed.unwrap_or(cfg.bench.seed),
                workers,
            )?;
            let text = report.render();
            let path = out.unwrap_or_else(|| cfg.paths.report.clone());
            write_file(&path, &text)?;
            print!("{}", report.table());
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Estimate { common, obs, db } => {
            let cfg = HarnessConfig::load(&common.config)?;
            let text =
                std::fs::read_to_string(&obs).map_err(|e| format!("{}: {e}", obs.display()))?;
            let observations = parse_observations(&text)
                .map_err(|(line, msg)| format!("{}:{line}: {msg}", obs.display()))?;
            let state = fit(&observations, GRAVITY)?;
            let t: Vec<String> = state.theta().iter().map(|x| format!("{x:.6}")).collect();
            println!("theta {}", t.join(" "));
            match db {
                Some(_) => {
                    let (db, _) = load_db(&cfg, &db)?;
                    print_lookup(&db, &cfg, &state)
                }
                None => Ok(true),
            }
        }
        Command::ValidateDb {
            common,
            db,
            rays,
            workers,
        } => {
            let cfg = HarnessConfig::load(&common.config)?;
            let (db, _) = load_db(&cfg, &db)?;
            let issues = audit_database(&cfg, &db, rays.unwrap_or(cfg.build.audit_rays), workers)?;
            for i in &issues {
                println!("tunnel {} {:?}", i.tunnel, i.failure);
            }
            println!("covered {}", db.count(EntryStatus::Covered));
            println!("violations {}", issues.len());
            Ok(issues.is_empty())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
