//! Harness configuration: one TOML file with a section per module.
//! Unknown keys are errors; missing keys take the library defaults.

use std::path::{Path, PathBuf};

use ctmp_core::ballistics::ProjectileSampleSpec;
use ctmp_core::baseline::RrtParams;
use ctmp_core::collision::Obstacle;
use ctmp_core::database::{BuildParams, Fingerprint};
use ctmp_core::geometry::{DomeConfig, Face};
use ctmp_core::insat::InsatParams;
use ctmp_core::kinematics::{IkParams, ManipulatorModel};
use ctmp_core::query::InterceptionParams;
use ctmp_core::trajopt::TrajOptSettings;
use ctmp_core::Vec3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomeSection {
    pub center: [f64; 3],
    pub inner_extents: [f64; 3],
    pub outer_extents: [f64; 3],
    /// Face labels: "+X", "-X", "+Y", "-Y", "+Z".
    pub active_faces: Vec<String>,
    pub cell_size: f64,
    pub shield_side: f64,
    pub pose_tolerance: f64,
}

impl Default for DomeSection {
    fn default() -> Self {
        let d = DomeConfig::default();
        Self {
            center: d.center.into(),
            inner_extents: d.inner_extents.into(),
            outer_extents: d.outer_extents.into(),
            active_faces: d
                .active_faces
                .iter()
                .map(|f| f.label().to_string())
                .collect(),
            cell_size: d.cell_size,
            shield_side: d.shield_side,
            pose_tolerance: d.pose_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmSection {
    /// Only "default" (six-axis arm) is built in.
    pub preset: String,
    /// Overrides the preset's home configuration (rad).
    pub home: Option<Vec<f64>>,
    /// Multiplies every joint velocity limit.
    pub velocity_scale: f64,
}

impl Default for ArmSection {
    fn default() -> Self {
        Self {
            preset: "default".into(),
            home: None,
            velocity_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObstacleSection {
    Cylinder {
        base: [f64; 3],
        axis: [f64; 3],
        radius: f64,
        height: f64,
    },
    Cuboid {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajOptSection {
    pub w1: f64,
    pub w2: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub num_ctrl: usize,
    pub n_check: usize,
    pub collision_margin: f64,
    pub mu0: f64,
    pub mu_growth: f64,
    pub outer_rounds: usize,
    pub inner_iters: usize,
    pub velocity_safety: f64,
    pub rel_tol: f64,
    pub constraint_tol: f64,
}

impl Default for TrajOptSection {
    fn default() -> Self {
        let s = TrajOptSettings::default();
        Self {
            w1: s.w1,
            w2: s.w2,
            t_min: s.t_min,
            t_max: s.t_max,
            num_ctrl: s.num_ctrl,
            n_check: s.n_check,
            collision_margin: s.collision_margin,
            mu0: s.mu0,
            mu_growth: s.mu_growth,
            outer_rounds: s.outer_rounds,
            inner_iters: s.inner_iters,
            velocity_safety: s.velocity_safety,
            rel_tol: s.rel_tol,
            constraint_tol: s.constraint_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkSection {
    pub damping: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub max_step: f64,
    pub seed: u64,
}

impl Default for IkSection {
    fn default() -> Self {
        let p = IkParams::default();
        Self {
            damping: p.damping,
            max_iters: p.max_iters,
            restarts: p.restarts,
            max_step: p.max_step,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InsatSection {
    pub resolution_deg: f64,
    pub weight: f64,
    pub first_valid_ancestor: bool,
    pub direct_first: bool,
    pub max_expansions: usize,
    /// Wall-clock budget per plan call (s); only used when
    /// `build.deterministic` is false.
    pub time_budget: f64,
}

impl Default for InsatSection {
    fn default() -> Self {
        let p = InsatParams::default();
        Self {
            resolution_deg: p.resolution.to_degrees(),
            weight: p.weight,
            first_valid_ancestor: p.first_valid_ancestor,
            direct_first: p.direct_first,
            max_expansions: p.max_expansions,
            time_budget: p.time_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildSection {
    pub goals_per_tunnel: usize,
    pub goal_margin: f64,
    pub replan_states: u32,
    pub replan_depth: u32,
    pub replan_radius: f64,
    pub store_transitions: bool,
    pub audit_rays: usize,
    /// Budget planning by expansions only, so builds are reproducible
    /// byte for byte.
    pub deterministic: bool,
}

impl Default for BuildSection {
    fn default() -> Self {
        let p = BuildParams::default();
        Self {
            goals_per_tunnel: p.goals_per_tunnel,
            goal_margin: p.goal_margin,
            replan_states: p.replan_states,
            replan_depth: p.replan_depth,
            replan_radius: p.replan_radius,
            store_transitions: p.store_transitions,
            audit_rays: p.audit_rays,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RrtSection {
    /// Extension step (rad); absent means `RANGE_FRACTION` of the arm's
    /// joint-space diagonal.
    pub step: Option<f64>,
    pub goal_bias: f64,
    pub time_budget: f64,
    pub check_resolution: f64,
    pub shortcut: bool,
}

impl Default for RrtSection {
    fn default() -> Self {
        let p = RrtParams::default();
        Self {
            step: None,
            goal_bias: p.goal_bias,
            time_budget: p.time_budget,
            check_resolution: p.check_resolution,
            shortcut: p.shortcut,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectileSection {
    pub distance_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub launch_height: f64,
    pub azimuth_half_width_deg: f64,
}

impl Default for ProjectileSection {
    fn default() -> Self {
        let s = ProjectileSampleSpec::default();
        Self {
            distance_range: s.distance_range.into(),
            speed_range: s.speed_range.into(),
            launch_height: s.launch_height,
            azimuth_half_width_deg: s.azimuth_half_width.to_degrees(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    /// Wall-clock monotonic time.
    Monotonic,
    /// Fixed tick per clock read; timings become deterministic work counts.
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub n: usize,
    pub seed: u64,
    pub overhead_ms: f64,
    pub success_slack: f64,
    pub n_rays: usize,
    pub clock: ClockKind,
    /// Seconds per clock read under the virtual clock.
    pub virtual_tick: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            n: 400,
            seed: 0,
            overhead_ms: 0.0,
            success_slack: 1.0,
            n_rays: 1000,
            clock: ClockKind::Monotonic,
            virtual_tick: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub database: PathBuf,
    pub report: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            database: "ctmp.db".into(),
            report: "report.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub dome: DomeSection,
    pub arm: ArmSection,
    pub obstacles: Vec<ObstacleSection>,
    pub trajopt: TrajOptSection,
    pub ik: IkSection,
    pub insat: InsatSection,
    pub build: BuildSection,
    pub rrt: RrtSection,
    pub projectiles: ProjectileSection,
    pub bench: BenchSection,
    pub paths: PathsSection,
}

/// The sections a database depends on, in a fixed order.
#[derive(Serialize)]
struct DatabaseKey<'a> {
    dome: &'a DomeSection,
    arm: &'a ArmSection,
    obstacles: &'a [ObstacleSection],
    trajopt: &'a TrajOptSection,
    ik: &'a IkSection,
    insat: &'a InsatSection,
    build: &'a BuildSection,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl HarnessConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Checks every module-level invariant by converting each section.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.dome()?.validate().map_err(invalid)?;
        let model = self.model()?;
        for o in self.obstacles() {
            o.validate().map_err(invalid)?;
        }
        self.insat().validate().map_err(invalid)?;
        self.build().validate().map_err(invalid)?;
        self.rrt(0).validate().map_err(invalid)?;
        self.projectiles(0).validate().map_err(invalid)?;
        let home = &model.home_config;
        if home.len() != model.dof() || !model.within_limits(home) {
            return Err(invalid("arm.home outside the joint limits"));
        }
        if model.in_collision(home, &self.obstacles()) {
            return Err(invalid("arm.home in collision"));
        }
        let b = &self.bench;
        if !(b.success_slack > 0.0) || !(b.overhead_ms >= 0.0) || !(b.virtual_tick >= 0.0) {
            return Err(invalid(
                "bench: success_slack must be positive, overhead_ms and virtual_tick non-negative",
            ));
        }
        Ok(())
    }

    pub fn dome(&self) -> Result<DomeConfig, ConfigError> {
        let d = &self.dome;
        let faces = d
            .active_faces
            .iter()
            .map(|s| Face::parse(s).ok_or_else(|| invalid(format!("unknown face {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DomeConfig {
            center: v3(d.center),
            inner_extents: v3(d.inner_extents),
            outer_extents: v3(d.outer_extents),
            active_faces: faces,
            cell_size: d.cell_size,
            shield_side: d.shield_side,
            pose_tolerance: d.pose_tolerance,
        })
    }

    pub fn model(&self) -> Result<ManipulatorModel, ConfigError> {
        let mut m = match self.arm.preset.as_str() {
            "default" => ManipulatorModel::default_arm(),
            other => return Err(invalid(format!("unknown arm preset {other:?}"))),
        };
        if !(self.arm.velocity_scale > 0.0) {
            return Err(invalid("arm.velocity_scale must be positive"));
        }
        m.velocity_limits
            .iter_mut()
            .for_each(|v| *v *= self.arm.velocity_scale);
        if let Some(home) = &self.arm.home {
            m.home_config = home.clone();
        }
        Ok(m)
    }

    pub fn obstacles(&self) -> Vec<Obstacle> {
        self.obstacles
            .iter()
            .map(|o| match *o {
                ObstacleSection::Cylinder {
                    base,
                    axis,
                    radius,
                    height,
                } => Obstacle::Cylinder {
                    base: v3(base),
                    axis: v3(axis),
                    radius,
                    height,
                },
                ObstacleSection::Cuboid {
                    center,
                    half_extents,
                } => Obstacle::Cuboid {
                    center: v3(center),
                    half_extents: v3(half_extents),
                },
            })
            .collect()
    }

    pub fn trajopt(&self) -> TrajOptSettings {
        let t = &self.trajopt;
        TrajOptSettings {
            w1: t.w1,
            w2: t.w2,
            t_min: t.t_min,
            t_max: t.t_max,
            num_ctrl: t.num_ctrl,
            n_check: t.n_check,
            collision_margin: t.collision_margin,
            mu0: t.mu0,
            mu_growth: t.mu_growth,
            outer_rounds: t.outer_rounds,
            inner_iters: t.inner_iters,
            velocity_safety: t.velocity_safety,
            rel_tol: t.rel_tol,
            constraint_tol: t.constraint_tol,
            record_log: false,
        }
    }

    pub fn ik(&self) -> IkParams {
        let k = &self.ik;
        IkParams {
            damping: k.damping,
            max_iters: k.max_iters,
            restarts: k.restarts,
            max_step: k.max_step,
            seed: k.seed,
        }
    }

    pub fn insat(&self) -> InsatParams {
        let i = &self.insat;
        InsatParams {
            resolution: i.resolution_deg.to_radians(),
            weight: i.weight,
            first_valid_ancestor: i.first_valid_ancestor,
            direct_first: i.direct_first,
            max_expansions: i.max_expansions,
            time_budget: i.time_budget,
            trajopt: self.trajopt(),
            ik: self.ik(),
        }
    }

    pub fn build(&self) -> BuildParams {
        let b = &self.build;
        BuildParams {
            goals_per_tunnel: b.goals_per_tunnel,
            goal_margin: b.goal_margin,
            ik: self.ik(),
            replan_states: b.replan_states,
            replan_depth: b.replan_depth,
            replan_radius: b.replan_radius,
            store_transitions: b.store_transitions,
            audit_rays: b.audit_rays,
        }
    }

    pub fn rrt(&self, seed: u64) -> RrtParams {
        let r = &self.rrt;
        let step = r.step.unwrap_or_else(|| {
            self.model()
                .map_or(RrtParams::default().step, |m| RrtParams::for_model(&m).step)
        });
        RrtParams {
            step,
            goal_bias: r.goal_bias,
            time_budget: r.time_budget,
            check_resolution: r.check_resolution,
            seed,
            shortcut: r.shortcut,
        }
    }

    pub fn projectiles(&self, seed: u64) -> ProjectileSampleSpec {
        let p = &self.projectiles;
        ProjectileSampleSpec {
            distance_range: (p.distance_range[0], p.distance_range[1]),
            speed_range: (p.speed_range[0], p.speed_range[1]),
            launch_height: p.launch_height,
            azimuth_half_width: p.azimuth_half_width_deg.to_radians(),
            seed,
        }
    }

    pub fn interception(&self) -> InterceptionParams {
        InterceptionParams {
            overhead: self.bench.overhead_ms * 1e-3,
            success_slack: self.bench.success_slack,
            n_rays: self.bench.n_rays,
        }
    }

    /// SHA-256 over the canonical TOML of the sections a database depends
    /// on (dome, arm, obstacles, solver and build settings).
    pub fn fingerprint(&self) -> Fingerprint {
        let key = DatabaseKey {
            dome: &self.dome,
            arm: &self.arm,
            obstacles: &self.obstacles,
            trajopt: &self.trajopt,
            ik: &self.ik,
            insat: &self.insat,
            build: &self.build,
        };
        let text = toml::to_string(&key).expect("config sections serialize");
        Sha256::digest(text.as_bytes()).into()
    }
}
