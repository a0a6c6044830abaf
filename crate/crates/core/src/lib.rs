//! Preprocessing-based kinodynamic planning for intercepting ballistic
//! projectiles with a shield-carrying serial manipulator.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: the offline stage builds a tunnel-indexed trajectory
//! database with a lattice-search / B-spline optimization planner, the
//! online stage maps a projectile estimate to a tunnel and returns the
//! stored trajectory in constant time. File formats, configuration,
//! worker pools and the command line live in the `ctmp` companion crate.
//!
//! Module map:
//!
//! - [`geometry`]: domes, cells, tunnels, goal poses, shield blocking
//! - [`kinematics`]: serial revolute arm, FK, damped IK, capsule collisions
//! - [`spline`]: clamped B-spline trajectories (Cox-de Boor)
//! - [`trajopt`]: minimum-time smooth trajectory optimization
//! - [`insat`]: interleaved lattice search and trajectory optimization
//! - [`ballistics`]: projectile model, least-squares fit, dome crossings
//! - [`database`]: offline database and replan tensor construction
//! - [`query`]: constant-time lookup, goal switching, interception scoring
//! - [`baseline`]: RRT-Connect with rectangular time parameterization

#![no_std]
#![warn(missing_debug_implementations, rust_2018_idioms)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ballistics;
pub mod baseline;
pub mod clock;
pub mod collision;
pub mod database;
pub mod geometry;
pub mod insat;
pub mod kinematics;
pub mod query;
pub mod spline;
pub mod trajopt;

pub use nalgebra;

/// 3-vector in metres (or metres per second where noted).
pub type Vec3 = nalgebra::Vector3<f64>;
/// Rigid transform.
pub type Pose = nalgebra::Isometry3<f64>;

/// Joint-space vector in radians.
pub type JointVec = alloc::vec::Vec<f64>;
