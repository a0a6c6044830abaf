//! Host side of the interception planner: TOML configuration, database
//! files, parallel preprocessing and the simulation benchmark.

pub mod bench;
pub mod build;
pub mod clock;
pub mod config;
pub mod persist;
