//! Simulation, firmware emulation, policy learning, data collection,
//! person following and benchmarking for a small differential-drive robot.

pub mod datakit;
pub mod evalbench;
pub mod experiment;
pub mod firmware;
pub mod follow;
pub mod nn;
pub mod sim;
pub mod types;

pub use types::{Action, Command, Pose};
