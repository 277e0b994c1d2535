//! Desk-scale world: differential-drive dynamics, occupancy-grid maps,
//! a column raycast camera, sonar, person detections, routes and a
//! scripted driver.

pub mod camera;
pub mod expert;
pub mod grid;
pub mod route;
pub mod sensors;
pub mod world;

use thiserror::Error;

pub use camera::{render_camera, CameraConfig, CameraFrame};
pub use expert::{scripted_expert, ExpertConfig, ExpertOutput, ScriptedExpert};
pub use grid::OccupancyGrid;
pub use route::{builtin_route, builtin_routes, RouteSpec, Segment, SegmentProgress};
pub use sensors::{ground_truth_detections, sonar_distance, Detection, DetectionNoise};
pub use world::{BodyParams, Entity, EntityKind, MotionScript, StepInfo, World};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid body parameters: {0}")]
    InvalidParams(String),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("invalid route: {0}")]
    InvalidRoute(String),
    #[error("route departure: lateral error {lateral_error:.3} m exceeds {limit:.3} m")]
    RouteDeparture { lateral_error: f64, limit: f64 },
    #[error("route document: {0}")]
    Document(#[from] serde_json::Error),
}
