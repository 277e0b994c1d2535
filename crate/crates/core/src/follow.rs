//! Person following: confidence gating, cross-frame association and
//! proportional visual servoing on the tracked bounding box.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::camera::CameraConfig;
use crate::sim::grid::OccupancyGrid;
use crate::sim::sensors::{ground_truth_detections, Detection, DetectionNoise, PERSON_CLASS};
use crate::sim::world::{BodyParams, Entity, MotionScript, World};
use crate::sim::SimError;
use crate::types::{Action, Pose};

#[derive(Debug, Error)]
pub enum FollowError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("detection log line {line}: {reason}")]
    Replay { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowGains {
    pub kp_steer: f64,
    pub kp_throttle: f64,
    /// Normalized box height held at the following distance.
    pub target_height: f64,
    pub lost_patience: u32,
    pub min_confidence: f64,
    pub min_iou: f64,
}

impl Default for FollowGains {
    fn default() -> Self {
        FollowGains {
            kp_steer: 1.2,
            kp_throttle: 2.0,
            target_height: 0.45,
            lost_patience: 10,
            min_confidence: 0.5,
            min_iou: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub bbox: Detection,
    /// Frames since the last association.
    pub age: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FollowState {
    pub target: Option<Track>,
    pub gains: FollowGains,
}

impl FollowState {
    pub fn new(gains: FollowGains) -> Self {
        FollowState { target: None, gains }
    }

    pub fn mirrored(&self) -> Self {
        FollowState {
            target: self.target.map(|t| Track {
                bbox: t.bbox.mirrored(),
                age: t.age,
            }),
            gains: self.gains,
        }
    }
}

fn best_by<'a>(dets: &[&'a Detection], key: impl Fn(&Detection) -> f64) -> Option<&'a Detection> {
    let mut best: Option<(&Detection, f64)> = None;
    for d in dets {
        let k = key(d);
        if best.map_or(true, |(_, bk)| k > bk) {
            best = Some((d, k));
        }
    }
    best.map(|(d, _)| d)
}

/// Updates the tracked target from one frame of detections.
pub fn select_target(dets: &[Detection], state: &FollowState) -> FollowState {
    let g = &state.gains;
    let survivors: Vec<&Detection> = dets
        .iter()
        .filter(|d| d.class == PERSON_CLASS && d.confidence >= g.min_confidence)
        .collect();
    let adopt = || {
        best_by(&survivors, |d| d.confidence).map(|d| Track {
            bbox: *d,
            age: 0,
        })
    };
    let target = match state.target {
        None => adopt(),
        Some(t) => {
            let associated: Vec<&Detection> = survivors.iter().copied().filter(|d| d.iou(&t.bbox) >= g.min_iou).collect();
            match best_by(&associated, |d| d.iou(&t.bbox)) {
                Some(d) => Some(Track { bbox: *d, age: 0 }),
                None if t.age + 1 > g.lost_patience => adopt(),
                None => Some(Track { bbox: t.bbox, age: t.age + 1 }),
            }
        }
    };
    FollowState {
        target,
        gains: state.gains,
    }
}

/// Proportional steering on the box center and throttle on its height.
pub fn servo(state: &FollowState) -> Action {
    let Some(t) = state.target else {
        return Action::STOP;
    };
    let g = &state.gains;
    let u = g.kp_steer * (t.bbox.cx - 0.5);
    let f = (g.kp_throttle * (g.target_height - t.bbox.h)).clamp(0.0, 1.0);
    Action {
        left: (f + u / 2.0).clamp(-1.0, 1.0),
        right: (f - u / 2.0).clamp(-1.0, 1.0),
    }
}

/// Per-frame detector.
pub trait DetectionSource {
    fn detect(&mut self, world: &mut World, frame: u64) -> Vec<Detection>;
}

/// Projects the simulated person into the camera.
#[derive(Debug, Clone)]
pub struct GroundTruthSource {
    pub camera: CameraConfig,
    pub noise: DetectionNoise,
}

impl GroundTruthSource {
    pub fn new(noise: DetectionNoise) -> Self {
        GroundTruthSource {
            camera: CameraConfig::default(),
            noise,
        }
    }
}

impl DetectionSource for GroundTruthSource {
    fn detect(&mut self, world: &mut World, _frame: u64) -> Vec<Detection> {
        ground_truth_detections(world, &self.camera, &self.noise)
    }
}

/// One row of a detection log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub frame: u64,
    #[serde(flatten)]
    pub det: Detection,
}

/// Plays back detections from a JSONL log; frames absent from the log are empty.
#[derive(Debug, Clone, Default)]
pub struct ReplaySource {
    pub rows: Vec<DetectionRow>,
}

impl ReplaySource {
    pub fn from_jsonl(text: &str) -> Result<Self, FollowError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: DetectionRow = serde_json::from_str(line).map_err(|e| FollowError::Replay {
                line: i + 1,
                reason: e.to_string(),
            })?;
            rows.push(row);
        }
        Ok(ReplaySource { rows })
    }

    pub fn open(path: &Path) -> Result<Self, FollowError> {
        let mut text = String::new();
        for line in BufReader::new(fs::File::open(path)?).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::from_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("detection rows serialize") + "\n")
            .collect()
    }
}

impl DetectionSource for ReplaySource {
    fn detect(&mut self, _world: &mut World, frame: u64) -> Vec<Detection> {
        self.rows.iter().filter(|r| r.frame == frame).map(|r| r.det).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowConfig {
    pub gains: FollowGains,
    pub duration_s: f64,
    pub dt: f64,
    pub substeps: usize,
    /// Largest `|cx - 0.5|` counted as centered.
    pub center_tolerance: f64,
}

impl Default for FollowConfig {
    fn default() -> Self {
        FollowConfig {
            gains: FollowGains::default(),
            duration_s: 150.0,
            dt: 0.05,
            substeps: 2,
            center_tolerance: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowStep {
    pub frame: u64,
    pub t: f64,
    pub action: Action,
    pub target: Option<Detection>,
    pub robot: Pose,
    pub person: Option<Pose>,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowMetrics {
    pub frames: usize,
    /// Fraction of all frames whose target is centered; frames without a target count as misses.
    pub centering_rate: f64,
    /// Rising edges of the contact flag.
    pub collisions: usize,
    /// Loops walked by the person.
    pub person_loops: f64,
    /// Net turns of the robot around the loop's centroid.
    pub robot_loops: f64,
    pub mean_distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowResult {
    pub trace: Vec<FollowStep>,
    pub metrics: FollowMetrics,
}

fn person_index(world: &World) -> Option<usize> {
    world.entities.iter().position(|e| e.kind == crate::sim::world::EntityKind::Person)
}

/// Runs the closed loop for `cfg.duration_s` of simulated time.
pub fn follow_episode(world: &mut World, source: &mut dyn DetectionSource, cfg: &FollowConfig) -> Result<FollowResult, FollowError> {
    let frames = (cfg.duration_s / cfg.dt).round() as u64;
    let sub_dt = cfg.dt / cfg.substeps.max(1) as f64;
    let mut state = FollowState::new(cfg.gains);
    let mut trace = Vec::with_capacity(frames as usize);
    let pi = person_index(world);
    let centroid = pi.and_then(|i| match &world.entities[i].script {
        MotionScript::Loop { waypoints, .. } if !waypoints.is_empty() => {
            let n = waypoints.len() as f64;
            Some((waypoints.iter().map(|p| p.0).sum::<f64>() / n, waypoints.iter().map(|p| p.1).sum::<f64>() / n))
        }
        _ => None,
    });
    let loop_len = pi.and_then(|i| world.entities[i].script.loop_length());
    let bearing = |p: Pose, c: (f64, f64)| (p.y - c.1).atan2(p.x - c.0);
    let mut swept = 0.0;
    let mut last_bearing = centroid.map(|c| bearing(world.robot.pose, c));
    let (mut centered, mut collisions, mut was_colliding) = (0usize, 0usize, false);
    let mut dist_sum = 0.0;
    let t0 = world.time;
    for frame in 0..frames {
        let dets = source.detect(world, frame);
        state = select_target(&dets, &state);
        let action = servo(&state);
        let mut collided = false;
        for _ in 0..cfg.substeps.max(1) {
            collided |= world.step(action, sub_dt)?.collided;
        }
        if collided && !was_colliding {
            collisions += 1;
        }
        was_colliding = collided;
        if let Some(t) = state.target {
            if (t.bbox.cx - 0.5).abs() < cfg.center_tolerance {
                centered += 1;
            }
        }
        let person = pi.map(|i| world.entities[i].pose);
        if let Some(p) = person {
            dist_sum += world.robot.pose.distance_to(p.x, p.y);
        }
        if let (Some(c), Some(lb)) = (centroid, last_bearing) {
            let b = bearing(world.robot.pose, c);
            swept += crate::types::normalize_angle(b - lb);
            last_bearing = Some(b);
        }
        trace.push(FollowStep {
            frame,
            t: world.time,
            action,
            target: state.target.map(|t| t.bbox),
            robot: world.robot.pose,
            person,
            collided,
        });
    }
    let n = frames.max(1) as f64;
    let speed = pi.and_then(|i| match &world.entities[i].script {
        MotionScript::Loop { speed, .. } => Some(*speed),
        _ => None,
    });
    let person_loops = match (speed, loop_len) {
        (Some(v), Some(l)) if l > 0.0 => v * (world.time - t0) / l,
        _ => 0.0,
    };
    Ok(FollowResult {
        trace,
        metrics: FollowMetrics {
            frames: frames as usize,
            centering_rate: centered as f64 / n,
            collisions,
            person_loops,
            robot_loops: swept.abs() / std::f64::consts::TAU,
            mean_distance_m: if pi.is_some() { dist_sum / n } else { 0.0 },
        },
    })
}

/// Open room with a person walking a square loop, robot behind them.
pub fn looping_person_world(seed: u64) -> World {
    let size = 24.0;
    let mut grid = OccupancyGrid::new(480, 480, 0.05, (0.0, 0.0), 1);
    grid.fill_rect((0.5, 0.5), (size - 0.5, size - 0.5), 0);
    let person = Entity::person(0.0, 0.0).with_script(MotionScript::Loop {
        waypoints: vec![(5.0, 5.0), (19.0, 5.0), (19.0, 19.0), (5.0, 19.0)],
        speed: 0.4,
        phase: 7.0,
    });
    World::new(grid, Pose::new(5.5, 5.0, 0.0), BodyParams::default(), seed).with_entities(vec![person])
}

/// Open room with a person standing `distance` meters ahead, off to one side.
pub fn stationary_person_world(distance: f64, lateral: f64, seed: u64) -> World {
    let mut grid = OccupancyGrid::new(400, 400, 0.05, (0.0, 0.0), 1);
    grid.fill_rect((0.5, 0.5), (19.5, 19.5), 0);
    let person = Entity::person(4.0 + distance, 10.0 + lateral);
    World::new(grid, Pose::new(4.0, 10.0, 0.0), BodyParams::default(), seed).with_entities(vec![person])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, h: f64, conf: f64) -> Detection {
        Detection {
            cx,
            cy: 0.5,
            w: 0.1,
            h,
            confidence: conf,
            class: PERSON_CLASS,
        }
    }

    #[test]
    fn gate_rejects_low_confidence() {
        let s = select_target(&[det(0.2, 0.3, 0.49), det(0.7, 0.3, 0.7)], &FollowState::default());
        assert_eq!(s.target.unwrap().bbox.confidence, 0.7);
        let s = select_target(&[det(0.2, 0.3, 0.49)], &FollowState::default());
        assert!(s.target.is_none());
    }

    #[test]
    fn association_beats_confidence() {
        let s0 = select_target(&[det(0.3, 0.4, 0.8)], &FollowState::default());
        let near = Detection { cx: 0.305, ..det(0.3, 0.4, 0.55) };
        let far = det(0.9, 0.4, 0.9);
        assert!(near.iou(&s0.target.unwrap().bbox) > 0.8);
        let s1 = select_target(&[near, far], &s0);
        assert_eq!(s1.target.unwrap().bbox, near);
    }

    #[test]
    fn target_times_out() {
        let mut s = select_target(&[det(0.5, 0.4, 0.9)], &FollowState::default());
        for _ in 0..10 {
            s = select_target(&[], &s);
            assert!(s.target.is_some());
        }
        s = select_target(&[], &s);
        assert!(s.target.is_none());
    }

    #[test]
    fn servo_examples() {
        let g = FollowGains::default();
        let mut s = FollowState::new(g);
        assert_eq!(servo(&s), Action::STOP);
        s.target = Some(Track {
            bbox: det(0.5, 0.45, 0.9),
            age: 0,
        });
        assert_eq!(servo(&s), Action { left: 0.0, right: 0.0 });
        s.target = Some(Track {
            bbox: det(0.75, 0.45, 0.9),
            age: 0,
        });
        let a = servo(&s);
        assert!((a.left - 0.15).abs() < 1e-12 && (a.right + 0.15).abs() < 1e-12);
    }
}
