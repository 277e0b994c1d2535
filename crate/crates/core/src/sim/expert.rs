//! Pure-pursuit driver that follows a segment's centerline, swerves around
//! obstacles and announces the upcoming maneuver.

use serde::{Deserialize, Serialize};

use super::route::{Segment, HALF_WIDTH};
use super::world::{EntityKind, World};
use super::SimError;
use crate::types::{Action, Command};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub lookahead: f64,
    /// Forward throttle on a straight path.
    pub base_throttle: f64,
    /// Lateral shift of the pursuit target when passing an obstacle.
    pub obstacle_offset: f64,
    /// Route departure is signalled beyond this lateral error.
    pub departure_limit: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            lookahead: 0.6,
            base_throttle: 0.5,
            obstacle_offset: 0.35,
            departure_limit: HALF_WIDTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertOutput {
    pub action: Action,
    pub command: Command,
    /// Arc length of the closest path point.
    pub s: f64,
    pub lateral_error: f64,
}

/// Stateful wrapper that keeps the closest-point search local, so the
/// tracked index never jumps between distant parts of the path.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    pub cfg: ExpertConfig,
    index: Option<usize>,
}

impl ScriptedExpert {
    pub fn new(cfg: ExpertConfig) -> Self {
        ScriptedExpert { cfg, index: None }
    }

    pub fn reset(&mut self) {
        self.index = None;
    }

    pub fn act(&mut self, world: &World, seg: &Segment) -> Result<ExpertOutput, SimError> {
        let p = world.robot.pose;
        let i = match self.index {
            None => seg.closest_path_index(p.x, p.y),
            Some(h) => {
                let lo = h.saturating_sub(20);
                let hi = (h + 60).min(seg.path.len());
                let mut best = (h, f64::INFINITY);
                for (k, q) in seg.path[lo..hi].iter().enumerate() {
                    let d = (q.x - p.x).powi(2) + (q.y - p.y).powi(2);
                    if d < best.1 {
                        best = (lo + k, d);
                    }
                }
                best.0
            }
        };
        self.index = Some(i);
        pursue(world, seg, &self.cfg, i)
    }
}

/// Stateless form: searches the whole path for the closest point.
pub fn scripted_expert(world: &World, seg: &Segment) -> Result<ExpertOutput, SimError> {
    let p = world.robot.pose;
    let i = seg.closest_path_index(p.x, p.y);
    pursue(world, seg, &ExpertConfig::default(), i)
}

fn tangent(seg: &Segment, i: usize) -> (f64, f64) {
    let a = seg.path[i.min(seg.path.len() - 2)];
    let b = seg.path[(i + 1).min(seg.path.len() - 1).max(1)];
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let l = dx.hypot(dy).max(1e-12);
    (dx / l, dy / l)
}

fn index_at(seg: &Segment, from: usize, s: f64) -> usize {
    let mut j = from;
    while j + 1 < seg.path.len() && seg.path[j].s < s {
        j += 1;
    }
    j
}

/// Signed lateral shift (left positive) of the pursuit target at arc length `s`.
fn avoidance_offset(world: &World, seg: &Segment, cfg: &ExpertConfig, s: f64) -> f64 {
    let mut offset = 0.0f64;
    for e in &world.entities {
        if e.kind != EntityKind::Obstacle {
            continue;
        }
        let j = seg.closest_path_index(e.pose.x, e.pose.y);
        let q = seg.path[j];
        let t = tangent(seg, j);
        let lateral = t.0 * (e.pose.y - q.y) - t.1 * (e.pose.x - q.x);
        if lateral.abs() > e.radius + world.body.footprint_radius + 0.3 {
            continue;
        }
        let ds = s - q.s;
        let w = if ds < -1.6 || ds > 1.0 {
            0.0
        } else if ds < -0.6 {
            (ds + 1.6) / 1.0
        } else if ds > 0.6 {
            (1.0 - ds) / 0.4
        } else {
            1.0
        };
        let side = if lateral > 0.0 { -1.0 } else { 1.0 };
        let o = side * cfg.obstacle_offset * w;
        if o.abs() > offset.abs() {
            offset = o;
        }
    }
    offset
}

fn pursue(world: &World, seg: &Segment, cfg: &ExpertConfig, i: usize) -> Result<ExpertOutput, SimError> {
    let p = world.robot.pose;
    let q = seg.path[i];
    let lateral_error = (q.x - p.x).hypot(q.y - p.y);
    if lateral_error > cfg.departure_limit {
        return Err(SimError::RouteDeparture {
            lateral_error,
            limit: cfg.departure_limit,
        });
    }
    let command = seg.command_at(q.s);
    let j = index_at(seg, i, q.s + cfg.lookahead);
    let target = seg.path[j];
    let off = avoidance_offset(world, seg, cfg, target.s);
    let t = tangent(seg, j);
    let (tx, ty) = (target.x - t.1 * off, target.y + t.0 * off);

    // target in the robot frame (x forward, y left)
    let (dx, dy) = (tx - p.x, ty - p.y);
    let (c, s) = (p.heading.cos(), p.heading.sin());
    let fx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    let l2 = (fx * fx + ly * ly).max(1e-9);
    let curvature = 2.0 * ly / l2;
    let b = &world.body;
    let v = cfg.base_throttle * b.max_wheel_speed;
    let omega = v * curvature;
    let steer = (-omega * b.track_width / b.max_wheel_speed).clamp(-2.0 * cfg.base_throttle, 2.0 * cfg.base_throttle);
    let action = Action::new(
        (cfg.base_throttle + steer / 2.0).clamp(0.0, 1.0),
        (cfg.base_throttle - steer / 2.0).clamp(0.0, 1.0),
    )
    .unwrap_or(Action::STOP);
    Ok(ExpertOutput {
        action,
        command,
        s: q.s,
        lateral_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::route::builtin_route;
    use crate::sim::world::BodyParams;
    use crate::types::Pose;

    fn world_for(route: &str, seg: usize) -> (World, Segment) {
        let r = builtin_route(route).unwrap();
        let s = r.segments[seg].clone();
        (World::new(r.grid_for(seg), s.start, BodyParams::ideal(), 1), s)
    }

    #[test]
    fn on_centerline_drives_straight() {
        let (w, s) = world_for("EVAL1", 0);
        let out = scripted_expert(&w, &s).unwrap();
        assert!(out.action.steering().abs() < 1e-9, "{:?}", out.action);
        assert!(out.action.left > 0.0);
        assert_eq!(out.command, Command::Straight);
    }

    #[test]
    fn offset_left_steers_right() {
        // segment 0 heads east; +y is left of the centerline
        let (mut w, s) = world_for("EVAL1", 0);
        w.reset_robot(Pose::new(s.start.x + 1.0, s.start.y + 0.3, 0.0));
        let out = scripted_expert(&w, &s).unwrap();
        assert!(out.action.steering() > 0.0);
        assert!(out.action.left >= 0.0 && out.action.right >= 0.0);
        w.reset_robot(Pose::new(s.start.x + 1.0, s.start.y - 0.3, 0.0));
        assert!(scripted_expert(&w, &s).unwrap().action.steering() < 0.0);
    }

    #[test]
    fn departure_is_signalled() {
        let (mut w, s) = world_for("EVAL1", 0);
        w.reset_robot(Pose::new(s.start.x + 1.0, s.start.y + 0.8, 0.0));
        assert!(matches!(scripted_expert(&w, &s), Err(SimError::RouteDeparture { .. })));
    }
}
