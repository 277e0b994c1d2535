//! World state and the differential-drive stepping model.


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::OccupancyGrid;
use super::SimError;
use crate::types::{normalize_angle, Action, Pose};

/// Physical parameters of one robot body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyParams {
    /// Effective kinematic track width in meters.
    pub track_width: f64,
    pub wheel_radius: f64,
    /// Wheel surface speed at full duty and nominal voltage (m/s).
    pub max_wheel_speed: f64,
    pub motor_time_constant: f64,
    pub bias_l: f64,
    pub bias_r: f64,
    /// Relative std of the per-step multiplicative actuation noise.
    pub actuation_noise_std: f64,
    pub ticks_per_rev: u32,
    /// Radius of the circular collision footprint.
    pub footprint_radius: f64,
    pub nominal_voltage: f64,
    pub empty_voltage: f64,
    /// Usable pack energy; `f64::INFINITY` disables drain.
    pub battery_capacity_wh: f64,
    /// Electrical draw with both sides at full speed.
    pub motor_power_w: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        BodyParams {
            track_width: 0.50,
            wheel_radius: 0.032,
            max_wheel_speed: 1.5,
            motor_time_constant: 0.15,
            bias_l: 1.0,
            bias_r: 1.0,
            actuation_noise_std: 0.05,
            ticks_per_rev: 20,
            footprint_radius: 0.12,
            nominal_voltage: 12.6,
            empty_voltage: 9.6,
            battery_capacity_wh: 28.0,
            motor_power_w: 12.0,
        }
    }
}

impl BodyParams {
    /// Body with noise and bias removed; used by kinematic checks.
    pub fn ideal() -> Self {
        BodyParams {
            actuation_noise_std: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("track_width", self.track_width),
            ("wheel_radius", self.wheel_radius),
            ("max_wheel_speed", self.max_wheel_speed),
            ("motor_time_constant", self.motor_time_constant),
            ("footprint_radius", self.footprint_radius),
            ("nominal_voltage", self.nominal_voltage),
            ("battery_capacity_wh", self.battery_capacity_wh),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(SimError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("bias_l", self.bias_l), ("bias_r", self.bias_r)] {
            if !(0.85..=1.15).contains(&b) {
                return Err(SimError::InvalidParams(format!("{name} must lie in [0.85, 1.15], got {b}")));
            }
        }
        if self.actuation_noise_std < 0.0 || self.ticks_per_rev == 0 {
            return Err(SimError::InvalidParams("noise std must be >= 0 and ticks_per_rev > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Obstacle,
    Person,
}

/// How an entity moves over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MotionScript {
    Static,
    /// Walks a closed polyline at constant speed, starting `phase` meters in.
    Loop {
        waypoints: Vec<(f64, f64)>,
        speed: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl MotionScript {
    pub fn loop_length(&self) -> Option<f64> {
        match self {
            MotionScript::Loop { waypoints, .. } if waypoints.len() >= 2 => Some(
                (0..waypoints.len())
                    .map(|i| {
                        let a = waypoints[i];
                        let b = waypoints[(i + 1) % waypoints.len()];
                        (b.0 - a.0).hypot(b.1 - a.1)
                    })
                    .sum(),
            ),
            _ => None,
        }
    }

    /// Pose along the script at time `t`, or `None` for static entities.
    pub fn pose_at(&self, t: f64) -> Option<Pose> {
        let MotionScript::Loop { waypoints, speed, phase } = self else {
            return None;
        };
        let total = self.loop_length()?;
        if total <= 0.0 {
            return None;
        }
        let mut s = (phase + speed * t).rem_euclid(total);
        for i in 0..waypoints.len() {
            let a = waypoints[i];
            let b = waypoints[(i + 1) % waypoints.len()];
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            if s <= len || i + 1 == waypoints.len() {
                let f = if len > 0.0 { (s / len).min(1.0) } else { 0.0 };
                return Some(Pose::new(
                    a.0 + (b.0 - a.0) * f,
                    a.1 + (b.1 - a.1) * f,
                    (b.1 - a.1).atan2(b.0 - a.0),
                ));
            }
            s -= len;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub kind: EntityKind,
    pub pose: Pose,
    /// Footprint radius in meters.
    pub radius: f64,
    /// Visual height in meters.
    pub height: f64,
    pub script: MotionScript,
}

impl Entity {
    pub fn obstacle(x: f64, y: f64, radius: f64) -> Self {
        Entity {
            kind: EntityKind::Obstacle,
            pose: Pose::new(x, y, 0.0),
            radius,
            height: 0.8,
            script: MotionScript::Static,
        }
    }

    pub fn person(x: f64, y: f64) -> Self {
        Entity {
            kind: EntityKind::Person,
            pose: Pose::new(x, y, 0.0),
            radius: 0.25,
            height: 1.7,
            script: MotionScript::Static,
        }
    }

    pub fn with_script(mut self, script: MotionScript) -> Self {
        if let Some(p) = script.pose_at(0.0) {
            self.pose = p;
        }
        self.script = script;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    pub wheel_speed_l: f64,
    pub wheel_speed_r: f64,
    /// Accumulated wheel rotation (radians) for odometry.
    pub wheel_angle_l: f64,
    pub wheel_angle_r: f64,
    /// Set when the last step's motion was stopped by contact.
    pub collided: bool,
    /// Number of steps that ended in contact.
    pub contact_steps: u64,
    /// Realized planar speed over the last step (m/s).
    pub speed: f64,
}

impl RobotState {
    pub fn at(pose: Pose) -> Self {
        RobotState {
            pose,
            wheel_speed_l: 0.0,
            wheel_speed_r: 0.0,
            wheel_angle_l: 0.0,
            wheel_angle_r: 0.0,
            collided: false,
            contact_steps: 0,
            speed: 0.0,
        }
    }
}

/// Outcome of one [`World::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub collided: bool,
    /// Wheel rotation during the step (radians), for odometry.
    pub wheel_delta_l: f64,
    pub wheel_delta_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub grid: OccupancyGrid,
    pub robot: RobotState,
    pub entities: Vec<Entity>,
    pub body: BodyParams,
    /// State of charge in `[0, 1]`.
    pub soc: f64,
    pub time: f64,
    rng: ChaCha8Rng,
    sensor_rng: ChaCha8Rng,
}

impl World {
    pub fn new(grid: OccupancyGrid, start: Pose, body: BodyParams, seed: u64) -> Self {
        World {
            grid,
            robot: RobotState::at(start),
            entities: Vec::new(),
            body,
            soc: 1.0,
            time: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sensor_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5e75_0a11_d00d_f00d),
        }
    }

    pub fn with_entities(mut self, entities: Vec<Entity>) -> Self {
        self.entities = entities;
        self.update_entities();
        self
    }

    pub fn battery_voltage(&self) -> f64 {
        self.body.empty_voltage + (self.body.nominal_voltage - self.body.empty_voltage) * self.soc
    }

    /// Generator for sensor noise (sonar, detections); separate from the
    /// actuation stream so sensing never perturbs the dynamics.
    pub fn sensor_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.sensor_rng
    }

    pub fn reset_robot(&mut self, pose: Pose) {
        self.robot = RobotState::at(pose);
    }

    /// Whether a robot footprint at `(x, y)` would touch a wall or entity.
    pub fn footprint_blocked(&self, x: f64, y: f64) -> bool {
        let r = self.body.footprint_radius;
        if self.grid.circle_overlaps_wall(x, y, r) {
            return true;
        }
        self.entities
            .iter()
            .any(|e| (e.pose.x - x).hypot(e.pose.y - y) < e.radius + r)
    }

    fn update_entities(&mut self) {
        let t = self.time;
        for e in &mut self.entities {
            if let Some(p) = e.script.pose_at(t) {
                e.pose = p;
            }
        }
    }

    /// Advances the world by `dt` seconds under `action`.
    pub fn step(&mut self, action: Action, dt: f64) -> Result<StepInfo, SimError> {
        if !(dt > 0.0 && dt <= 0.1) {
            return Err(SimError::InvalidStep(format!("dt must lie in (0, 0.1], got {dt}")));
        }
        if !action.is_finite() {
            return Err(SimError::InvalidStep("action is not finite".into()));
        }
        let a = action.clamped();
        let b = &self.body;
        let vscale = self.battery_voltage() / b.nominal_voltage;
        let noise = b.actuation_noise_std;
        let (nl, nr) = if noise > 0.0 {
            let nl: f64 = self.rng.sample(StandardNormal);
            let nr: f64 = self.rng.sample(StandardNormal);
            (noise * nl, noise * nr)
        } else {
            (0.0, 0.0)
        };
        let target_l = b.bias_l * a.left * b.max_wheel_speed * vscale * (1.0 + nl);
        let target_r = b.bias_r * a.right * b.max_wheel_speed * vscale * (1.0 + nr);
        let alpha = 1.0 - (-dt / b.motor_time_constant).exp();
        let r = &mut self.robot;
        r.wheel_speed_l += (target_l - r.wheel_speed_l) * alpha;
        r.wheel_speed_r += (target_r - r.wheel_speed_r) * alpha;

        let v = 0.5 * (r.wheel_speed_l + r.wheel_speed_r);
        let omega = (r.wheel_speed_r - r.wheel_speed_l) / b.track_width;
        let mid = r.pose.heading + 0.5 * omega * dt;
        let (x0, y0) = (r.pose.x, r.pose.y);
        let x1 = x0 + v * mid.cos() * dt;
        let y1 = y0 + v * mid.sin() * dt;
        let heading = normalize_angle(r.pose.heading + omega * dt);
        let wheel_delta_l = r.wheel_speed_l * dt / b.wheel_radius;
        let wheel_delta_r = r.wheel_speed_r * dt / b.wheel_radius;

        // battery drain proportional to wheel effort
        let effort = (r.wheel_speed_l.abs() + r.wheel_speed_r.abs()) / (2.0 * b.max_wheel_speed);
        let energy_wh = b.motor_power_w * effort * dt / 3600.0;
        let soc_drop = energy_wh / b.battery_capacity_wh;

        let blocked = self.footprint_blocked(x1, y1);
        let (xf, yf) = if blocked {
            // largest free fraction of the straight-line move
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            if self.footprint_blocked(x0, y0) {
                hi = 0.0;
            }
            for _ in 0..20 {
                if hi <= lo {
                    break;
                }
                let m = 0.5 * (lo + hi);
                if self.footprint_blocked(x0 + (x1 - x0) * m, y0 + (y1 - y0) * m) {
                    hi = m;
                } else {
                    lo = m;
                }
            }
            (x0 + (x1 - x0) * lo, y0 + (y1 - y0) * lo)
        } else {
            (x1, y1)
        };

        let r = &mut self.robot;
        r.pose = Pose { x: xf, y: yf, heading };
        r.wheel_angle_l += wheel_delta_l;
        r.wheel_angle_r += wheel_delta_r;
        r.speed = (xf - x0).hypot(yf - y0) / dt;
        r.collided = blocked;
        if blocked {
            r.contact_steps += 1;
            r.wheel_speed_l = 0.0;
            r.wheel_speed_r = 0.0;
        }
        self.soc = (self.soc - soc_drop).max(0.0);
        self.time += dt;
        self.update_entities();
        Ok(StepInfo {
            collided: blocked,
            wheel_delta_l,
            wheel_delta_r,
        })
    }

    /// Mirror image of this world about the horizontal line `y = axis_y`.
    /// Grid rows are flipped, so `axis_y` must be the grid's vertical center.
    pub fn mirrored_about_grid_center(&self) -> World {
        let g = &self.grid;
        let axis_y = g.origin.1 + g.height as f64 * g.resolution / 2.0;
        let mut grid = g.clone();
        for iy in 0..g.height {
            for ix in 0..g.width {
                grid.cells[iy * g.width + ix] = g.cells[(g.height - 1 - iy) * g.width + ix];
            }
        }
        let mirror_pose = |p: Pose| Pose::new(p.x, 2.0 * axis_y - p.y, -p.heading);
        let mut w = self.clone();
        w.grid = grid;
        w.robot.pose = mirror_pose(self.robot.pose);
        std::mem::swap(&mut w.robot.wheel_speed_l, &mut w.robot.wheel_speed_r);
        std::mem::swap(&mut w.robot.wheel_angle_l, &mut w.robot.wheel_angle_r);
        for e in &mut w.entities {
            e.pose = mirror_pose(e.pose);
            if let MotionScript::Loop { waypoints, .. } = &mut e.script {
                for p in waypoints.iter_mut() {
                    p.1 = 2.0 * axis_y - p.1;
                }
            }
        }
        w
    }
}

/// Closed-form pose after time `t` for constant wheel speeds.
pub fn arc_pose(start: Pose, v: f64, omega: f64, t: f64) -> Pose {
    if omega.abs() < 1e-12 {
        return Pose::new(
            start.x + v * start.heading.cos() * t,
            start.y + v * start.heading.sin() * t,
            start.heading,
        );
    }
    let r = v / omega;
    let th = start.heading + omega * t;
    Pose::new(
        start.x + r * (th.sin() - start.heading.sin()),
        start.y - r * (th.cos() - start.heading.cos()),
        th,
    )
}


#[cfg(test)]
mod tests {
    use super::*;

    fn open_world(body: BodyParams) -> World {
        let mut g = OccupancyGrid::new(400, 400, 0.05, (-10.0, -10.0), 0);
        for i in 0..400 {
            g.set(i, 0, 1);
            g.set(i, 399, 1);
            g.set(0, i, 1);
            g.set(399, i, 1);
        }
        World::new(g, Pose::new(0.0, 0.0, 0.0), body, 42)
    }

    #[test]
    fn full_throttle_reaches_top_speed_straight() {
        let mut w = open_world(BodyParams::ideal());
        for _ in 0..60 {
            w.step(Action::new(1.0, 1.0).unwrap(), 0.05).unwrap();
        }
        let v = 0.5 * (w.robot.wheel_speed_l + w.robot.wheel_speed_r);
        assert!((v - 1.5).abs() < 2e-3, "v = {v}");
        assert_eq!(w.robot.pose.heading, 0.0);
        assert!(w.robot.pose.y.abs() < 1e-12);
    }

    #[test]
    fn opposite_throttle_rotates_in_place() {
        let body = BodyParams { battery_capacity_wh: f64::INFINITY, ..BodyParams::ideal() };
        let mut w = open_world(body.clone());
        for _ in 0..100 {
            w.step(Action::new(0.5, -0.5).unwrap(), 0.05).unwrap();
        }
        let v = 0.5 * (w.robot.wheel_speed_l + w.robot.wheel_speed_r);
        let omega = (w.robot.wheel_speed_r - w.robot.wheel_speed_l) / body.track_width;
        assert!(v.abs() < 1e-12);
        let expected = -body.max_wheel_speed / body.track_width;
        assert!((omega - expected).abs() < 1e-6, "{omega} vs {expected}");
        assert!(w.robot.pose.x.abs() < 1e-12 && w.robot.pose.y.abs() < 1e-12);
    }

    #[test]
    fn steady_arc_matches_closed_form() {
        let body = BodyParams { battery_capacity_wh: f64::INFINITY, ..BodyParams::ideal() };
        let mut w = open_world(body.clone());
        let a = Action::new(0.6, 0.4).unwrap();
        w.robot.wheel_speed_l = 0.6 * 1.5;
        w.robot.wheel_speed_r = 0.4 * 1.5;
        let v = 0.75;
        let omega = (0.6 - 0.9) / body.track_width;
        let start = w.robot.pose;
        let dt = 0.02;
        let n = 150;
        let mut unwrapped = 0.0;
        let mut prev = start.heading;
        for _ in 0..n {
            w.step(a, dt).unwrap();
            unwrapped += normalize_angle(w.robot.pose.heading - prev);
            prev = w.robot.pose.heading;
        }
        let t = n as f64 * dt;
        assert!((unwrapped - omega * t).abs() < 1e-6);
        // midpoint rule: chords of length v*dt at the mid-step heading
        let (mut x, mut y) = (start.x, start.y);
        for k in 0..n {
            let th = start.heading + omega * (k as f64 + 0.5) * dt;
            x += v * dt * th.cos();
            y += v * dt * th.sin();
        }
        assert!(w.robot.pose.distance_to(x, y) < 1e-9);
        let exact = arc_pose(start, v, omega, t);
        assert!(w.robot.pose.distance_to(exact.x, exact.y) < 1e-4, "{:?} vs {exact:?}", w.robot.pose);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let run = || {
            let mut w = open_world(BodyParams::default());
            for k in 0..100 {
                let t = k as f64 * 0.1;
                w.step(Action::new(0.5 + 0.3 * t.sin(), 0.5 - 0.2 * t.cos()).unwrap(), 0.05).unwrap();
            }
            w.robot.pose
        };
        let (a, b) = (run(), run());
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert_eq!(a.heading.to_bits(), b.heading.to_bits());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut w = open_world(BodyParams::default());
        assert!(w.step(Action::STOP, 0.0).is_err());
        assert!(w.step(Action::STOP, 0.2).is_err());
        assert!(w.step(Action { left: f64::NAN, right: 0.0 }, 0.05).is_err());
    }

    #[test]
    fn battery_never_rises_while_moving() {
        let mut w = open_world(BodyParams::default());
        let mut last = w.battery_voltage();
        for _ in 0..200 {
            w.step(Action::new(0.8, 0.7).unwrap(), 0.05).unwrap();
            let v = w.battery_voltage();
            assert!(v <= last);
            last = v;
        }
        assert!(last < 12.6);
    }

    #[test]
    fn wall_contact_stops_motion_and_flags() {
        let mut w = open_world(BodyParams::ideal());
        w.reset_robot(Pose::new(9.0, 0.0, 0.0));
        let mut flagged = false;
        for _ in 0..100 {
            let info = w.step(Action::new(1.0, 1.0).unwrap(), 0.05).unwrap();
            flagged |= info.collided;
            assert!(!w.footprint_blocked(w.robot.pose.x, w.robot.pose.y));
        }
        assert!(flagged);
        // wall at x = 9.95 - footprint 0.12
        assert!(w.robot.pose.x > 9.8 && w.robot.pose.x < 9.83, "{}", w.robot.pose.x);
    }

    #[test]
    fn collision_flag_matches_footprint_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut g = OccupancyGrid::new(16, 16, 0.05, (0.0, 0.0), 0);
            for c in g.cells.iter_mut() {
                if rng.gen_bool(0.08) {
                    *c = 1;
                }
            }
            let body = BodyParams { footprint_radius: 0.06, ..BodyParams::ideal() };
            let start = Pose::new(rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6), rng.gen_range(-3.0..3.0));
            let mut w = World::new(g.clone(), start, body, 1);
            if w.footprint_blocked(start.x, start.y) {
                continue;
            }
            w.robot.wheel_speed_l = 0.6;
            w.robot.wheel_speed_r = 0.6;
            let h = start.heading;
            let (ex, ey) = (start.x + 0.6 * h.cos() * 0.05, start.y + 0.6 * h.sin() * 0.05);
            // brute force: every cell, closest point of cell square to the disc center
            let mut oracle = false;
            for iy in -1..17i64 {
                for ix in -1..17i64 {
                    if !g.is_wall(ix, iy) {
                        continue;
                    }
                    let (x0, y0) = (ix as f64 * 0.05, iy as f64 * 0.05);
                    let px = ex.clamp(x0, x0 + 0.05);
                    let py = ey.clamp(y0, y0 + 0.05);
                    if (px - ex).hypot(py - ey) < 0.06 {
                        oracle = true;
                    }
                }
            }
            let info = w.step(Action::new(0.4, 0.4).unwrap(), 0.05).unwrap();
            assert_eq!(info.collided, oracle);
        }
    }

    #[test]
    fn loop_script_wraps() {
        let s = MotionScript::Loop {
            waypoints: vec![(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)],
            speed: 1.0,
            phase: 0.0,
        };
        assert_eq!(s.loop_length(), Some(8.0));
        let p = s.pose_at(3.0).unwrap();
        assert!((p.x - 2.0).abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12);
        let p = s.pose_at(9.0).unwrap();
        assert!((p.x - 1.0).abs() < 1e-12 && p.y.abs() < 1e-12);
    }
}
