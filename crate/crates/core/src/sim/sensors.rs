//! Forward sonar and the ground-truth person detector.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::camera::{entity_rect, to_camera, CameraConfig};
use super::world::{EntityKind, World};

pub const SONAR_MIN: f64 = 0.02;
pub const SONAR_MAX: f64 = 3.0;

/// Distance to the first wall or entity along the heading, measured from the
/// front bumper; clipped to the sensor range, with optional ±2 % noise.
pub fn sonar_distance(world: &mut World, noisy: bool) -> f64 {
    let d = sonar_raw(world);
    let d = if noisy {
        let u: f64 = world.sensor_rng().gen_range(-0.02..=0.02);
        d * (1.0 + u)
    } else {
        d
    };
    d.clamp(SONAR_MIN, SONAR_MAX)
}

fn sonar_raw(world: &World) -> f64 {
    let p = world.robot.pose;
    let r = world.body.footprint_radius;
    let (c, s) = (p.heading.cos(), p.heading.sin());
    let (bx, by) = (p.x + r * c, p.y + r * s);
    let mut best = world
        .grid
        .raycast(bx, by, p.heading, SONAR_MAX + 1.0)
        .map(|h| h.distance)
        .unwrap_or(f64::INFINITY);
    for e in &world.entities {
        // ray/disc intersection
        let (ox, oy) = (e.pose.x - bx, e.pose.y - by);
        let along = ox * c + oy * s;
        let perp2 = (ox * ox + oy * oy) - along * along;
        let rr = e.radius * e.radius;
        if perp2 <= rr {
            let t = along - (rr - perp2).sqrt();
            if t >= 0.0 {
                best = best.min(t);
            } else if along + (rr - perp2).sqrt() >= 0.0 {
                best = 0.0;
            }
        }
    }
    best
}

pub const PERSON_CLASS: u32 = 1;

/// One detector output in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub class: u32,
}

impl Detection {
    /// Builds a detection from pixel-space edges, clipping to the frame.
    pub fn from_edges(left: f64, right: f64, top: f64, bottom: f64, confidence: f64, class: u32) -> Self {
        let (l, r) = (left.clamp(0.0, 1.0), right.clamp(0.0, 1.0));
        let (t, b) = (top.clamp(0.0, 1.0), bottom.clamp(0.0, 1.0));
        Detection {
            cx: 0.5 * (l + r),
            cy: 0.5 * (t + b),
            w: r - l,
            h: b - t,
            confidence: confidence.clamp(0.0, 1.0),
            class,
        }
    }

    pub fn edges(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cx + self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn iou(&self, other: &Detection) -> f64 {
        let (l1, r1, t1, b1) = self.edges();
        let (l2, r2, t2, b2) = other.edges();
        let iw = (r1.min(r2) - l1.max(l2)).max(0.0);
        let ih = (b1.min(b2) - t1.max(t2)).max(0.0);
        let inter = iw * ih;
        let union = self.w * self.h + other.w * other.h - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn mirrored(&self) -> Detection {
        Detection {
            cx: 1.0 - self.cx,
            ..*self
        }
    }
}

/// Corruption applied to the ground-truth projector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionNoise {
    pub enabled: bool,
    /// Confidence ~ Beta(alpha, beta) when enabled; 1.0 otherwise.
    pub confidence_alpha: f64,
    pub confidence_beta: f64,
    pub dropout: f64,
    pub false_positive_rate: f64,
    /// Std of the normalized center/size jitter.
    pub box_jitter: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        DetectionNoise {
            enabled: false,
            confidence_alpha: 8.0,
            confidence_beta: 2.0,
            dropout: 0.0,
            false_positive_rate: 0.0,
            box_jitter: 0.0,
        }
    }
}

impl DetectionNoise {
    pub fn off() -> Self {
        Self::default()
    }
}

/// Projects visible person entities to normalized boxes.
pub fn ground_truth_detections(world: &mut World, cfg: &CameraConfig, noise: &DetectionNoise) -> Vec<Detection> {
    let (wf, hf) = (cfg.width as f64, cfg.height as f64);
    let mut out = Vec::new();
    let pose = world.robot.pose;
    for i in 0..world.entities.len() {
        let e = &world.entities[i];
        if e.kind != EntityKind::Person {
            continue;
        }
        let Some((left, right, top, bottom, z)) = entity_rect(world, cfg, i) else {
            continue;
        };
        let xc = 0.5 * (left + right);
        if xc < 0.0 || xc >= wf {
            continue;
        }
        // occlusion test along the bearing to the entity center
        let (fwd, lat) = to_camera(world, e.pose.x, e.pose.y);
        let dist = fwd.hypot(lat);
        let bearing = lat.atan2(fwd);
        if let Some(hit) = world.grid.raycast(pose.x, pose.y, pose.heading - bearing, dist) {
            if hit.distance < dist - e.radius {
                continue;
            }
        }
        let occluded_by_entity = world.entities.iter().enumerate().any(|(j, o)| {
            if j == i {
                return false;
            }
            let (of, ol) = to_camera(world, o.pose.x, o.pose.y);
            of > 0.0 && of < z && (ol - of * lat / fwd).abs() < o.radius && o.height >= 0.5 * e.height
        });
        if occluded_by_entity {
            continue;
        }
        out.push(Detection::from_edges(left / wf, right / wf, top / hf, bottom / hf, 1.0, PERSON_CLASS));
    }
    if !noise.enabled {
        return out;
    }
    let rng = world.sensor_rng();
    let beta = Beta::new(noise.confidence_alpha.max(1e-3), noise.confidence_beta.max(1e-3)).expect("beta params");
    let jitter = Normal::new(0.0, noise.box_jitter.max(0.0)).expect("jitter std");
    let mut noisy = Vec::with_capacity(out.len() + 1);
    for d in out {
        if rng.gen::<f64>() < noise.dropout {
            continue;
        }
        let (l, r, t, b) = d.edges();
        let (jx, jy) = (jitter.sample(rng), jitter.sample(rng));
        let (jw, jh) = (jitter.sample(rng), jitter.sample(rng));
        let conf = beta.sample(rng);
        noisy.push(Detection::from_edges(
            l + jx - jw / 2.0,
            r + jx + jw / 2.0,
            t + jy - jh / 2.0,
            b + jy + jh / 2.0,
            conf,
            d.class,
        ));
    }
    if rng.gen::<f64>() < noise.false_positive_rate {
        let cx: f64 = rng.gen_range(0.05..0.95);
        let cy: f64 = rng.gen_range(0.2..0.8);
        let w: f64 = rng.gen_range(0.02..0.2);
        let h: f64 = rng.gen_range(0.1..0.6);
        let class = if rng.gen_bool(0.5) { PERSON_CLASS } else { 62 };
        let conf = beta.sample(rng);
        noisy.push(Detection::from_edges(cx - w / 2.0, cx + w / 2.0, cy - h / 2.0, cy + h / 2.0, conf, class));
    }
    noisy
}
