//! Column ray-cast camera: one ray per image column, wall slices with
//! distance shading, floor/ceiling gradients and billboarded entities.

use serde::{Deserialize, Serialize};

use super::grid::Face;
use super::world::{EntityKind, World};

/// Capture settings and mount placement of the forward camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    /// Lens height above the floor (m).
    pub mount_height: f64,
    /// Upward pitch (radians); shifts the horizon.
    pub pitch: f64,
    pub wall_height: f64,
    pub max_range: f64,
    /// Hue rotation applied to the final image, in cycles.
    pub hue_offset: f64,
    /// Multiplicative exposure gain.
    pub exposure: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 256,
            height: 96,
            hfov_deg: 70.0,
            mount_height: 0.15,
            pitch: 0.0,
            wall_height: 1.0,
            max_range: 20.0,
            hue_offset: 0.0,
            exposure: 1.0,
        }
    }
}

impl CameraConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        CameraConfig {
            width,
            height,
            ..Default::default()
        }
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn horizon_row(&self) -> f64 {
        self.height as f64 / 2.0 + self.focal() * self.pitch.tan()
    }

    /// Camera-frame bearing of column `x` (positive to the right).
    pub fn column_bearing(&self, x: usize) -> f64 {
        ((x as f64 + 0.5 - self.width as f64 / 2.0) / self.focal()).atan()
    }

    /// Projects a world point at `forward` depth and `lateral` offset (m,
    /// positive right) to a fractional image column.
    pub fn project_column(&self, forward: f64, lateral: f64) -> f64 {
        self.width as f64 / 2.0 + self.focal() * lateral / forward
    }
}

/// RGB image, intensities in `[0, 1]`, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl CameraFrame {
    pub fn new(width: usize, height: usize) -> Self {
        CameraFrame {
            width,
            height,
            pixels: vec![0.0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn mirrored(&self) -> CameraFrame {
        let mut out = CameraFrame::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, data: &[u8]) -> Self {
        CameraFrame {
            width,
            height,
            pixels: data.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }
}

const CEILING: [f64; 3] = [0.78, 0.80, 0.86];
const FLOOR: [f64; 3] = [0.55, 0.45, 0.34];
const PERSON: [f64; 3] = [0.85, 0.15, 0.12];
const OBSTACLE: [f64; 3] = [0.20, 0.22, 0.25];

/// Base color of wall material `m` (1-based); a fixed palette of muted hues.
pub fn material_color(m: u8) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 8] = [
        [0.82, 0.80, 0.70],
        [0.55, 0.68, 0.78],
        [0.72, 0.80, 0.62],
        [0.85, 0.70, 0.55],
        [0.70, 0.62, 0.78],
        [0.62, 0.76, 0.74],
        [0.88, 0.86, 0.82],
        [0.75, 0.58, 0.58],
    ];
    PALETTE[(m.max(1) as usize - 1) % PALETTE.len()]
}

fn shade(depth: f64) -> f64 {
    1.0 / (1.0 + 0.12 * depth.max(0.0))
}

/// Color of the floor/ceiling background at row `y` (no walls).
pub fn background(cfg: &CameraConfig, y: usize) -> [f64; 3] {
    let f = cfg.focal();
    let yc = y as f64 + 0.5;
    let h = cfg.horizon_row();
    if yc >= h {
        let depth = if yc > h { f * cfg.mount_height / (yc - h) } else { f64::INFINITY };
        scale(FLOOR, shade(depth.min(cfg.max_range)))
    } else {
        let depth = f * (cfg.wall_height - cfg.mount_height) / (h - yc);
        scale(CEILING, shade(depth.min(cfg.max_range)))
    }
}

fn scale(c: [f64; 3], s: f64) -> [f64; 3] {
    [c[0] * s, c[1] * s, c[2] * s]
}

fn blend(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Length of the overlap of pixel `[p, p+1)` with `[lo, hi)`.
fn coverage(p: f64, lo: f64, hi: f64) -> f64 {
    ((p + 1.0).min(hi) - p.max(lo)).clamp(0.0, 1.0)
}

/// Per-column wall depth (perpendicular distance), `INFINITY` if no hit.
pub fn depth_buffer(world: &World, cfg: &CameraConfig) -> Vec<f64> {
    let pose = world.robot.pose;
    (0..cfg.width)
        .map(|x| {
            let bearing = cfg.column_bearing(x);
            world
                .grid
                .raycast(pose.x, pose.y, pose.heading - bearing, cfg.max_range)
                .map(|h| h.distance * bearing.cos())
                .unwrap_or(f64::INFINITY)
        })
        .collect()
}

/// Camera-frame coordinates `(forward, lateral-right)` of a world point.
pub fn to_camera(world: &World, x: f64, y: f64) -> (f64, f64) {
    let p = world.robot.pose;
    let (dx, dy) = (x - p.x, y - p.y);
    let (c, s) = (p.heading.cos(), p.heading.sin());
    (dx * c + dy * s, dx * s - dy * c)
}

/// Screen-space rectangle of an entity billboard: (left, right, top, bottom, depth).
pub fn entity_rect(world: &World, cfg: &CameraConfig, idx: usize) -> Option<(f64, f64, f64, f64, f64)> {
    let e = &world.entities[idx];
    let (z, lat) = to_camera(world, e.pose.x, e.pose.y);
    if z < 0.05 {
        return None;
    }
    let f = cfg.focal();
    let xc = cfg.project_column(z, lat);
    let half_w = f * e.radius / z;
    let h = cfg.horizon_row();
    let top = h - f * (e.height - cfg.mount_height) / z;
    let bottom = h + f * cfg.mount_height / z;
    Some((xc - half_w, xc + half_w, top, bottom, z))
}

pub fn render_camera(world: &World, cfg: &CameraConfig) -> CameraFrame {
    let (w, hgt) = (cfg.width, cfg.height);
    let f = cfg.focal();
    let horizon = cfg.horizon_row();
    let pose = world.robot.pose;
    let mut img = vec![[0.0f64; 3]; w * hgt];
    let mut zbuf = vec![f64::INFINITY; w];

    for x in 0..w {
        let bearing = cfg.column_bearing(x);
        let hit = world
            .grid
            .raycast(pose.x, pose.y, pose.heading - bearing, cfg.max_range);
        let slice = hit.map(|hit| {
            let z = (hit.distance * bearing.cos()).max(1e-3);
            let top = horizon - f * (cfg.wall_height - cfg.mount_height) / z;
            let bottom = horizon + f * cfg.mount_height / z;
            let stripes = 0.85 + 0.15 * (2.0 * std::f64::consts::PI * hit.along / 0.5).cos();
            let side = if hit.face == Face::X { 0.88 } else { 1.0 };
            let color = scale(material_color(hit.material), shade(z) * stripes * side);
            (z, top, bottom, color)
        });
        if let Some((z, ..)) = slice {
            zbuf[x] = z;
        }
        for y in 0..hgt {
            let bg = background(cfg, y);
            let c = match slice {
                Some((_, top, bottom, color)) => blend(bg, color, coverage(y as f64, top, bottom)),
                None => bg,
            };
            img[y * w + x] = c;
        }
    }

    // far-to-near billboards
    let mut order: Vec<(usize, f64)> = (0..world.entities.len())
        .filter_map(|i| entity_rect(world, cfg, i).map(|r| (i, r.4)))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (i, _) in order {
        let (left, right, top, bottom, z) = entity_rect(world, cfg, i).expect("visible");
        let base = match world.entities[i].kind {
            EntityKind::Person => PERSON,
            EntityKind::Obstacle => OBSTACLE,
        };
        let color = scale(base, shade(z));
        let x0 = left.floor().max(0.0) as usize;
        let x1 = (right.ceil().max(0.0) as usize).min(w);
        for x in x0..x1 {
            if z >= zbuf[x] {
                continue;
            }
            let cx = coverage(x as f64, left, right);
            if cx <= 0.0 {
                continue;
            }
            for y in 0..hgt {
                let cy = coverage(y as f64, top, bottom);
                if cy > 0.0 {
                    let p = &mut img[y * w + x];
                    *p = blend(*p, color, cx * cy);
                }
            }
        }
    }

    let mut frame = CameraFrame::new(w, hgt);
    for (i, c) in img.iter().enumerate() {
        let c = adjust(*c, cfg.hue_offset, cfg.exposure);
        for k in 0..3 {
            frame.pixels[i * 3 + k] = c[k].clamp(0.0, 1.0) as f32;
        }
    }
    frame
}

fn adjust(c: [f64; 3], hue: f64, exposure: f64) -> [f64; 3] {
    let c = if hue != 0.0 {
        let (h, s, v) = rgb_to_hsv(c);
        hsv_to_rgb((h + hue).rem_euclid(1.0), s, v)
    } else {
        c
    };
    scale(c, exposure)
}

pub fn rgb_to_hsv(c: [f64; 3]) -> (f64, f64, f64) {
    let max = c[0].max(c[1]).max(c[2]);
    let min = c[0].min(c[1]).min(c[2]);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == c[0] {
        ((c[1] - c[2]) / d).rem_euclid(6.0) / 6.0
    } else if max == c[1] {
        ((c[2] - c[0]) / d + 2.0) / 6.0
    } else {
        ((c[0] - c[1]) / d + 4.0) / 6.0
    };
    let s = if max > 0.0 { d / max } else { 0.0 };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::grid::OccupancyGrid;
    use crate::sim::world::{BodyParams, Entity};
    use crate::types::Pose;

    /// Corridor along +x, 1.5 m wide, 200 m long, robot on its centerline.
    fn corridor() -> World {
        let res = 0.05;
        let (w, h) = (4000, 40);
        let mut g = OccupancyGrid::new(w, h, res, (-2.0, -1.0), 3);
        g.fill_rect((-1.9, -0.75), (197.0, 0.75), 0);
        World::new(g, Pose::new(0.0, 0.0, 0.0), BodyParams::ideal(), 0)
    }

    #[test]
    fn empty_corridor_is_symmetric_with_sky_and_floor_at_center() {
        let world = corridor();
        let cfg = CameraConfig::default();
        let img = render_camera(&world, &cfg);
        for y in 0..cfg.height {
            for x in 0..cfg.width / 2 {
                let (a, b) = (img.get(x, y), img.get(cfg.width - 1 - x, y));
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-5, "({x},{y}) {a:?} vs {b:?}");
                }
            }
            let center = img.get(cfg.width / 2, y);
            let bg = background(&cfg, y);
            for k in 0..3 {
                assert!((center[k] as f64 - bg[k]).abs() < 1e-6);
            }
            // rows above the horizon are ceiling-toned (blue >= red), below floor-toned
            if y < cfg.height / 2 {
                assert!(center[2] >= center[0]);
            } else {
                assert!(center[0] > center[2]);
            }
        }
    }

    #[test]
    fn near_wall_fills_every_column() {
        let mut g = OccupancyGrid::new(100, 100, 0.05, (-2.5, -2.5), 0);
        g.fill_rect((0.5, -2.5), (2.5, 2.5), 2);
        let world = World::new(g, Pose::new(0.0, 0.0, 0.0), BodyParams::ideal(), 0);
        let cfg = CameraConfig::default();
        let img = render_camera(&world, &cfg);
        let depth = depth_buffer(&world, &cfg);
        for x in 0..cfg.width {
            assert!((depth[x] - 0.5).abs() < 1e-9, "col {x}: {}", depth[x]);
            for y in 0..cfg.height {
                let p = img.get(x, y);
                let bg = background(&cfg, y);
                assert!((0..3).any(|k| (p[k] as f64 - bg[k]).abs() > 1e-3), "({x},{y}) shows background");
            }
        }
    }

    #[test]
    fn person_ahead_projects_to_center_column() {
        let mut g = OccupancyGrid::new(400, 200, 0.05, (-5.0, -5.0), 0);
        g.fill_rect((14.0, -5.0), (15.0, 5.0), 1);
        let world = World::new(g, Pose::new(0.0, 0.0, 0.0), BodyParams::ideal(), 0)
            .with_entities(vec![Entity::person(3.0, 0.0)]);
        let cfg = CameraConfig::default();
        let img = render_camera(&world, &cfg);
        // centroid of strongly red pixels
        let (mut sx, mut n) = (0.0, 0.0);
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let p = img.get(x, y);
                if p[0] > 2.0 * p[1] + 0.1 {
                    sx += x as f64 + 0.5;
                    n += 1.0;
                }
            }
        }
        assert!(n > 0.0);
        let (z, lat) = to_camera(&world, 3.0, 0.0);
        let analytic = cfg.project_column(z, lat);
        assert!((sx / n - analytic).abs() <= 1.0);
        assert!((sx / n - cfg.width as f64 / 2.0).abs() <= 1.0);
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let world = corridor();
        let cfg = CameraConfig {
            exposure: 1.8,
            hue_offset: 0.3,
            ..CameraConfig::with_size(64, 24)
        };
        let img = render_camera(&world, &cfg);
        assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hsv_roundtrip() {
        for c in [[0.2, 0.5, 0.9], [0.9, 0.1, 0.1], [0.3, 0.3, 0.3], [0.0, 0.7, 0.2]] {
            let (h, s, v) = rgb_to_hsv(c);
            let back = hsv_to_rgb(h, s, v);
            for k in 0..3 {
                assert!((back[k] - c[k]).abs() < 1e-12);
            }
        }
    }
}
