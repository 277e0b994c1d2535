//! Occupancy grid with wall materials, circle overlap tests and DDA ray casting.

use serde::{Deserialize, Serialize};

/// Cell value `0` is free space; any other value is a wall whose number
/// selects the wall material (hue) used by the renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    /// Meters per cell.
    pub resolution: f64,
    /// World coordinates of the lower-left corner of cell (0, 0).
    pub origin: (f64, f64),
    pub cells: Vec<u8>,
}

/// Which family of cell faces a ray struck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    /// Face perpendicular to the x axis (the ray crossed a vertical line).
    X,
    /// Face perpendicular to the y axis.
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Euclidean distance from the ray origin.
    pub distance: f64,
    pub material: u8,
    pub face: Face,
    /// World coordinate along the struck face (y for `Face::X`, x for `Face::Y`).
    pub along: f64,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: (f64, f64), fill: u8) -> Self {
        OccupancyGrid {
            width,
            height,
            resolution,
            origin,
            cells: vec![fill; width * height],
        }
    }

    pub fn get(&self, ix: i64, iy: i64) -> u8 {
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            return 1;
        }
        self.cells[iy as usize * self.width + ix as usize]
    }

    pub fn set(&mut self, ix: usize, iy: usize, v: u8) {
        self.cells[iy * self.width + ix] = v;
    }

    /// Out-of-bounds cells count as walls.
    pub fn is_wall(&self, ix: i64, iy: i64) -> bool {
        self.get(ix, iy) != 0
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin.0) / self.resolution).floor() as i64,
            ((y - self.origin.1) / self.resolution).floor() as i64,
        )
    }

    pub fn cell_center(&self, ix: i64, iy: i64) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.resolution,
            self.origin.1 + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn is_free_at(&self, x: f64, y: f64) -> bool {
        let (ix, iy) = self.cell_of(x, y);
        !self.is_wall(ix, iy)
    }

    /// True when a disc of radius `r` at `(x, y)` overlaps any wall cell.
    /// A cell counts when the closest point of its square lies strictly
    /// inside the disc.
    pub fn circle_overlaps_wall(&self, x: f64, y: f64, r: f64) -> bool {
        let (x0, y0) = self.cell_of(x - r, y - r);
        let (x1, y1) = self.cell_of(x + r, y + r);
        let res = self.resolution;
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                if !self.is_wall(ix, iy) {
                    continue;
                }
                let cx0 = self.origin.0 + ix as f64 * res;
                let cy0 = self.origin.1 + iy as f64 * res;
                let px = x.clamp(cx0, cx0 + res);
                let py = y.clamp(cy0, cy0 + res);
                let d2 = (px - x).powi(2) + (py - y).powi(2);
                if d2 < r * r {
                    return true;
                }
            }
        }
        false
    }

    /// Amanatides–Woo traversal from `(x, y)` along `angle`; returns the first
    /// wall within `max_dist`.
    pub fn raycast(&self, x: f64, y: f64, angle: f64, max_dist: f64) -> Option<RayHit> {
        let (dx, dy) = (angle.cos(), angle.sin());
        let res = self.resolution;
        let gx = (x - self.origin.0) / res;
        let gy = (y - self.origin.1) / res;
        let mut ix = gx.floor() as i64;
        let mut iy = gy.floor() as i64;
        if self.is_wall(ix, iy) {
            return Some(RayHit {
                distance: 0.0,
                material: self.get(ix, iy).max(1),
                face: Face::X,
                along: y,
            });
        }
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        // distances (in world meters) along the ray to the next x/y grid line
        let t_delta_x = if dx != 0.0 { res / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { res / dy.abs() } else { f64::INFINITY };
        let mut t_max_x = if dx > 0.0 {
            ((ix + 1) as f64 - gx) * res / dx
        } else if dx < 0.0 {
            (gx - ix as f64) * res / -dx
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy > 0.0 {
            ((iy + 1) as f64 - gy) * res / dy
        } else if dy < 0.0 {
            (gy - iy as f64) * res / -dy
        } else {
            f64::INFINITY
        };
        loop {
            let (t, face) = if t_max_x < t_max_y {
                ix += step_x;
                let t = t_max_x;
                t_max_x += t_delta_x;
                (t, Face::X)
            } else {
                iy += step_y;
                let t = t_max_y;
                t_max_y += t_delta_y;
                (t, Face::Y)
            };
            if t > max_dist {
                return None;
            }
            let m = self.get(ix, iy);
            if m != 0 {
                let along = match face {
                    Face::X => y + t * dy,
                    Face::Y => x + t * dx,
                };
                return Some(RayHit {
                    distance: t,
                    material: m,
                    face,
                    along,
                });
            }
            // bail out once far outside the grid; everything beyond is wall anyway
            if ix < -1 || iy < -1 || ix > self.width as i64 + 1 || iy > self.height as i64 + 1 {
                return None;
            }
        }
    }

    /// Fills every cell whose center lies in the axis-aligned rectangle.
    pub fn fill_rect(&mut self, min: (f64, f64), max: (f64, f64), v: u8) {
        for iy in 0..self.height {
            for ix in 0..self.width {
                let (cx, cy) = self.cell_center(ix as i64, iy as i64);
                if cx > min.0 && cx < max.0 && cy > min.1 && cy < max.1 {
                    self.set(ix, iy, v);
                }
            }
        }
    }

    /// Run-length encoding of each row as `[value, count]` pairs.
    pub fn to_rle_rows(&self) -> Vec<Vec<[u32; 2]>> {
        (0..self.height)
            .map(|iy| {
                let row = &self.cells[iy * self.width..(iy + 1) * self.width];
                let mut runs: Vec<[u32; 2]> = Vec::new();
                for &c in row {
                    match runs.last_mut() {
                        Some(last) if last[0] == c as u32 => last[1] += 1,
                        _ => runs.push([c as u32, 1]),
                    }
                }
                runs
            })
            .collect()
    }

    pub fn from_rle_rows(
        width: usize,
        resolution: f64,
        origin: (f64, f64),
        rows: &[Vec<[u32; 2]>],
    ) -> Result<Self, String> {
        let mut cells = Vec::with_capacity(width * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let before = cells.len();
            for &[v, n] in row {
                if v > u8::MAX as u32 {
                    return Err(format!("row {i}: cell value {v} out of range"));
                }
                cells.extend(std::iter::repeat(v as u8).take(n as usize));
            }
            if cells.len() - before != width {
                return Err(format!(
                    "row {i}: decoded {} cells, expected {width}",
                    cells.len() - before
                ));
            }
        }
        Ok(OccupancyGrid {
            width,
            height: rows.len(),
            resolution,
            origin,
            cells,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(12, 10, 0.1, (-0.3, 0.2), 0);
        for c in g.cells.iter_mut() {
            if rng.gen_bool(0.2) {
                *c = rng.gen_range(1..4);
            }
        }
        g
    }

    // Oracle: scan every cell in the grid and test the disc against the
    // cell square by dense point sampling on the square boundary and interior.
    fn brute_overlap(g: &OccupancyGrid, x: f64, y: f64, r: f64) -> Option<bool> {
        let mut min_d = f64::INFINITY;
        for iy in -2..g.height as i64 + 2 {
            for ix in -2..g.width as i64 + 2 {
                if !g.is_wall(ix, iy) {
                    continue;
                }
                let x0 = g.origin.0 + ix as f64 * g.resolution;
                let y0 = g.origin.1 + iy as f64 * g.resolution;
                let n = 40;
                for a in 0..=n {
                    for b in 0..=n {
                        let px = x0 + g.resolution * a as f64 / n as f64;
                        let py = y0 + g.resolution * b as f64 / n as f64;
                        min_d = min_d.min((px - x).hypot(py - y));
                    }
                }
            }
        }
        // ambiguous within sampling resolution
        if (min_d - r).abs() < 0.004 {
            return None;
        }
        Some(min_d < r)
    }

    #[test]
    fn circle_overlap_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        for _ in 0..60 {
            let g = random_grid(&mut rng);
            let x = rng.gen_range(-0.3..0.9);
            let y = rng.gen_range(0.2..1.2);
            let r = rng.gen_range(0.02..0.25);
            if let Some(expected) = brute_overlap(&g, x, y, r) {
                assert_eq!(g.circle_overlaps_wall(x, y, r), expected, "({x},{y}) r={r}");
                checked += 1;
            }
        }
        assert!(checked > 40);
    }

    #[test]
    fn raycast_hits_expected_wall() {
        let mut g = OccupancyGrid::new(40, 20, 0.05, (0.0, 0.0), 0);
        for iy in 0..20 {
            g.set(30, iy, 5);
        }
        let hit = g.raycast(0.5, 0.5, 0.0, 10.0).unwrap();
        assert!((hit.distance - 1.0).abs() < 1e-9, "{hit:?}");
        assert_eq!(hit.material, 5);
        assert_eq!(hit.face, Face::X);
        // 45 degrees: hits x = 1.5 at y = 0.5 + 1.0, beyond grid top (1.0) → out-of-bounds wall at y=1.0
        let hit = g.raycast(0.5, 0.5, std::f64::consts::FRAC_PI_4, 10.0).unwrap();
        assert!((hit.distance - 0.5 * 2f64.sqrt()).abs() < 1e-9);
        assert!(g.raycast(0.5, 0.5, 0.0, 0.9).is_none());
    }

    #[test]
    fn rle_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_grid(&mut rng);
        let back = OccupancyGrid::from_rle_rows(g.width, g.resolution, g.origin, &g.to_rle_rows()).unwrap();
        assert_eq!(back, g);
        assert!(OccupancyGrid::from_rle_rows(3, 0.1, (0.0, 0.0), &[vec![[0, 2]]]).is_err());
    }
}
