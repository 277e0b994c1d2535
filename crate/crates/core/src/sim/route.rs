//! Corridor maps, route segments and the built-in training/evaluation routes.
//!
//! A map is a set of axis-aligned corridors (1.5 m wide) joined at square
//! junctions. A segment starts 5 m before its first junction and ends when the
//! counted boundary length reaches 10 m; the junction interiors are not counted.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::grid::OccupancyGrid;
use super::world::Entity;
use super::SimError;
use crate::types::{Command, Pose};

pub const CORRIDOR_WIDTH: f64 = 1.5;
pub const HALF_WIDTH: f64 = CORRIDOR_WIDTH / 2.0;
pub const GRID_RESOLUTION: f64 = 0.05;
pub const SEGMENT_LENGTH: f64 = 10.0;
pub const APPROACH_LENGTH: f64 = 5.0;
/// The expert announces a maneuver this far (along the path) before the junction.
pub const COMMAND_HORIZON: f64 = 3.0;

pub type Point = (f64, f64);

/// Axis-aligned travel direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    East,
    North,
    West,
    South,
}

impl Dir {
    pub fn vec(self) -> Point {
        match self {
            Dir::East => (1.0, 0.0),
            Dir::North => (0.0, 1.0),
            Dir::West => (-1.0, 0.0),
            Dir::South => (0.0, -1.0),
        }
    }

    pub fn angle(self) -> f64 {
        match self {
            Dir::East => 0.0,
            Dir::North => FRAC_PI_2,
            Dir::West => std::f64::consts::PI,
            Dir::South => -FRAC_PI_2,
        }
    }

    pub fn left(self) -> Dir {
        match self {
            Dir::East => Dir::North,
            Dir::North => Dir::West,
            Dir::West => Dir::South,
            Dir::South => Dir::East,
        }
    }

    pub fn right(self) -> Dir {
        self.left().left().left()
    }

    pub fn turn(self, c: Command) -> Dir {
        match c {
            Command::Left => self.left(),
            Command::Straight => self,
            Command::Right => self.right(),
        }
    }
}

fn add(a: Point, b: Point, k: f64) -> Point {
    (a.0 + b.0 * k, a.1 + b.1 * k)
}

fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    /// Rectangle of corridor width around the axis-aligned centerline `a`–`b`.
    pub fn around(a: Point, b: Point) -> Rect {
        Rect {
            min: (a.0.min(b.0) - if a.1 == b.1 { 0.0 } else { HALF_WIDTH }, a.1.min(b.1) - if a.0 == b.0 { 0.0 } else { HALF_WIDTH }),
            max: (a.0.max(b.0) + if a.1 == b.1 { 0.0 } else { HALF_WIDTH }, a.1.max(b.1) + if a.0 == b.0 { 0.0 } else { HALF_WIDTH }),
        }
    }

    pub fn square(c: Point, half: f64) -> Rect {
        Rect {
            min: (c.0 - half, c.1 - half),
            max: (c.0 + half, c.1 + half),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.0 >= self.min.0 && p.0 <= self.max.0 && p.1 >= self.min.1 && p.1 <= self.max.1
    }

    pub fn distance(&self, p: Point) -> f64 {
        let dx = (self.min.0 - p.0).max(0.0).max(p.0 - self.max.0);
        let dy = (self.min.1 - p.1).max(0.0).max(p.1 - self.max.1);
        dx.hypot(dy)
    }
}

/// Corridor layout: centerlines between junctions or dead ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub junctions: Vec<Point>,
    /// Axis-aligned corridor centerlines (endpoints are corridor ends).
    pub corridors: Vec<(Point, Point)>,
    /// Selects the wall material pattern.
    pub palette: u64,
}

impl MapSpec {
    fn carved(&self) -> Vec<Rect> {
        let mut rects: Vec<Rect> = self.corridors.iter().map(|&(a, b)| Rect::around(a, b)).collect();
        rects.extend(self.junctions.iter().map(|&j| Rect::square(j, HALF_WIDTH)));
        rects
    }

    /// Rasterizes the free space; walls get block-wise materials from the palette.
    pub fn build_grid(&self) -> OccupancyGrid {
        let rects = self.carved();
        let margin = 1.0;
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for r in &rects {
            lo = (lo.0.min(r.min.0), lo.1.min(r.min.1));
            hi = (hi.0.max(r.max.0), hi.1.max(r.max.1));
        }
        let res = GRID_RESOLUTION;
        let snap = |v: f64| (v / res).floor() * res;
        let origin = (snap(lo.0 - margin), snap(lo.1 - margin));
        let width = ((hi.0 + margin - origin.0) / res).ceil() as usize;
        let height = ((hi.1 + margin - origin.1) / res).ceil() as usize;
        let mut g = OccupancyGrid::new(width, height, res, origin, 1);
        for iy in 0..height {
            for ix in 0..width {
                let (cx, cy) = g.cell_center(ix as i64, iy as i64);
                if rects.iter().any(|r| cx > r.min.0 && cx < r.max.0 && cy > r.min.1 && cy < r.max.1) {
                    g.set(ix, iy, 0);
                } else {
                    let bx = (cx / 2.0).floor() as i64;
                    let by = (cy / 2.0).floor() as i64;
                    let h = (bx.wrapping_mul(7) + by.wrapping_mul(13) + self.palette as i64).rem_euclid(8);
                    g.set(ix, iy, 1 + h as u8);
                }
            }
        }
        g
    }

    fn junction_near(&self, p: Point) -> Option<usize> {
        self.junctions.iter().position(|&j| dist(j, p) < 1e-6)
    }

    /// Next junction strictly ahead of `from` along `dir` on the same line.
    fn next_junction(&self, from: Point, dir: Dir) -> Option<usize> {
        let v = dir.vec();
        self.junctions
            .iter()
            .enumerate()
            .filter_map(|(i, &j)| {
                let d = (j.0 - from.0) * v.0 + (j.1 - from.1) * v.1;
                let off = ((j.0 - from.0) * v.1 - (j.1 - from.1) * v.0).abs();
                (d > 1e-6 && off < 1e-6).then_some((i, d))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    fn is_open(&self, p: Point) -> bool {
        self.carved().iter().any(|r| r.contains(p))
    }
}

/// One junction traversal within a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub junction: Point,
    pub maneuver: Command,
    pub heading_in: Dir,
    pub heading_out: Dir,
    pub entry: Point,
    pub exit: Point,
    /// Counted boundary distance at the junction entry.
    pub entry_distance: f64,
    /// Arc length along the driving path at entry and exit.
    pub path_entry: f64,
    pub path_exit: f64,
}

/// Straight counted piece of the segment boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub from: Point,
    pub to: Point,
    /// Counted distance at `from`.
    pub offset: f64,
}

impl Piece {
    pub fn length(&self) -> f64 {
        dist(self.from, self.to)
    }

    fn dir(&self) -> Point {
        let l = self.length();
        ((self.to.0 - self.from.0) / l, (self.to.1 - self.from.1) / l)
    }

    /// Counted distance of `p` if it lies in this piece's corridor band.
    fn progress(&self, p: Point, back: f64, ahead: f64) -> Option<f64> {
        let d = self.dir();
        let rel = (p.0 - self.from.0, p.1 - self.from.1);
        let along = rel.0 * d.0 + rel.1 * d.1;
        let lat = (rel.0 * d.1 - rel.1 * d.0).abs();
        let len = self.length();
        (lat <= HALF_WIDTH && along >= -back && along <= len + ahead).then(|| self.offset + along.clamp(0.0, len))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    /// Arc length from the segment start.
    pub s: f64,
}

/// Where the robot is relative to a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentProgress {
    /// Counted distance in `[0, 10]`.
    OnRoute(f64),
    /// Entered a branch not on the route; the index names the missed crossing.
    WrongBranch(usize),
}

/// Serializable segment description: which junction to start at and which
/// maneuvers to take.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDef {
    pub map: usize,
    /// Center of the first junction.
    pub junction: Point,
    /// Travel direction when arriving at the first junction.
    pub arrive: Dir,
    pub maneuvers: Vec<Command>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub def: SegmentDef,
    pub start: Pose,
    pub goal: Point,
    pub crossings: Vec<Crossing>,
    pub pieces: Vec<Piece>,
    pub path: Vec<PathPoint>,
    allowed: Vec<Rect>,
}

const PATH_STEP: f64 = 0.05;

impl Segment {
    pub fn build(map: &MapSpec, def: SegmentDef) -> Result<Segment, SimError> {
        if def.maneuvers.is_empty() {
            return Err(SimError::InvalidRoute("segment needs at least one maneuver".into()));
        }
        let mut j = map
            .junction_near(def.junction)
            .ok_or_else(|| SimError::InvalidRoute(format!("no junction at {:?}", def.junction)))?;
        let mut heading = def.arrive;
        let first_entry = add(map.junctions[j], heading.vec(), -HALF_WIDTH);
        let start_pt = add(first_entry, heading.vec(), -APPROACH_LENGTH);
        let mut pieces = vec![Piece {
            from: start_pt,
            to: first_entry,
            offset: 0.0,
        }];
        let mut counted = APPROACH_LENGTH;
        let mut crossings = Vec::new();
        let mut goal = start_pt;
        for (i, &m) in def.maneuvers.iter().enumerate() {
            let jc = map.junctions[j];
            let out = heading.turn(m);
            let entry = add(jc, heading.vec(), -HALF_WIDTH);
            let exit = add(jc, out.vec(), HALF_WIDTH);
            if !map.is_open(add(exit, out.vec(), 0.3)) {
                return Err(SimError::InvalidRoute(format!(
                    "maneuver {m} at junction {jc:?} leads into a wall"
                )));
            }
            crossings.push(Crossing {
                junction: jc,
                maneuver: m,
                heading_in: heading,
                heading_out: out,
                entry,
                exit,
                entry_distance: counted,
                path_entry: 0.0,
                path_exit: 0.0,
            });
            if i + 1 < def.maneuvers.len() {
                let nj = map
                    .next_junction(jc, out)
                    .ok_or_else(|| SimError::InvalidRoute(format!("no junction after {jc:?} heading {out:?}")))?;
                let next_entry = add(map.junctions[nj], out.vec(), -HALF_WIDTH);
                let len = dist(exit, next_entry);
                pieces.push(Piece {
                    from: exit,
                    to: next_entry,
                    offset: counted,
                });
                counted += len;
                if counted >= SEGMENT_LENGTH {
                    return Err(SimError::InvalidRoute("junctions exceed the 10 m segment".into()));
                }
                j = nj;
                heading = out;
            } else {
                let remaining = SEGMENT_LENGTH - counted;
                goal = add(exit, out.vec(), remaining);
                pieces.push(Piece {
                    from: exit,
                    to: goal,
                    offset: counted,
                });
                if !map.is_open(goal) {
                    return Err(SimError::InvalidRoute(format!("goal {goal:?} is not in free space")));
                }
            }
        }
        let start = Pose::new(start_pt.0, start_pt.1, def.arrive.angle());
        if !map.is_open(start_pt) {
            return Err(SimError::InvalidRoute(format!("start {start_pt:?} is not in free space")));
        }

        // allowed region: counted pieces (with slack behind the start and past
        // the goal) plus the traversed junctions
        let mut allowed = Vec::new();
        for (k, p) in pieces.iter().enumerate() {
            let d = p.dir();
            let from = if k == 0 { add(p.from, d, -3.0) } else { p.from };
            let to = if k + 1 == pieces.len() { add(p.to, d, 3.0) } else { p.to };
            allowed.push(Rect::around(from, to));
        }
        for c in &crossings {
            allowed.push(Rect::square(c.junction, HALF_WIDTH));
        }

        let mut seg = Segment {
            def,
            start,
            goal,
            crossings,
            pieces,
            path: Vec::new(),
            allowed,
        };
        seg.build_path();
        Ok(seg)
    }

    fn build_path(&mut self) {
        let mut pts: Vec<Point> = Vec::new();
        let push_line = |pts: &mut Vec<Point>, a: Point, b: Point| {
            let n = (dist(a, b) / PATH_STEP).round().max(1.0) as usize;
            for i in 0..n {
                let t = i as f64 / n as f64;
                pts.push((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t));
            }
        };
        let mut marks = Vec::new();
        let tail = 1.5;
        for (k, piece) in self.pieces.iter().enumerate() {
            if k == self.pieces.len() - 1 {
                let d = piece.dir();
                push_line(&mut pts, piece.from, add(piece.to, d, tail));
                pts.push(add(piece.to, d, tail));
                break;
            }
            push_line(&mut pts, piece.from, piece.to);
            let c = &self.crossings[k];
            marks.push(pts.len());
            if c.maneuver == Command::Straight {
                push_line(&mut pts, c.entry, c.exit);
            } else {
                // quarter circle of radius HALF_WIDTH about the inner corner
                let center = add(c.entry, c.heading_out.vec(), HALF_WIDTH);
                let a0 = (c.entry.1 - center.1).atan2(c.entry.0 - center.0);
                let sweep = if c.maneuver == Command::Left { FRAC_PI_2 } else { -FRAC_PI_2 };
                let n = ((HALF_WIDTH * FRAC_PI_2) / PATH_STEP).round() as usize;
                for i in 0..n {
                    let a = a0 + sweep * i as f64 / n as f64;
                    pts.push((center.0 + HALF_WIDTH * a.cos(), center.1 + HALF_WIDTH * a.sin()));
                }
            }
            marks.push(pts.len());
        }
        let mut path = Vec::with_capacity(pts.len());
        let mut s = 0.0;
        for (i, &p) in pts.iter().enumerate() {
            if i > 0 {
                s += dist(pts[i - 1], p);
            }
            path.push(PathPoint { x: p.0, y: p.1, s });
        }
        for (k, c) in self.crossings.iter_mut().enumerate() {
            c.path_entry = path[marks[2 * k]].s;
            c.path_exit = path[marks[2 * k + 1]].s;
        }
        self.path = path;
    }

    pub fn maneuvers(&self) -> &[Command] {
        &self.def.maneuvers
    }

    /// Counted boundary length (always 10 m for a valid segment).
    pub fn boundary_length(&self) -> f64 {
        self.pieces.iter().map(Piece::length).sum()
    }

    /// Index of the closest path point.
    pub fn closest_path_index(&self, x: f64, y: f64) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.path.iter().enumerate() {
            let d = (p.x - x).powi(2) + (p.y - y).powi(2);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Unsigned distance from the path centerline.
    pub fn lateral_error(&self, x: f64, y: f64) -> f64 {
        let i = self.closest_path_index(x, y);
        let p = self.path[i];
        (p.x - x).hypot(p.y - y)
    }

    /// Command that applies at arc length `s`: the next crossing's maneuver
    /// once it is within the command horizon, else straight.
    pub fn command_at(&self, s: f64) -> Command {
        for c in &self.crossings {
            if s < c.path_exit {
                return if c.path_entry - s <= COMMAND_HORIZON {
                    c.maneuver
                } else {
                    Command::Straight
                };
            }
        }
        Command::Straight
    }

    pub fn command_for_position(&self, x: f64, y: f64) -> Command {
        let i = self.closest_path_index(x, y);
        self.command_at(self.path[i].s)
    }

    pub fn progress(&self, x: f64, y: f64) -> SegmentProgress {
        let p = (x, y);
        let allowed_dist = self.allowed.iter().map(|r| r.distance(p)).fold(f64::INFINITY, f64::min);
        if allowed_dist > 0.25 {
            let idx = self
                .crossings
                .iter()
                .enumerate()
                .min_by(|a, b| dist(a.1.junction, p).total_cmp(&dist(b.1.junction, p)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            return SegmentProgress::WrongBranch(idx);
        }
        let mut best: Option<f64> = None;
        let last = self.pieces.len() - 1;
        for (k, piece) in self.pieces.iter().enumerate() {
            let back = if k == 0 { 3.0 } else { 0.0 };
            let ahead = if k == last { 3.0 } else { 0.0 };
            if let Some(d) = piece.progress(p, back, ahead) {
                best = Some(best.map_or(d, |b: f64| b.max(d)));
            }
        }
        for c in &self.crossings {
            if Rect::square(c.junction, HALF_WIDTH).contains(p) {
                best = Some(best.map_or(c.entry_distance, |b| b.max(c.entry_distance)));
            }
        }
        SegmentProgress::OnRoute(best.unwrap_or(0.0).clamp(0.0, SEGMENT_LENGTH))
    }
}

/// A named route: its maps and ordered segments.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteSpec {
    pub name: String,
    pub maps: Vec<MapSpec>,
    pub segments: Vec<Segment>,
    /// One rasterized grid per map.
    pub grids: Vec<OccupancyGrid>,
    /// Static entities placed in every map of the route.
    pub entities: Vec<Entity>,
}

pub const ROUTE_SCHEMA: u32 = 1;

/// Grid stored as run-length-encoded rows of `[value, count]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDocument {
    pub width: usize,
    pub resolution: f64,
    pub origin: Point,
    pub rows: Vec<Vec<[u32; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    #[serde(flatten)]
    pub spec: MapSpec,
    /// Explicit grid; rasterized from the corridors when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridDocument>,
}

/// Versioned JSON form of a route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDocument {
    pub schema: u32,
    pub name: String,
    pub maps: Vec<MapDocument>,
    pub segments: Vec<SegmentDef>,
    #[serde(default)]
    pub entities: Vec<Entity>,
}

impl RouteSpec {
    pub fn to_document(&self) -> RouteDocument {
        RouteDocument {
            schema: ROUTE_SCHEMA,
            name: self.name.clone(),
            maps: self
                .maps
                .iter()
                .zip(&self.grids)
                .map(|(m, g)| MapDocument {
                    spec: m.clone(),
                    grid: Some(GridDocument {
                        width: g.width,
                        resolution: g.resolution,
                        origin: g.origin,
                        rows: g.to_rle_rows(),
                    }),
                })
                .collect(),
            segments: self.segments.iter().map(|s| s.def.clone()).collect(),
            entities: self.entities.clone(),
        }
    }

    pub fn from_document(doc: RouteDocument) -> Result<Self, SimError> {
        if doc.schema != ROUTE_SCHEMA {
            return Err(SimError::InvalidRoute(format!(
                "unsupported schema {} (expected {ROUTE_SCHEMA})",
                doc.schema
            )));
        }
        let mut grids = Vec::new();
        let mut maps = Vec::new();
        for m in doc.maps {
            let g = match m.grid {
                Some(gd) => OccupancyGrid::from_rle_rows(gd.width, gd.resolution, gd.origin, &gd.rows)
                    .map_err(SimError::InvalidRoute)?,
                None => m.spec.build_grid(),
            };
            grids.push(g);
            maps.push(m.spec);
        }
        let mut r = RouteSpec::new(&doc.name, maps, doc.segments)?;
        r.grids = grids;
        r.entities = doc.entities;
        Ok(r)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("route document serializes")
    }

    pub fn new(name: &str, maps: Vec<MapSpec>, defs: Vec<SegmentDef>) -> Result<Self, SimError> {
        let segments = defs
            .into_iter()
            .map(|d| {
                let m = maps
                    .get(d.map)
                    .ok_or_else(|| SimError::InvalidRoute(format!("segment refers to missing map {}", d.map)))?;
                Segment::build(m, d)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let grids = maps.iter().map(MapSpec::build_grid).collect();
        Ok(RouteSpec {
            name: name.to_string(),
            maps,
            segments,
            grids,
            entities: Vec::new(),
        })
    }

    /// All maneuvers of all segments, in order.
    pub fn maneuvers(&self) -> Vec<Command> {
        self.segments.iter().flat_map(|s| s.maneuvers().iter().copied()).collect()
    }

    pub fn grid_for(&self, segment: usize) -> OccupancyGrid {
        self.grids[self.segments[segment].def.map].clone()
    }
}

/// T-junction at the origin with arms in every direction except `closed`.
fn t_map(closed: Dir, arm: f64, palette: u64) -> MapSpec {
    let mut corridors = Vec::new();
    for d in [Dir::East, Dir::North, Dir::West, Dir::South] {
        if d != closed {
            let v = d.vec();
            corridors.push((add((0.0, 0.0), v, HALF_WIDTH), add((0.0, 0.0), v, HALF_WIDTH + arm)));
        }
    }
    MapSpec {
        junctions: vec![(0.0, 0.0)],
        corridors,
        palette,
    }
}

fn seg(map: usize, junction: Point, arrive: Dir, maneuvers: &[Command]) -> SegmentDef {
    SegmentDef {
        map,
        junction,
        arrive,
        maneuvers: maneuvers.to_vec(),
    }
}

const ARM: f64 = 6.75;

fn eval1() -> RouteSpec {
    use Command::*;
    let o = (0.0, 0.0);
    // stem points south
    RouteSpec::new(
        "EVAL1",
        vec![t_map(Dir::North, ARM, 3)],
        vec![
            seg(0, o, Dir::East, &[Straight]),
            seg(0, o, Dir::West, &[Straight]),
            seg(0, o, Dir::North, &[Left]),
            seg(0, o, Dir::North, &[Right]),
            seg(0, o, Dir::East, &[Right]),
            seg(0, o, Dir::West, &[Left]),
        ],
    )
    .expect("EVAL1 is valid")
}

fn eval2() -> RouteSpec {
    use Command::*;
    // J1 at the origin with a stem to the south; J2 4 m east with a stem to the north
    let j1 = (0.0, 0.0);
    let j2 = (4.0, 0.0);
    let map = MapSpec {
        junctions: vec![j1, j2],
        corridors: vec![
            ((-HALF_WIDTH, 0.0), (-HALF_WIDTH - ARM, 0.0)),
            ((HALF_WIDTH, 0.0), (4.0 - HALF_WIDTH, 0.0)),
            ((4.0 + HALF_WIDTH, 0.0), (4.0 + HALF_WIDTH + ARM, 0.0)),
            ((0.0, -HALF_WIDTH), (0.0, -HALF_WIDTH - ARM)),
            ((4.0, HALF_WIDTH), (4.0, HALF_WIDTH + ARM)),
        ],
        palette: 5,
    };
    RouteSpec::new(
        "EVAL2",
        vec![map],
        vec![
            seg(0, j1, Dir::East, &[Straight, Left]),
            seg(0, j2, Dir::South, &[Right, Straight]),
            seg(0, j1, Dir::North, &[Left]),
            seg(0, j2, Dir::West, &[Right]),
        ],
    )
    .expect("EVAL2 is valid")
}

/// Two junctions 4 m apart along `first_out`, forming a zig-zag. The
/// approach arrives along `arrive`; the free stubs give every junction a
/// wrong branch.
fn zigzag_map(arrive: Dir, first: Command, palette: u64) -> (MapSpec, SegmentDef) {
    let j1 = (0.0, 0.0);
    let mid = arrive.turn(first);
    let j2 = add(j1, mid.vec(), 4.0);
    let second = first.mirrored();
    let out = mid.turn(second);
    let mut corridors = vec![
        // approach into J1
        (add(j1, arrive.vec(), -HALF_WIDTH), add(j1, arrive.vec(), -HALF_WIDTH - ARM)),
        // link
        (add(j1, mid.vec(), HALF_WIDTH), add(j2, mid.vec(), -HALF_WIDTH)),
        // exit from J2
        (add(j2, out.vec(), HALF_WIDTH), add(j2, out.vec(), HALF_WIDTH + ARM)),
    ];
    // stubs: J1 continues straight, J2 continues straight
    corridors.push((add(j1, arrive.vec(), HALF_WIDTH), add(j1, arrive.vec(), HALF_WIDTH + 3.0)));
    corridors.push((add(j2, mid.vec(), HALF_WIDTH), add(j2, mid.vec(), HALF_WIDTH + 3.0)));
    (
        MapSpec {
            junctions: vec![j1, j2],
            corridors,
            palette,
        },
        seg(0, j1, arrive, &[first, second]),
    )
}

/// Reverse traversal of a two-junction segment.
fn reverse_def(map: &MapSpec, def: &SegmentDef) -> SegmentDef {
    let mut heading = def.arrive;
    let mut j = def.junction;
    let mut turns = Vec::new();
    for (i, &m) in def.maneuvers.iter().enumerate() {
        let out = heading.turn(m);
        turns.push((j, heading, out, m));
        if i + 1 < def.maneuvers.len() {
            let nj = map.next_junction(j, out).expect("linked junction");
            j = map.junctions[nj];
        }
        heading = out;
    }
    let (last_j, _, last_out, _) = *turns.last().expect("non-empty");
    let arrive = opposite(last_out);
    let maneuvers = turns.iter().rev().map(|t| t.3.mirrored()).collect();
    SegmentDef {
        map: def.map,
        junction: last_j,
        arrive,
        maneuvers,
    }
}

fn opposite(d: Dir) -> Dir {
    d.left().left()
}

fn r1() -> RouteSpec {
    use Command::*;
    let mut maps = Vec::new();
    let mut defs = Vec::new();
    let variants = [
        (Dir::East, Left),
        (Dir::East, Right),
        (Dir::North, Left),
        (Dir::North, Right),
    ];
    for (i, (arrive, first)) in variants.into_iter().enumerate() {
        let (map, mut def) = zigzag_map(arrive, first, 11 + i as u64);
        def.map = maps.len();
        let rev = reverse_def(&map, &def);
        maps.push(map);
        defs.push(def);
        defs.push(rev);
    }
    // two T-junctions in a row, both crossed straight
    let j1 = (0.0, 0.0);
    let j2 = (4.0, 0.0);
    let straight = MapSpec {
        junctions: vec![j1, j2],
        corridors: vec![
            ((-HALF_WIDTH, 0.0), (-HALF_WIDTH - ARM, 0.0)),
            ((HALF_WIDTH, 0.0), (4.0 - HALF_WIDTH, 0.0)),
            ((4.0 + HALF_WIDTH, 0.0), (4.0 + HALF_WIDTH + ARM, 0.0)),
            ((0.0, HALF_WIDTH), (0.0, HALF_WIDTH + 3.0)),
            ((4.0, -HALF_WIDTH), (4.0, -HALF_WIDTH - 3.0)),
        ],
        palette: 17,
    };
    let def = seg(maps.len(), j1, Dir::East, &[Straight, Straight]);
    let rev = reverse_def(&straight, &def);
    maps.push(straight);
    defs.push(def);
    defs.push(rev);
    RouteSpec::new("R1", maps, defs).expect("R1 is valid")
}

/// Bi-directional stem↔bar segments of a T-junction whose stem points `stem`.
fn t_route(name: &str, stem: Dir, palette: u64) -> RouteSpec {
    let closed = opposite(stem);
    let map = t_map(closed, ARM, palette);
    let o = (0.0, 0.0);
    let into_bar = opposite(stem);
    let mut defs = Vec::new();
    for turn in [Command::Left, Command::Right] {
        // from the stem onto the bar, then back
        let def = seg(0, o, into_bar, &[turn]);
        let rev = reverse_def(&map, &def);
        defs.push(def);
        defs.push(rev);
    }
    RouteSpec::new(name, vec![map], defs).expect("T route is valid")
}

/// R1, R2, R3, EVAL1, EVAL2.
pub fn builtin_routes() -> BTreeMap<String, RouteSpec> {
    let routes = [
        r1(),
        t_route("R2", Dir::North, 7),
        t_route("R3", Dir::East, 23),
        eval1(),
        eval2(),
    ];
    routes.into_iter().map(|r| (r.name.clone(), r)).collect()
}

pub fn builtin_route(name: &str) -> Option<RouteSpec> {
    builtin_routes().remove(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(r: &RouteSpec) -> (usize, usize, usize) {
        let m = r.maneuvers();
        (
            m.iter().filter(|c| **c == Command::Left).count(),
            m.iter().filter(|c| **c == Command::Right).count(),
            m.iter().filter(|c| **c == Command::Straight).count(),
        )
    }

    #[test]
    fn eval1_has_two_of_each() {
        let r = builtin_route("EVAL1").unwrap();
        assert_eq!(r.segments.len(), 6);
        assert_eq!(counts(&r), (2, 2, 2));
        for s in &r.segments {
            assert!((s.boundary_length() - 10.0).abs() < 1e-9);
            assert_eq!(s.crossings.len(), 1);
            assert!((s.crossings[0].entry_distance - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eval2_four_segments_two_junctions() {
        let r = builtin_route("EVAL2").unwrap();
        assert_eq!(r.segments.len(), 4);
        assert_eq!(r.maps[0].junctions.len(), 2);
        assert_eq!(counts(&r), (2, 2, 2));
        for s in &r.segments {
            assert!((s.boundary_length() - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn training_route_counts() {
        let r1 = builtin_route("R1").unwrap();
        assert_eq!(r1.segments.len(), 10);
        assert_eq!(counts(&r1), (8, 8, 4));
        for name in ["R2", "R3"] {
            let r = builtin_route(name).unwrap();
            assert_eq!(r.segments.len(), 4);
            assert_eq!(counts(&r), (2, 2, 0));
        }
        for r in builtin_routes().values() {
            for s in &r.segments {
                assert!((s.boundary_length() - 10.0).abs() < 1e-9, "{}", r.name);
            }
        }
    }

    #[test]
    fn starts_and_goals_are_free_and_path_is_continuous() {
        for r in builtin_routes().values() {
            for (i, s) in r.segments.iter().enumerate() {
                let g = r.grid_for(i);
                assert!(g.is_free_at(s.start.x, s.start.y), "{} start", r.name);
                assert!(g.is_free_at(s.goal.0, s.goal.1), "{} goal", r.name);
                for w in s.path.windows(2) {
                    assert!((w[1].s - w[0].s) < 0.06);
                    assert!(g.is_free_at(w[0].x, w[0].y), "{} seg {i} path leaves corridor at {:?}", r.name, w[0]);
                }
            }
        }
    }

    #[test]
    fn progress_and_wrong_branch() {
        let r = builtin_route("EVAL1").unwrap();
        // segment 5: heading west, left turn to the south stem
        let s = &r.segments[5];
        assert_eq!(s.def.maneuvers, vec![Command::Left]);
        assert_eq!(s.progress(s.start.x, s.start.y), SegmentProgress::OnRoute(0.0));
        match s.progress(s.start.x - 2.0, s.start.y) {
            SegmentProgress::OnRoute(d) => assert!((d - 2.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        // inside the junction
        assert_eq!(s.progress(0.0, 0.0), SegmentProgress::OnRoute(5.0));
        // kept going west into the wrong arm
        assert_eq!(s.progress(-1.5, 0.0), SegmentProgress::WrongBranch(0));
        // down the stem
        match s.progress(0.0, -3.75) {
            SegmentProgress::OnRoute(d) => assert!((d - 8.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.progress(s.goal.0, s.goal.1 - 1.0), SegmentProgress::OnRoute(10.0));
    }

    #[test]
    fn command_switches_at_horizon() {
        let r = builtin_route("EVAL1").unwrap();
        let s = &r.segments[2];
        let c = &s.crossings[0];
        assert_eq!(s.command_at(c.path_entry - 3.0 - 1e-6), Command::Straight);
        assert_eq!(s.command_at(c.path_entry - 3.0), Command::Left);
        assert_eq!(s.command_at(c.path_exit - 1e-6), Command::Left);
        assert_eq!(s.command_at(c.path_exit + 0.1), Command::Straight);
    }

    #[test]
    fn json_roundtrip_and_schema_check() {
        let r = builtin_route("EVAL2").unwrap();
        let text = r.to_json();
        let back = RouteSpec::from_json(&text).unwrap();
        assert_eq!(back, r);
        let bad = text.replacen("\"schema\":1", "\"schema\":2", 1);
        assert!(RouteSpec::from_json(&bad).is_err());
        assert!(RouteSpec::from_json("{").is_err());
    }
}
