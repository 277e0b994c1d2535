//! Demonstration logging: noise-injected expert driving, the on-disk
//! session format, and loading sessions back as training sets.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::firmware::{action_to_pwm, Mcu, Message};
use crate::sim::camera::{render_camera, CameraConfig, CameraFrame};
use crate::sim::expert::{ExpertConfig, ScriptedExpert};
use crate::sim::route::{RouteSpec, Segment, SegmentProgress, SEGMENT_LENGTH};
use crate::sim::sensors::sonar_distance;
use crate::sim::world::{BodyParams, Entity, World};
use crate::sim::SimError;
use crate::types::{Action, Command};

pub const MANIFEST_VERSION: u32 = 1;
pub const CONTROL_HZ: f64 = 20.0;
/// Noise episodes are not started this close to an obstacle.
pub const OBSTACLE_NOISE_CLEARANCE: f64 = 2.5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest {path} line {line}: {reason}")]
    Manifest { path: PathBuf, line: usize, reason: String },
    #[error("frame {frame_id}: {reason}")]
    Frame { frame_id: u64, reason: String },
    #[error("unsupported manifest version {0}")]
    Version(u32),
    #[error("empty dataset")]
    Empty,
    #[error("route departure at frame {frame_id}: {reason}")]
    RouteDeparture { frame_id: u64, reason: String },
    #[error("unknown route {0}")]
    UnknownRoute(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes seconds with exactly three decimals.
fn three_decimals<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(format!("{t:.3}")).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

/// One logged control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub v: u32,
    pub frame_id: u64,
    #[serde(serialize_with = "three_decimals")]
    pub timestamp: f64,
    pub image_path: String,
    pub command: Command,
    /// Expert action, stored `[0,1]` form.
    pub label_action: [f64; 2],
    /// Action sent to the motors after noise, stored `[0,1]` form.
    pub applied_action: [f64; 2],
    pub ticks_l: u32,
    pub ticks_r: u32,
    pub sonar: u32,
    pub battery: u32,
    pub noise_active: bool,
}

/// Steering-noise episodes injected while collecting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSchedule {
    /// Mean seconds between the end of one episode and the start of the next.
    pub arrival_mean_s: f64,
    pub duration_s: (f64, f64),
    /// Range of the peak steering offset.
    pub peak: (f64, f64),
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            arrival_mean_s: 5.0,
            duration_s: (0.5, 1.5),
            peak: (0.3, 0.9),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEpisode {
    pub start: f64,
    pub duration: f64,
    /// Signed peak steering offset.
    pub peak: f64,
}

impl NoiseEpisode {
    /// Triangular profile: zero at both ends, `peak` at the middle.
    pub fn delta(&self, t: f64) -> f64 {
        let u = (t - self.start) / self.duration;
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        self.peak * (1.0 - (2.0 * u - 1.0).abs())
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.start + self.duration
    }
}

/// Seeded generator of non-overlapping noise episodes.
#[derive(Debug, Clone)]
pub struct NoiseProcess {
    cfg: NoiseSchedule,
    rng: ChaCha8Rng,
    current: NoiseEpisode,
}

impl NoiseProcess {
    pub fn new(cfg: NoiseSchedule, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let current = Self::draw(&cfg, &mut rng, 0.0);
        NoiseProcess { cfg, rng, current }
    }

    fn draw(cfg: &NoiseSchedule, rng: &mut ChaCha8Rng, after: f64) -> NoiseEpisode {
        let gap = Exp::new(1.0 / cfg.arrival_mean_s.max(1e-6)).expect("rate").sample(rng);
        let duration = rng.gen_range(cfg.duration_s.0..=cfg.duration_s.1);
        let peak = rng.gen_range(cfg.peak.0..=cfg.peak.1).min(1.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        NoiseEpisode {
            start: after + gap,
            duration,
            peak: sign * peak,
        }
    }

    /// Episode governing time `t` (times must be queried in order).
    pub fn at(&mut self, t: f64) -> Option<NoiseEpisode> {
        while t > self.current.start + self.current.duration {
            let end = self.current.start + self.current.duration;
            self.current = Self::draw(&self.cfg, &mut self.rng, end);
        }
        self.current.contains(t).then_some(self.current)
    }
}

/// Adds a steering offset split anti-symmetrically over the channels.
pub fn apply_steering_noise(label: Action, delta: f64) -> Action {
    Action::new(label.left + delta / 2.0, label.right - delta / 2.0).unwrap_or(label)
}

/// Perturbation of the camera mount per session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraJitter {
    pub pitch_deg: f64,
    pub height_m: f64,
    pub hue: f64,
    pub exposure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub route: String,
    pub minutes: f64,
    pub noise: bool,
    pub obstacles: bool,
    pub seed: u64,
    pub schedule: NoiseSchedule,
    pub body: BodyParams,
    /// Draws both wheel biases uniformly from this range per session.
    pub randomize_bias: Option<(f64, f64)>,
    pub camera: CameraConfig,
    pub camera_jitter: bool,
    pub expert: ExpertConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            route: "R1".into(),
            minutes: 1.0,
            noise: true,
            obstacles: false,
            seed: 0,
            schedule: NoiseSchedule::default(),
            body: BodyParams::default(),
            randomize_bias: None,
            camera: CameraConfig::default(),
            camera_jitter: false,
            expert: ExpertConfig::default(),
        }
    }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub v: u32,
    pub route: String,
    pub seed: u64,
    pub noise: bool,
    pub obstacles: bool,
    pub schedule: NoiseSchedule,
    pub body: BodyParams,
    pub camera: CameraConfig,
    pub camera_jitter: Option<CameraJitter>,
    /// FNV-1a of the canonical body and camera configuration.
    pub sim_config_hash: String,
    pub frames: u64,
    pub segments_completed: u64,
    pub collisions: u64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn write_png(path: &Path, frame: &CameraFrame) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), frame.width as u32, frame.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc
        .write_header()
        .map_err(|e| io_err(path)(std::io::Error::other(e)))?;
    w.write_image_data(&frame.to_rgb8())
        .map_err(|e| io_err(path)(std::io::Error::other(e)))?;
    Ok(())
}

/// Encodes a frame as PNG bytes in memory.
pub fn encode_png(frame: &CameraFrame) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width as u32, frame.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory png header");
        w.write_image_data(&frame.to_rgb8()).expect("in-memory png data");
    }
    out
}

/// Decodes an 8-bit RGB PNG into `(width, height, rgb bytes)`.
pub fn read_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let dec = png::Decoder::new(bytes);
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(format!("expected 8-bit RGB, got {:?}/{:?}", info.color_type, info.bit_depth));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

/// Places chair-like obstacles along the straight pieces of a segment,
/// away from junctions and the start, at least 3 m apart.
pub fn scatter_obstacles(route: &RouteSpec, segment: usize, rng: &mut ChaCha8Rng) -> Vec<Entity> {
    let seg = &route.segments[segment];
    let mut out: Vec<Entity> = Vec::new();
    let count = (seg.boundary_length() / 5.0).round() as usize;
    for _ in 0..count * 4 {
        if out.len() >= count {
            break;
        }
        let piece = &seg.pieces[rng.gen_range(0..seg.pieces.len())];
        let len = piece.length();
        let margin_start = if piece.offset == 0.0 { 2.0 } else { 1.5 };
        let margin_end = 1.5;
        if len < margin_start + margin_end + 0.1 {
            continue;
        }
        let along = rng.gen_range(margin_start..len - margin_end);
        let (dx, dy) = ((piece.to.0 - piece.from.0) / len, (piece.to.1 - piece.from.1) / len);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let lateral = side * rng.gen_range(0.25..0.40);
        let x = piece.from.0 + dx * along - dy * lateral;
        let y = piece.from.1 + dy * along + dx * lateral;
        // far enough apart that the driver can settle between two swerves
        if out.iter().all(|e| (e.pose.x - x).hypot(e.pose.y - y) >= 3.0) {
            out.push(Entity::obstacle(x, y, 0.25));
        }
    }
    out
}

/// Summary of one collection run.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub dir: PathBuf,
    pub meta: SessionMeta,
}

/// Sends a throttle command to the board and refreshes its sonar and
/// battery readings; returns the status it would report.
pub fn board_sense(world: &mut World, mcu: &mut Mcu, applied: Action) -> Message {
    let (pl, pr) = action_to_pwm(applied);
    mcu.handle(&Message::Control { left: pl, right: pr });
    mcu.set_sonar(sonar_distance(world, true));
    mcu.update_battery(mcu.volts_to_adc(world.battery_voltage()))
        .expect("adc reading in range");
    mcu.telemetry()
}

/// Drives the world with the board's duty for one control period in two
/// half steps, counting encoder slots. Returns whether the body touched
/// anything.
pub fn board_actuate(world: &mut World, mcu: &mut Mcu, dt: f64) -> Result<bool, DataError> {
    let duty = mcu.duty();
    let half = dt / 2.0;
    let mut collided = false;
    for _ in 0..2 {
        let info = world.step(duty, half)?;
        collided |= info.collided;
        mcu.tick_odometry(info.wheel_delta_l, info.wheel_delta_r)
            .expect("finite wheel rotation");
    }
    mcu.advance((dt * 1000.0).round() as u64);
    Ok(collided)
}

/// Appends frames and manifest rows to a session directory.
pub struct SessionWriter {
    dir: PathBuf,
    manifest_path: PathBuf,
    manifest: BufWriter<File>,
    pub frames: u64,
}

impl SessionWriter {
    pub fn create(dir: &Path) -> Result<Self, DataError> {
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
        let manifest_path = dir.join("manifest.jsonl");
        let manifest = BufWriter::new(File::create(&manifest_path).map_err(io_err(&manifest_path))?);
        Ok(SessionWriter {
            dir: dir.to_path_buf(),
            manifest_path,
            manifest,
            frames: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Relative image path for a frame id.
    pub fn image_path(frame_id: u64) -> String {
        format!("frames/{frame_id:06}.png")
    }

    /// Writes the frame to `rec.image_path` and appends the row.
    pub fn record(&mut self, frame: &CameraFrame, rec: &DemoRecord) -> Result<(), DataError> {
        write_png(&self.dir.join(&rec.image_path), frame)?;
        serde_json::to_writer(&mut self.manifest, rec).expect("record serializes");
        self.manifest.write_all(b"\n").map_err(io_err(&self.manifest_path))?;
        self.frames += 1;
        Ok(())
    }

    /// Flushes the manifest and writes `meta.json`.
    pub fn finish(mut self, meta: &SessionMeta) -> Result<(), DataError> {
        self.manifest.flush().map_err(io_err(&self.manifest_path))?;
        let meta_path = self.dir.join("meta.json");
        let mut text = serde_json::to_string_pretty(meta).expect("meta serializes");
        text.push('\n');
        fs::write(&meta_path, text).map_err(io_err(&meta_path))?;
        Ok(())
    }
}

/// What one collection tick produced.
#[derive(Debug, Clone)]
pub struct CollectTick {
    pub frame: CameraFrame,
    pub record: DemoRecord,
    /// Telemetry the board reported before the step.
    pub status: Message,
    /// The quantized command the wheels received.
    pub duty: Action,
}

/// Scripted-expert collection, one 20 Hz tick at a time.
pub struct Collector {
    route: RouteSpec,
    cfg: CollectConfig,
    writer: SessionWriter,
    rng: ChaCha8Rng,
    body: BodyParams,
    camera: CameraConfig,
    jitter: Option<CameraJitter>,
    canonical: String,
    noise: NoiseProcess,
    mcu: Mcu,
    expert: ScriptedExpert,
    world: World,
    seg_idx: usize,
    total_steps: u64,
    frame_id: u64,
    segments_completed: u64,
    collisions: u64,
    gate: Option<(f64, bool)>,
    was_colliding: bool,
    stuck: f64,
    error: Option<DataError>,
}

impl Collector {
    pub fn new(route: &RouteSpec, cfg: &CollectConfig, out: &Path) -> Result<Self, DataError> {
        if route.segments.is_empty() {
            return Err(DataError::Empty);
        }
        if let Some((lo, hi)) = cfg.randomize_bias {
            if !(lo <= hi) {
                return Err(SimError::InvalidParams(format!("bias range {lo}..{hi} is empty")).into());
            }
            let mut edge = cfg.body.clone();
            (edge.bias_l, edge.bias_r) = (lo, hi);
            edge.validate()?;
        }
        let writer = SessionWriter::create(out)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc011_ec7);
        let mut body = cfg.body.clone();
        if let Some((lo, hi)) = cfg.randomize_bias {
            body.bias_l = rng.gen_range(lo..=hi);
            body.bias_r = rng.gen_range(lo..=hi);
        }
        body.validate()?;
        let mut camera = cfg.camera.clone();
        let jitter = cfg.camera_jitter.then(|| CameraJitter {
            pitch_deg: rng.gen_range(-3.0..=3.0),
            height_m: rng.gen_range(-0.02..=0.02),
            hue: rng.gen_range(-0.03..=0.03),
            exposure: rng.gen_range(-0.1..=0.1),
        });
        if let Some(j) = jitter {
            camera.pitch += j.pitch_deg.to_radians();
            camera.mount_height += j.height_m;
            camera.hue_offset += j.hue;
            camera.exposure *= 1.0 + j.exposure;
        }
        let canonical = serde_json::to_string(&(&body, &camera)).expect("config serializes");
        let noise = NoiseProcess::new(cfg.schedule.clone(), cfg.seed ^ 0x9015_e5ee);
        let seg_idx = rng.gen_range(0..route.segments.len());
        let placeholder = World::new(route.grid_for(seg_idx), route.segments[seg_idx].start, body.clone(), 0);
        let mut c = Collector {
            route: route.clone(),
            cfg: cfg.clone(),
            writer,
            rng,
            body,
            camera,
            jitter,
            canonical,
            noise,
            mcu: Mcu::default(),
            expert: ScriptedExpert::new(cfg.expert.clone()),
            world: placeholder,
            seg_idx,
            total_steps: (cfg.minutes * 60.0 * CONTROL_HZ).round() as u64,
            frame_id: 0,
            segments_completed: 0,
            collisions: 0,
            gate: None,
            was_colliding: false,
            stuck: 0.0,
            error: None,
        };
        c.begin_segment(1.0);
        Ok(c)
    }

    fn begin_segment(&mut self, soc: f64) {
        let entities = if self.cfg.obstacles {
            scatter_obstacles(&self.route, self.seg_idx, &mut self.rng)
        } else {
            Vec::new()
        };
        let seg = &self.route.segments[self.seg_idx];
        self.world = World::new(self.route.grid_for(self.seg_idx), seg.start, self.body.clone(), self.rng.gen())
            .with_entities(entities);
        // battery state carries over between segments
        self.world.soc = soc;
        self.expert.reset();
        self.was_colliding = false;
        self.stuck = 0.0;
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn mcu(&self) -> &Mcu {
        &self.mcu
    }

    pub fn camera(&self) -> &CameraConfig {
        &self.camera
    }

    pub fn segment(&self) -> &Segment {
        &self.route.segments[self.seg_idx]
    }

    pub fn frames(&self) -> u64 {
        self.frame_id
    }

    /// True once the time budget is spent or the session aborted.
    pub fn is_done(&self) -> bool {
        self.frame_id >= self.total_steps || self.error.is_some()
    }

    /// Runs one tick; `None` once the session is over.
    pub fn step(&mut self) -> Result<Option<CollectTick>, DataError> {
        if self.is_done() {
            return Ok(None);
        }
        let dt = 1.0 / CONTROL_HZ;
        let session_time = self.frame_id as f64 * dt;
        let frame_id = self.frame_id;
        let seg = &self.route.segments[self.seg_idx];
        let eo = match self.expert.act(&self.world, seg) {
            Ok(o) => o,
            Err(e) => {
                self.error = Some(DataError::RouteDeparture {
                    frame_id,
                    reason: e.to_string(),
                });
                return Ok(None);
            }
        };
        let mut episode = if self.cfg.noise { self.noise.at(session_time) } else { None };
        if let Some(e) = episode {
            // an episode that would begin next to an obstacle is skipped whole
            if self.gate.map_or(true, |(start, _)| start != e.start) {
                let p = self.world.robot.pose;
                let near = self
                    .world
                    .entities
                    .iter()
                    .any(|o| (o.pose.x - p.x).hypot(o.pose.y - p.y) < OBSTACLE_NOISE_CLEARANCE);
                self.gate = Some((e.start, !near));
            }
            if self.gate.is_some_and(|(_, allowed)| !allowed) {
                episode = None;
            }
        }
        let delta = episode.map_or(0.0, |e| e.delta(session_time));
        let applied = if episode.is_some() {
            apply_steering_noise(eo.action, delta)
        } else {
            eo.action
        };

        let status = board_sense(&mut self.world, &mut self.mcu, applied);
        let Message::Status {
            millivolts,
            ticks_l,
            ticks_r,
            sonar_cm,
        } = status
        else {
            unreachable!("telemetry is a status message")
        };

        let frame = render_camera(&self.world, &self.camera);
        let record = DemoRecord {
            v: MANIFEST_VERSION,
            frame_id,
            timestamp: session_time,
            image_path: SessionWriter::image_path(frame_id),
            command: eo.command,
            label_action: eo.action.to_stored(),
            applied_action: applied.to_stored(),
            ticks_l,
            ticks_r,
            sonar: sonar_cm,
            battery: millivolts,
            noise_active: episode.is_some(),
        };
        self.writer.record(&frame, &record)?;

        let duty = self.mcu.duty();
        let collided = board_actuate(&mut self.world, &mut self.mcu, dt)?;
        if collided && !self.was_colliding {
            self.collisions += 1;
        }
        self.was_colliding = collided;
        self.frame_id += 1;

        let p = self.world.robot.pose;
        if self.world.robot.speed < 0.02 && collided {
            self.stuck += dt;
        } else {
            self.stuck = 0.0;
        }
        let tick = CollectTick {
            frame,
            record,
            status,
            duty,
        };
        if self.stuck > 3.0 {
            self.error = Some(DataError::RouteDeparture {
                frame_id: self.frame_id,
                reason: "wedged against an obstacle".into(),
            });
            return Ok(Some(tick));
        }
        let progress = seg.progress(p.x, p.y);
        match progress {
            SegmentProgress::WrongBranch(_) => {
                self.error = Some(DataError::RouteDeparture {
                    frame_id: self.frame_id,
                    reason: "entered a wrong branch".into(),
                });
            }
            SegmentProgress::OnRoute(d) if d >= SEGMENT_LENGTH - 1e-9 => {
                self.segments_completed += 1;
                let soc = self.world.soc;
                self.seg_idx = (self.seg_idx + 1) % self.route.segments.len();
                if self.frame_id < self.total_steps {
                    self.begin_segment(soc);
                }
            }
            SegmentProgress::OnRoute(_) => {}
        }
        Ok(Some(tick))
    }

    /// Writes `meta.json`; an aborted session is marked invalid and
    /// reported as an error.
    pub fn finish(self) -> Result<SessionSummary, DataError> {
        let meta = SessionMeta {
            v: MANIFEST_VERSION,
            route: self.route.name.clone(),
            seed: self.cfg.seed,
            noise: self.cfg.noise,
            obstacles: self.cfg.obstacles,
            schedule: self.cfg.schedule.clone(),
            body: self.body,
            camera: self.camera,
            camera_jitter: self.jitter,
            sim_config_hash: format!("{:016x}", fnv1a64(self.canonical.as_bytes())),
            frames: self.frame_id,
            segments_completed: self.segments_completed,
            collisions: self.collisions,
            valid: self.error.is_none(),
            error: self.error.as_ref().map(|e| e.to_string()),
        };
        let dir = self.writer.dir().to_path_buf();
        self.writer.finish(&meta)?;
        match self.error {
            Some(e) => Err(e),
            None => Ok(SessionSummary { dir, meta }),
        }
    }
}

/// Drives the scripted expert over the route's segments, cycling through
/// them, for `minutes` of simulated time, and writes a session directory.
pub fn collect(route: &RouteSpec, cfg: &CollectConfig, out: &Path) -> Result<SessionSummary, DataError> {
    let mut c = Collector::new(route, cfg, out)?;
    while c.step()?.is_some() {}
    c.finish()
}

/// One training example held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// RGB bytes, row-major, `height * width * 3`.
    pub image: Vec<u8>,
    pub command: Command,
    /// Stored-form target (the expert's label).
    pub target: [f32; 2],
    pub noise_active: bool,
    pub session: usize,
    pub frame_id: u64,
}

impl Sample {
    /// Stored-form steering `a_l - a_r`.
    pub fn steering(&self) -> f32 {
        self.target[0] - self.target[1]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn read_manifest(dir: &Path) -> Result<Vec<DemoRecord>, DataError> {
    let path = dir.join("manifest.jsonl");
    let f = File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| DataError::Manifest {
            path: path.clone(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        let ver = v.get("v").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if ver != MANIFEST_VERSION {
            return Err(DataError::Version(ver));
        }
        let rec: DemoRecord = serde_json::from_value(v).map_err(|e| DataError::Manifest {
            path: path.clone(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Box-filter resize of an RGB byte image.
pub fn resize_rgb(src: &[u8], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<u8> {
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let mut out = vec![0u8; dw * dh * 3];
    for y in 0..dh {
        let y0 = y * sh / dh;
        let y1 = ((y + 1) * sh / dh).max(y0 + 1);
        for x in 0..dw {
            let x0 = x * sw / dw;
            let x1 = ((x + 1) * sw / dw).max(x0 + 1);
            for c in 0..3 {
                let mut acc = 0u32;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[(yy * sw + xx) * 3 + c] as u32;
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as u32;
                out[(y * dw + x) * 3 + c] = ((acc + n / 2) / n) as u8;
            }
        }
    }
    out
}

/// Loads one session, resizing frames to `width × height`.
pub fn load_session(dir: &Path, session: usize, width: usize, height: usize) -> Result<Vec<Sample>, DataError> {
    let records = read_manifest(dir)?;
    let frames_dir = dir.join("frames");
    let on_disk = fs::read_dir(&frames_dir)
        .map_err(io_err(&frames_dir))?
        .filter(|e| e.as_ref().map(|e| e.path().extension().is_some_and(|x| x == "png")).unwrap_or(false))
        .count();
    if on_disk != records.len() {
        return Err(DataError::Manifest {
            path: dir.join("manifest.jsonl"),
            line: records.len(),
            reason: format!("{} records but {on_disk} frames", records.len()),
        });
    }
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let path = dir.join(&r.image_path);
        let bytes = fs::read(&path).map_err(|e| DataError::Frame {
            frame_id: r.frame_id,
            reason: e.to_string(),
        })?;
        let (w, h, rgb) = read_png(&bytes).map_err(|reason| DataError::Frame {
            frame_id: r.frame_id,
            reason,
        })?;
        out.push(Sample {
            image: resize_rgb(&rgb, w, h, width, height),
            command: r.command,
            target: [r.label_action[0] as f32, r.label_action[1] as f32],
            noise_active: r.noise_active,
            session,
            frame_id: r.frame_id,
        });
    }
    Ok(out)
}

/// Loads sessions and splits them 90/10 at session granularity.
/// With a single session everything goes to the training set.
pub fn load_dataset(
    dirs: &[PathBuf],
    split_seed: u64,
    width: usize,
    height: usize,
) -> Result<(Dataset, Dataset), DataError> {
    if dirs.is_empty() {
        return Err(DataError::Empty);
    }
    let mut order: Vec<usize> = (0..dirs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_val = if dirs.len() >= 2 {
        ((dirs.len() as f64 * 0.1).round() as usize).max(1)
    } else {
        0
    };
    let mut train = Dataset {
        width,
        height,
        samples: Vec::new(),
    };
    let mut val = train.clone();
    for (rank, &i) in order.iter().enumerate() {
        let samples = load_session(&dirs[i], i, width, height)?;
        if rank < n_val {
            val.samples.extend(samples);
        } else {
            train.samples.extend(samples);
        }
    }
    Ok((train, val))
}

pub const HISTOGRAM_BINS: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Counts of stored-form steering over 21 equal bins spanning `[-1, 1]`.
    pub steering_histogram: Vec<usize>,
    /// Counts per command in `left, straight, right` order.
    pub command_counts: [usize; 3],
    pub noise_fraction: f64,
    pub samples: usize,
}

pub fn steering_bin(s: f64) -> usize {
    let u = ((s.clamp(-1.0, 1.0) + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor() as usize;
    u.min(HISTOGRAM_BINS - 1)
}

pub fn dataset_stats(set: &Dataset) -> Result<DatasetStats, DataError> {
    if set.is_empty() {
        return Err(DataError::Empty);
    }
    let mut hist = vec![0; HISTOGRAM_BINS];
    let mut cmd = [0; 3];
    let mut noisy = 0;
    for s in &set.samples {
        hist[steering_bin(s.steering() as f64)] += 1;
        cmd[s.command.index()] += 1;
        noisy += s.noise_active as usize;
    }
    Ok(DatasetStats {
        steering_histogram: hist,
        command_counts: cmd,
        noise_fraction: noisy as f64 / set.len() as f64,
        samples: set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_profile() {
        let e = NoiseEpisode {
            start: 1.0,
            duration: 1.0,
            peak: -0.6,
        };
        assert_eq!(e.delta(0.9), 0.0);
        assert_eq!(e.delta(1.0), 0.0);
        assert!((e.delta(1.5) + 0.6).abs() < 1e-12);
        assert!((e.delta(1.25) + 0.3).abs() < 1e-12);
        assert_eq!(e.delta(2.0), 0.0);
    }

    #[test]
    fn episodes_never_overlap_and_respect_ranges() {
        let cfg = NoiseSchedule::default();
        let mut p = NoiseProcess::new(cfg.clone(), 4);
        let mut seen: Vec<NoiseEpisode> = Vec::new();
        let mut t = 0.0;
        while t < 2000.0 {
            if let Some(e) = p.at(t) {
                if seen.last() != Some(&e) {
                    seen.push(e);
                }
            }
            t += 0.05;
        }
        assert!(seen.len() > 200);
        for w in seen.windows(2) {
            assert!(w[0].start + w[0].duration < w[1].start);
        }
        for e in &seen {
            assert!(e.peak.abs() >= cfg.peak.0 && e.peak.abs() <= cfg.peak.1);
            assert!(e.duration >= cfg.duration_s.0 && e.duration <= cfg.duration_s.1);
        }
    }

    #[test]
    fn timestamp_has_three_decimals() {
        let r = DemoRecord {
            v: 1,
            frame_id: 3,
            timestamp: 0.15000000000000002,
            image_path: "frames/000003.png".into(),
            command: Command::Left,
            label_action: [0.75, 0.75],
            applied_action: [0.75, 0.75],
            ticks_l: 0,
            ticks_r: 0,
            sonar: 300,
            battery: 0,
            noise_active: false,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"timestamp\":0.150,"), "{s}");
        let back: DemoRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back.timestamp, 0.15);
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(steering_bin(0.0), 10);
        assert_eq!(steering_bin(-1.0), 0);
        assert_eq!(steering_bin(1.0), 20);
        assert_eq!(steering_bin(0.04), 10);
    }

    #[test]
    fn resize_halves() {
        let src: Vec<u8> = (0..4 * 2 * 3).map(|i| (i * 10) as u8).collect();
        let out = resize_rgb(&src, 4, 2, 2, 1);
        assert_eq!(out.len(), 6);
        // average of pixels (0,0),(1,0),(0,1),(1,1) channel 0: 0,30,120,150
        assert_eq!(out[0], 75);
    }
}
