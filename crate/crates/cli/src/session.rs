//! The simulation session behind the bridge. It owns the world, the
//! emulated board, the optional network policy and the recorder, and is
//! stepped one control tick at a time by the serving loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use deskbot_core::datakit::{
    apply_steering_noise, board_actuate, board_sense, encode_png, fnv1a64, CollectConfig, Collector, DataError,
    DemoRecord, NoiseProcess, NoiseSchedule, SessionMeta, SessionWriter, CONTROL_HZ, MANIFEST_VERSION,
};
use deskbot_core::evalbench::{Observation, Policy};
use deskbot_core::firmware::{Message, Mcu};
use deskbot_core::follow::{looping_person_world, select_target, servo, DetectionSource, FollowGains, FollowState, GroundTruthSource};
use deskbot_core::nn::{self, NetPolicy, PolicyArchitecture};
use deskbot_core::sim::route::{builtin_route, RouteSpec, SegmentProgress, SEGMENT_LENGTH};
use deskbot_core::sim::sensors::DetectionNoise;
use deskbot_core::sim::{render_camera, CameraConfig, CameraFrame, World};
use deskbot_core::{Action, Command};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{ClientMessage, PoseMsg, ServerMessage, Telemetry, Toggle};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error("route file: {0}")]
    Route(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Drive by hand; the network can take over with the policy toggle.
    Teleop,
    /// Scripted-expert collection, recorded exactly as `collect` does.
    Collect,
    /// The network drives the route, cycling over its segments.
    Policy,
    /// Follow a person walking a loop.
    Follow,
    /// The network drives each segment once, then the session ends.
    Eval,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Teleop => "teleop",
            Mode::Collect => "collect",
            Mode::Policy => "policy",
            Mode::Follow => "follow",
            Mode::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub mode: Mode,
    pub route: String,
    pub seed: u64,
    /// Route document replacing the built-in route of the same name.
    pub sim_config: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    /// Architecture JSON for the weights; defaults to `arch.json` beside them.
    pub arch: Option<PathBuf>,
    pub noise: bool,
    pub obstacles: bool,
    pub host: String,
    pub port: u16,
    /// Where recorded sessions go.
    pub out: PathBuf,
    /// Step as fast as possible instead of at 20 Hz.
    pub headless: bool,
    /// Collection length in collect mode.
    pub minutes: f64,
    /// Static files served at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: Mode::Teleop,
            route: "R1".into(),
            seed: 0,
            sim_config: None,
            weights: None,
            arch: None,
            noise: false,
            obstacles: false,
            host: "127.0.0.1".into(),
            port: 8765,
            out: PathBuf::from("sessions"),
            headless: false,
            minutes: 1.0,
            ui_dir: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.port < 1024 {
            return Err(SessionError::Config(format!("port {} outside 1024..=65535", self.port)));
        }
        if matches!(self.mode, Mode::Policy | Mode::Eval) && self.weights.is_none() {
            return Err(SessionError::Config(format!("{} mode needs weights", self.mode.as_str())));
        }
        if self.mode == Mode::Collect && !(self.minutes > 0.0 && self.minutes.is_finite()) {
            return Err(SessionError::Config("collect mode needs positive minutes".into()));
        }
        if self.sim_config.is_none() && builtin_route(&self.route).is_none() {
            return Err(SessionError::Config(format!("unknown route {}", self.route)));
        }
        Ok(())
    }

    pub fn load_route(&self) -> Result<RouteSpec, SessionError> {
        match &self.sim_config {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                RouteSpec::from_json(&text).map_err(|e| SessionError::Route(e.to_string()))
            }
            None => builtin_route(&self.route).ok_or_else(|| SessionError::Config(format!("unknown route {}", self.route))),
        }
    }

    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            route: self.route.clone(),
            minutes: self.minutes,
            noise: self.noise,
            obstacles: self.obstacles,
            seed: self.seed,
            ..Default::default()
        }
    }
}

/// Loads weights, reading the architecture from `arch` or from
/// `arch.json` beside the weights when present.
pub fn load_policy(weights: &Path, arch: Option<&Path>) -> Result<NetPolicy, SessionError> {
    let sibling = weights.with_file_name("arch.json");
    let arch_path = arch.map(Path::to_path_buf).or_else(|| sibling.exists().then_some(sibling));
    let arch = match arch_path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?).map_err(nn::NnError::from)?,
        None => PolicyArchitecture::default(),
    };
    let net = nn::io::load::<f32>(weights, &arch)?;
    let label = weights.file_stem().map_or("network".into(), |s| s.to_string_lossy().into_owned());
    Ok(NetPolicy::new(net, label))
}

/// Everything one tick produced.
pub struct TickOutput {
    pub telemetry: Telemetry,
    pub frame: CameraFrame,
    pub end: Option<ServerMessage>,
}

impl TickOutput {
    pub fn frame_png(&self) -> Vec<u8> {
        encode_png(&self.frame)
    }
}

struct Recorder {
    writer: SessionWriter,
    start_time: f64,
    collisions: u64,
    was_colliding: bool,
}

struct RouteDrive {
    route: RouteSpec,
    world: World,
    mcu: Mcu,
    seg_idx: usize,
    seg_start: f64,
    segments_done: usize,
    noise: NoiseProcess,
    recorder: Option<Recorder>,
    recordings: usize,
}

struct FollowDrive {
    world: World,
    mcu: Mcu,
    state: FollowState,
    source: GroundTruthSource,
}

enum Driver {
    Route(Box<RouteDrive>),
    Collect(Box<Collector>),
    Follow(Box<FollowDrive>),
    Finished,
}

/// Segment time budget before the network moves on to the next segment.
const SEGMENT_TIMEOUT_S: f64 = 60.0;

pub struct Session {
    cfg: SessionConfig,
    driver: Driver,
    policy: Option<NetPolicy>,
    camera: CameraConfig,
    ctrl: Action,
    command: Command,
    logging: bool,
    noise: bool,
    policy_on: bool,
    frame_id: u64,
    last_dir: Option<PathBuf>,
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Result<Self, SessionError> {
        cfg.validate()?;
        let policy = match &cfg.weights {
            Some(w) => Some(load_policy(w, cfg.arch.as_deref())?),
            None => None,
        };
        let route = cfg.load_route()?;
        let driver = match cfg.mode {
            Mode::Collect => {
                std::fs::create_dir_all(&cfg.out)?;
                Driver::Collect(Box::new(Collector::new(&route, &cfg.collect_config(), &cfg.out)?))
            }
            Mode::Follow => {
                let world = looping_person_world(cfg.seed);
                let mut mcu = Mcu::default();
                mcu.state.battery_avg = world.battery_voltage();
                Driver::Follow(Box::new(FollowDrive {
                    world,
                    mcu,
                    state: FollowState::new(FollowGains::default()),
                    source: GroundTruthSource::new(DetectionNoise::off()),
                }))
            }
            _ => {
                let seg = &route.segments[0];
                let world = World::new(route.grid_for(0), seg.start, Default::default(), cfg.seed)
                    .with_entities(route.entities.clone());
                let mut mcu = Mcu::default();
                mcu.state.battery_avg = world.battery_voltage();
                Driver::Route(Box::new(RouteDrive {
                    route,
                    world,
                    mcu,
                    seg_idx: 0,
                    seg_start: 0.0,
                    segments_done: 0,
                    noise: NoiseProcess::new(NoiseSchedule::default(), cfg.seed ^ 0x9015_e5ee),
                    recorder: None,
                    recordings: 0,
                }))
            }
        };
        let policy_on = matches!(cfg.mode, Mode::Policy | Mode::Eval);
        Ok(Session {
            logging: cfg.mode == Mode::Collect,
            noise: cfg.noise,
            policy_on,
            cfg,
            driver,
            policy,
            camera: CameraConfig::default(),
            ctrl: Action::STOP,
            command: Command::Straight,
            frame_id: 0,
            last_dir: None,
        })
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.driver, Driver::Finished)
    }

    /// Directory of the most recently closed recording.
    pub fn last_recording(&self) -> Option<&Path> {
        self.last_dir.as_deref()
    }

    pub fn world(&self) -> Option<&World> {
        match &self.driver {
            Driver::Route(r) => Some(&r.world),
            Driver::Collect(c) => Some(c.world()),
            Driver::Follow(f) => Some(&f.world),
            Driver::Finished => None,
        }
    }

    pub fn mcu(&self) -> Option<&Mcu> {
        match &self.driver {
            Driver::Route(r) => Some(&r.mcu),
            Driver::Collect(c) => Some(c.mcu()),
            Driver::Follow(f) => Some(&f.mcu),
            Driver::Finished => None,
        }
    }

    /// Applies a client message between ticks. Controls only replace the
    /// latest value; a toggle the mode does not support is an error and
    /// leaves the session untouched.
    pub fn apply(&mut self, msg: ClientMessage) -> Result<(), String> {
        match msg {
            ClientMessage::Ctrl { al, ar } => {
                self.ctrl = Action::new(al, ar).ok_or("non-finite control")?;
            }
            ClientMessage::Cmd { dir } => self.command = dir,
            ClientMessage::Toggle { what, on } => {
                let Driver::Route(drive) = &mut self.driver else {
                    return Err(format!("{} mode has no toggles", self.cfg.mode.as_str()));
                };
                match what {
                    Toggle::Noise => self.noise = on,
                    Toggle::Policy => {
                        if on && self.policy.is_none() {
                            return Err("no weights loaded".into());
                        }
                        self.policy_on = on;
                    }
                    Toggle::Logging if on == self.logging => {}
                    Toggle::Logging if on => {
                        let dir = self.cfg.out.join(format!("session_{:03}", drive.recordings));
                        drive.recordings += 1;
                        drive.recorder = Some(Recorder {
                            writer: SessionWriter::create(&dir).map_err(|e| e.to_string())?,
                            start_time: drive.world.time,
                            collisions: 0,
                            was_colliding: false,
                        });
                        self.logging = true;
                    }
                    Toggle::Logging => {
                        self.logging = false;
                        self.close_recording().map_err(|e| e.to_string())?;
                    }
                }
            }
        }
        Ok(())
    }

    fn close_recording(&mut self) -> Result<(), DataError> {
        let Driver::Route(drive) = &mut self.driver else {
            return Ok(());
        };
        let Some(rec) = drive.recorder.take() else {
            return Ok(());
        };
        let body = drive.world.body.clone();
        let canonical = serde_json::to_string(&(&body, &self.camera)).expect("config serializes");
        let meta = SessionMeta {
            v: MANIFEST_VERSION,
            route: drive.route.name.clone(),
            seed: self.cfg.seed,
            noise: self.noise,
            obstacles: false,
            schedule: NoiseSchedule::default(),
            body,
            camera: self.camera.clone(),
            camera_jitter: None,
            sim_config_hash: format!("{:016x}", fnv1a64(canonical.as_bytes())),
            frames: rec.writer.frames,
            segments_completed: 0,
            collisions: rec.collisions,
            valid: true,
            error: None,
        };
        let dir = rec.writer.dir().to_path_buf();
        rec.writer.finish(&meta)?;
        self.last_dir = Some(dir);
        Ok(())
    }

    /// Finishes any open recording.
    pub fn close(&mut self) -> Result<(), DataError> {
        self.logging = false;
        self.close_recording()
    }

    /// Steps one control tick. Returns `None` once the session is over.
    pub fn tick(&mut self) -> Result<Option<TickOutput>, SessionError> {
        let out = match &mut self.driver {
            Driver::Finished => return Ok(None),
            Driver::Collect(_) => self.tick_collect()?,
            Driver::Follow(_) => self.tick_follow()?,
            Driver::Route(_) => self.tick_route()?,
        };
        self.frame_id += 1;
        Ok(Some(out))
    }

    fn telemetry(&self, world: &World, mcu: &Mcu, status: Message, collided: bool) -> Telemetry {
        let Message::Status {
            millivolts,
            ticks_l,
            ticks_r,
            sonar_cm,
        } = status
        else {
            unreachable!("board telemetry is a status message")
        };
        let p = world.robot.pose;
        Telemetry {
            frame_id: self.frame_id,
            time: world.time,
            mode: self.cfg.mode.as_str().into(),
            pose: PoseMsg {
                x: p.x,
                y: p.y,
                theta: p.heading,
            },
            battery_mv: millivolts,
            ticks_l,
            ticks_r,
            sonar_cm,
            pwm_l: mcu.state.pwm_l,
            pwm_r: mcu.state.pwm_r,
            command: self.command,
            logging: self.logging,
            noise: self.noise,
            policy: self.policy_on,
            collided,
            segment: None,
            inference_ms: None,
            predicted: None,
            log_rows: None,
        }
    }

    fn tick_collect(&mut self) -> Result<TickOutput, SessionError> {
        let Driver::Collect(c) = &mut self.driver else { unreachable!() };
        match c.step()? {
            Some(t) => {
                self.command = t.record.command;
                let Driver::Collect(c) = &self.driver else { unreachable!() };
                let mut tel = self.telemetry(c.world(), c.mcu(), t.status, false);
                tel.log_rows = Some(c.frames());
                Ok(TickOutput {
                    telemetry: tel,
                    frame: t.frame,
                    end: None,
                })
            }
            None => {
                let Driver::Collect(c) = std::mem::replace(&mut self.driver, Driver::Finished) else { unreachable!() };
                let world = c.world().clone();
                let mcu = c.mcu().clone();
                let dir = self.cfg.out.clone();
                let reason = match c.finish() {
                    Ok(_) => "complete".to_string(),
                    Err(e @ DataError::Io { .. }) => return Err(e.into()),
                    Err(e) => format!("aborted: {e}"),
                };
                self.logging = false;
                self.last_dir = Some(dir.clone());
                let status = mcu.telemetry();
                let tel = self.telemetry(&world, &mcu, status, false);
                Ok(TickOutput {
                    telemetry: tel,
                    frame: render_camera(&world, &self.camera),
                    end: Some(ServerMessage::End {
                        reason,
                        dir: Some(dir.display().to_string()),
                    }),
                })
            }
        }
    }

    fn tick_follow(&mut self) -> Result<TickOutput, SessionError> {
        let Driver::Follow(f) = &mut self.driver else { unreachable!() };
        let frame = render_camera(&f.world, &self.camera);
        let dets = f.source.detect(&mut f.world, self.frame_id);
        f.state = select_target(&dets, &f.state);
        let action = servo(&f.state);
        let status = board_sense(&mut f.world, &mut f.mcu, action);
        let collided = board_actuate(&mut f.world, &mut f.mcu, 1.0 / CONTROL_HZ)?;
        let Driver::Follow(f) = &self.driver else { unreachable!() };
        let mut tel = self.telemetry(&f.world, &f.mcu, status, collided);
        tel.predicted = Some([action.left, action.right]);
        Ok(TickOutput {
            telemetry: tel,
            frame,
            end: None,
        })
    }

    fn tick_route(&mut self) -> Result<TickOutput, SessionError> {
        let mode = self.cfg.mode;
        let Driver::Route(d) = &mut self.driver else { unreachable!() };
        let seg = &d.route.segments[d.seg_idx];
        if mode != Mode::Teleop {
            let p = d.world.robot.pose;
            self.command = seg.command_for_position(p.x, p.y);
        }
        let frame = render_camera(&d.world, &self.camera);
        let mut inference = None;
        let label = match (&mut self.policy, self.policy_on) {
            (Some(policy), true) => {
                let obs = Observation {
                    world: &d.world,
                    segment: seg,
                    command: self.command,
                    frame: Some(&frame),
                };
                let t0 = Instant::now();
                let a = policy.act(&obs).map_err(|e| SessionError::Config(e.to_string()))?;
                inference = Some((t0.elapsed().as_secs_f64() * 1e3, a));
                a
            }
            _ => self.ctrl,
        };
        let t = d.world.time;
        let applied = match (self.noise, d.noise.at(t)) {
            (true, Some(e)) => apply_steering_noise(label, e.delta(t)),
            _ => label,
        };
        let noise_active = self.noise && applied != label;
        let status = board_sense(&mut d.world, &mut d.mcu, applied);
        if let Some(rec) = &mut d.recorder {
            let Message::Status {
                millivolts,
                ticks_l,
                ticks_r,
                sonar_cm,
            } = status
            else {
                unreachable!()
            };
            let id = rec.writer.frames;
            let record = DemoRecord {
                v: MANIFEST_VERSION,
                frame_id: id,
                timestamp: t - rec.start_time,
                image_path: SessionWriter::image_path(id),
                command: self.command,
                label_action: label.to_stored(),
                applied_action: applied.to_stored(),
                ticks_l,
                ticks_r,
                sonar: sonar_cm,
                battery: millivolts,
                noise_active,
            };
            rec.writer.record(&frame, &record)?;
        }
        let collided = board_actuate(&mut d.world, &mut d.mcu, 1.0 / CONTROL_HZ)?;
        if let Some(rec) = &mut d.recorder {
            if collided && !rec.was_colliding {
                rec.collisions += 1;
            }
            rec.was_colliding = collided;
        }

        let mut end = None;
        if mode != Mode::Teleop {
            let p = d.world.robot.pose;
            let over = match d.route.segments[d.seg_idx].progress(p.x, p.y) {
                SegmentProgress::WrongBranch(_) => true,
                SegmentProgress::OnRoute(s) => s >= SEGMENT_LENGTH - 1e-9,
            } || d.world.time - d.seg_start >= SEGMENT_TIMEOUT_S;
            if over {
                d.segments_done += 1;
                if mode == Mode::Eval && d.segments_done >= d.route.segments.len() {
                    end = Some(ServerMessage::End {
                        reason: "complete".into(),
                        dir: None,
                    });
                } else {
                    d.seg_idx = (d.seg_idx + 1) % d.route.segments.len();
                    let next = &d.route.segments[d.seg_idx];
                    let soc = d.world.soc;
                    let time = d.world.time;
                    d.world = World::new(d.route.grid_for(d.seg_idx), next.start, d.world.body.clone(), self.cfg.seed.wrapping_add(d.segments_done as u64))
                        .with_entities(d.route.entities.clone());
                    d.world.soc = soc;
                    d.world.time = time;
                    d.seg_start = time;
                    if let Some(p) = &mut self.policy {
                        p.reset();
                    }
                }
            }
        }
        let Driver::Route(d) = &self.driver else { unreachable!() };
        let mut tel = self.telemetry(&d.world, &d.mcu, status, collided);
        tel.segment = Some(d.seg_idx);
        tel.log_rows = d.recorder.as_ref().map(|r| r.writer.frames);
        if let Some((ms, a)) = inference {
            tel.inference_ms = Some(ms);
            tel.predicted = Some([a.left, a.right]);
        }
        if end.is_some() {
            self.driver = Driver::Finished;
        }
        Ok(TickOutput {
            telemetry: tel,
            frame,
            end,
        })
    }
}
