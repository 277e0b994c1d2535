//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use deskbot_core::datakit::{self, CollectConfig};
use deskbot_core::evalbench::{self, EvalConfig, ExpertPolicy, Policy, Timing};
use deskbot_core::experiment::{self, PipelineConfig};
use deskbot_core::firmware;
use deskbot_core::follow::{self, FollowConfig, GroundTruthSource, ReplaySource};
use deskbot_core::nn::{self, count_params, PolicyArchitecture, TrainConfig, CIL_PARAMS, PILOTNET_PARAMS};
use deskbot_core::sim::route::builtin_route;
use deskbot_core::sim::sensors::DetectionNoise;
use serde::de::DeserializeOwned;

use crate::server;
use crate::session::{load_policy, Mode, SessionConfig};

#[derive(Debug, Parser)]
#[command(name = "deskbot", version, about = "Desk-scale robot simulator, data collection, training and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file for the subcommand; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Serve the simulator over a websocket (`/ws`, `/health`).
    Sim(SimArgs),
    /// Record one scripted-expert session.
    Collect(CollectArgs),
    /// Train the driving policy on recorded sessions.
    Train(TrainArgs),
    /// Benchmark a policy on an evaluation route and write report.md/json.
    Eval(EvalArgs),
    /// Run one person-following episode.
    Follow(FollowArgs),
    /// Print parameter counts of the policy and the reference networks.
    Params(ParamsArgs),
    /// Feed random lines to the firmware parser.
    ProtoFuzz(FuzzArgs),
    /// Collect, train and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Built-in route name (R1, R2, R3, EVAL1, EVAL2).
    #[arg(long)]
    pub route: Option<String>,
    /// Route document (JSON) to load instead of a built-in route.
    #[arg(long)]
    pub route_file: Option<PathBuf>,
    /// Network weights (.obnw) for the policy.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Architecture JSON; defaults to arch.json next to the weights.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Steering-noise injection.
    #[arg(long, value_enum)]
    pub noise: Option<Switch>,
    /// Scatter obstacles along the route.
    #[arg(long, value_enum)]
    pub obstacles: Option<Switch>,
    /// Address to bind.
    #[arg(long)]
    pub host: Option<String>,
    /// Port to bind (1024 or above).
    #[arg(long)]
    pub port: Option<u16>,
    /// Step unpaced once a client connects, and exit when the session ends.
    #[arg(long)]
    pub headless: bool,
    /// Collection length in collect mode.
    #[arg(long)]
    pub minutes: Option<f64>,
    /// Directory of static UI files served at `/`.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Built-in route name.
    #[arg(long)]
    pub route: Option<String>,
    /// Session length in simulated minutes.
    #[arg(long)]
    pub minutes: Option<f64>,
    /// Steering-noise injection.
    #[arg(long, value_enum)]
    pub noise: Option<Switch>,
    /// Scatter obstacles along the route.
    #[arg(long, value_enum)]
    pub obstacles: Option<Switch>,
    /// Draw both wheel biases uniformly from [lo, hi].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub randomize_bias: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Session directories, or directories containing them.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Input width the images are resized to.
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    /// Input height the images are resized to.
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Minibatch size.
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimingArg {
    Model,
    Wall,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Evaluation route.
    #[arg(long, default_value = "EVAL1")]
    pub route: String,
    /// Network weights; the scripted expert is evaluated when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Architecture JSON; defaults to arch.json next to the weights.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Number of trials, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    /// Inference time from the MAC model or measured wall clock.
    #[arg(long, value_enum)]
    pub timing: Option<TimingArg>,
    /// Override the body's wheel biases.
    #[arg(long, num_args = 2, value_names = ["LEFT", "RIGHT"])]
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FollowWorld {
    Looping,
    Stationary,
}

#[derive(Debug, Args)]
pub struct FollowArgs {
    /// World the person walks in.
    #[arg(long, value_enum, default_value = "looping")]
    pub world: FollowWorld,
    /// Episode length in simulated seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Detections as JSONL rows instead of ground truth.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Write the per-frame trace as well.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Input width; defaults to 256.
    #[arg(long)]
    pub width: Option<usize>,
    /// Input height; defaults to 96.
    #[arg(long)]
    pub height: Option<usize>,
    /// Print per-layer counts.
    #[arg(long)]
    pub layers: bool,
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    /// Number of random lines.
    #[arg(long, default_value_t = 1_000_000)]
    pub lines: u64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minutes of demonstrations to collect.
    #[arg(long)]
    pub minutes: Option<f64>,
}

/// Parses `argv` and runs it. Exit codes: 0 success, 1 runtime error,
/// 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Cmd::Sim(a) => sim(common, a),
        Cmd::Collect(a) => collect(common, a),
        Cmd::Train(a) => train(common, a),
        Cmd::Eval(a) => eval(common, a),
        Cmd::Follow(a) => follow_cmd(common, a),
        Cmd::Params(a) => {
            print!("{}", params_table(a.width, a.height, a.layers));
            Ok(())
        }
        Cmd::ProtoFuzz(a) => {
            let r = firmware::fuzz(a.lines, common.seed.unwrap_or(0));
            print_json(&r)?;
            if !r.is_clean() {
                bail!("fuzzing found {} crashes, {} round-trip failures, {} state leaks", r.crashes, r.roundtrip_failures, r.state_leaks);
            }
            Ok(())
        }
        Cmd::Pipeline(a) => pipeline(common, a),
    }
}

/// Layer table and totals for the default architecture at the given input.
pub fn params_table(width: Option<usize>, height: Option<usize>, layers: bool) -> String {
    let base = PolicyArchitecture::default();
    let arch = base.clone().with_input(width.unwrap_or(base.width), height.unwrap_or(base.height));
    let ours = count_params(&arch);
    let mut s = String::new();
    if layers {
        let net = nn::Network::<f32>::init(arch.clone(), 0).expect("default architecture is valid");
        s.push_str(&format!("{:<20} {:>16} {:>10}\n", "layer", "shape", "params"));
        for p in &net.params.params {
            let shape = p.value.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            s.push_str(&format!("{:<20} {:>16} {:>10}\n", p.name, shape, p.value.len()));
        }
        s.push('\n');
    }
    s.push_str(&format!("input {}x{}x{}\n", arch.width, arch.height, arch.channels));
    s.push_str(&format!("{:<10} {:>12} {:>8}\n", "model", "params", ""));
    for (name, n) in [("Ours", ours), ("PilotNet", PILOTNET_PARAMS), ("CIL", CIL_PARAMS)] {
        s.push_str(&format!("{:<10} {:>12} {:>7.1}M\n", name, n, n as f64 / 1e6));
    }
    s
}

fn sim(common: &Common, a: SimArgs) -> Result<()> {
    let mut cfg: SessionConfig = read_config(common.config.as_deref())?;
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.route {
        cfg.route = v;
    }
    if let Some(v) = a.route_file {
        cfg.sim_config = Some(v);
    }
    if let Some(v) = a.weights {
        cfg.weights = Some(v);
    }
    if let Some(v) = a.arch {
        cfg.arch = Some(v);
    }
    if let Some(v) = a.noise {
        cfg.noise = v.into();
    }
    if let Some(v) = a.obstacles {
        cfg.obstacles = v.into();
    }
    if let Some(v) = a.host {
        cfg.host = v;
    }
    if let Some(v) = a.port {
        cfg.port = v;
    }
    if let Some(v) = a.minutes {
        cfg.minutes = v;
    }
    if a.ui.is_some() {
        cfg.ui_dir = a.ui;
    }
    cfg.headless |= a.headless;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let mut handle = server::start(cfg.clone()).await?;
        eprintln!("serving {} mode on ws://{}/ws", cfg.mode.as_str(), handle.addr);
        if cfg.headless {
            tokio::select! {
                _ = handle.finished() => {}
                _ = tokio::signal::ctrl_c() => {}
            }
        } else {
            tokio::signal::ctrl_c().await?;
        }
        handle.shutdown().await?;
        Ok(())
    })
}

fn collect(common: &Common, a: CollectArgs) -> Result<()> {
    let mut cfg: CollectConfig = read_config(common.config.as_deref())?;
    if let Some(v) = a.route {
        cfg.route = v;
    }
    if let Some(v) = a.minutes {
        cfg.minutes = v;
    }
    if let Some(v) = a.noise {
        cfg.noise = v.into();
    }
    if let Some(v) = a.obstacles {
        cfg.obstacles = v.into();
    }
    if let Some(v) = a.randomize_bias {
        cfg.randomize_bias = Some((v[0], v[1]));
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let route = builtin_route(&cfg.route).with_context(|| format!("unknown route {}", cfg.route))?;
    let out = out_dir(common, "session");
    let summary = datakit::collect(&route, &cfg, &out)?;
    print_json(&summary.meta)?;
    Ok(())
}

/// Expands each path to itself if it holds a manifest, else to its
/// immediate subdirectories that do, sorted by name.
pub fn session_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join("manifest.jsonl").is_file() {
            out.push(p.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = std::fs::read_dir(p)
            .with_context(|| format!("reading {}", p.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("manifest.jsonl").is_file())
            .collect();
        if subs.is_empty() {
            bail!("no sessions under {}", p.display());
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

fn train(common: &Common, a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = read_config(common.config.as_deref())?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let dirs = session_dirs(&a.data)?;
    let (train_set, val_set) = datakit::load_dataset(&dirs, cfg.seed, a.width, a.height)?;
    eprintln!("{} sessions, {} train / {} val samples", dirs.len(), train_set.len(), val_set.len());
    let arch = PolicyArchitecture::default().with_input(a.width, a.height);
    let outcome = nn::train::train_with(&train_set, &val_set, arch.clone(), &cfg, &mut |e| {
        eprintln!(
            "epoch {:>3}  train {:.5}  val {:.5}  within {:.3}  direction {:.3}",
            e.epoch, e.train_loss, e.val_loss, e.within_threshold, e.direction_match
        );
    })?;
    let out = out_dir(common, "model");
    std::fs::create_dir_all(&out)?;
    nn::io::save(&outcome.network, &out.join("weights.obnw"))?;
    std::fs::write(out.join("arch.json"), serde_json::to_string_pretty(&arch)? + "\n")?;
    std::fs::write(out.join("history.json"), serde_json::to_string_pretty(&outcome.history)? + "\n")?;
    eprintln!("best epoch {}; wrote {}", outcome.best_epoch, out.display());
    Ok(())
}

fn eval(common: &Common, a: EvalArgs) -> Result<()> {
    let mut cfg: EvalConfig = read_config(common.config.as_deref())?;
    if let Some(t) = a.timing {
        cfg.timing = match t {
            TimingArg::Model => Timing::Model,
            TimingArg::Wall => Timing::Wall,
        };
    }
    if let Some(b) = a.bias {
        cfg.body.bias_l = b[0];
        cfg.body.bias_r = b[1];
    }
    let route = builtin_route(&a.route).with_context(|| format!("unknown route {}", a.route))?;
    let mut policy: Box<dyn Policy> = match &a.weights {
        Some(w) => Box::new(load_policy(w, a.arch.as_deref())?),
        None => Box::new(ExpertPolicy::default()),
    };
    let result = evalbench::run_benchmark(&route, policy.as_mut(), &cfg, a.trials, common.seed.unwrap_or(0))?;
    let out = out_dir(common, "report");
    evalbench::write_report(&out, std::slice::from_ref(&result))?;
    print!("{}", evalbench::report_markdown(std::slice::from_ref(&result))?.lines().take(3).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}

fn follow_cmd(common: &Common, a: FollowArgs) -> Result<()> {
    let mut cfg: FollowConfig = read_config(common.config.as_deref())?;
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    let seed = common.seed.unwrap_or(0);
    let mut world = match a.world {
        FollowWorld::Looping => follow::looping_person_world(seed),
        FollowWorld::Stationary => follow::stationary_person_world(4.0, 1.0, seed),
    };
    let result = match &a.replay {
        Some(p) => follow::follow_episode(&mut world, &mut ReplaySource::open(p)?, &cfg)?,
        None => follow::follow_episode(&mut world, &mut GroundTruthSource::new(DetectionNoise::off()), &cfg)?,
    };
    let out = out_dir(common, "follow");
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&result.metrics)? + "\n")?;
    if a.trace {
        let mut text = String::new();
        for s in &result.trace {
            text.push_str(&serde_json::to_string(s)?);
            text.push('\n');
        }
        std::fs::write(out.join("trace.jsonl"), text)?;
    }
    print_json(&result.metrics)
}

fn pipeline(common: &Common, a: PipelineArgs) -> Result<()> {
    let mut cfg: PipelineConfig = read_config(common.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = a.minutes {
        cfg.minutes = m;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = out_dir(common, "pipeline");
    let (report, net) = experiment::run_pipeline(&cfg, &out, &mut |e| {
        eprintln!("epoch {:>3}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss);
    })?;
    nn::io::save(&net, &out.join("weights.obnw"))?;
    std::fs::write(out.join("arch.json"), serde_json::to_string_pretty(&net.arch)? + "\n")?;
    evalbench::write_report(&out, std::slice::from_ref(&report.benchmark))?;
    std::fs::write(out.join("pipeline.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let s = &report.benchmark.summary;
    println!(
        "distance {:.1}%  success {:.1}%  collisions {:.2}/trial",
        s.distance_pct.mean, s.success_pct.mean, s.collisions.mean
    );
    Ok(())
}
