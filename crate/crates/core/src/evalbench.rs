//! Segment-based route benchmark: distance, success, collisions and
//! throughput, aggregated over seeded trials and written as markdown/JSON.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::camera::{render_camera, CameraConfig, CameraFrame};
use crate::sim::expert::{ExpertConfig, ScriptedExpert};
use crate::sim::route::{RouteSpec, Segment, SegmentProgress, SEGMENT_LENGTH};
use crate::sim::world::{BodyParams, World};
use crate::sim::SimError;
use crate::types::{Action, Command};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("policy failed: {0}")]
    Policy(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("no results to report")]
    Empty,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// What a policy sees each control tick.
pub struct Observation<'a> {
    pub world: &'a World,
    pub segment: &'a Segment,
    pub command: Command,
    /// Rendered only when the policy asks for a camera.
    pub frame: Option<&'a CameraFrame>,
}

pub trait Policy {
    fn name(&self) -> String;
    fn camera(&self) -> Option<CameraConfig> {
        None
    }
    fn reset(&mut self) {}
    fn act(&mut self, obs: &Observation) -> Result<Action, EvalError>;
    /// Multiply-accumulates per inference, used by modelled timing.
    fn macs_per_step(&self) -> u64 {
        0
    }
    fn param_count(&self) -> Option<usize> {
        None
    }
}

/// The scripted expert driving as a policy.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    inner: ScriptedExpert,
}

impl ExpertPolicy {
    pub fn new(cfg: ExpertConfig) -> Self {
        ExpertPolicy {
            inner: ScriptedExpert::new(cfg),
        }
    }
}

impl Default for ExpertPolicy {
    fn default() -> Self {
        Self::new(ExpertConfig::default())
    }
}

impl Policy for ExpertPolicy {
    fn name(&self) -> String {
        "expert".into()
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    fn act(&mut self, obs: &Observation) -> Result<Action, EvalError> {
        Ok(self.inner.act(obs.world, obs.segment)?.action)
    }
}

/// Emits the same action forever.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn name(&self) -> String {
        format!("constant({}, {})", self.0.left, self.0.right)
    }

    fn act(&mut self, _obs: &Observation) -> Result<Action, EvalError> {
        Ok(self.0)
    }
}

/// How inference time is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    /// Multiply-accumulates divided by a fixed reference throughput;
    /// reproducible across machines.
    #[default]
    Model,
    /// Measured wall-clock time.
    Wall,
}

/// Reference throughput for modelled timing (multiply-accumulates per second).
pub const REFERENCE_MACS_PER_SEC: f64 = 1.0e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Control period in seconds.
    pub dt: f64,
    pub substeps: usize,
    pub timeout_s: f64,
    pub wedge_speed: f64,
    pub wedge_time_s: f64,
    pub body: BodyParams,
    pub timing: Timing,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dt: 0.05,
            substeps: 2,
            timeout_s: 60.0,
            wedge_speed: 0.02,
            wedge_time_s: 3.0,
            body: BodyParams::default(),
            timing: Timing::Model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Goal,
    WrongBranch,
    Wedged,
    Timeout,
    PolicyError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    pub segment: usize,
    pub maneuvers: Vec<Command>,
    pub distance_m: f64,
    pub success: bool,
    pub collisions: u32,
    pub mean_inference_ms: f64,
    pub termination: Termination,
    pub duration_s: f64,
}

/// Drives one segment from its start marker until a terminal event.
pub fn run_segment(
    route: &RouteSpec,
    index: usize,
    policy: &mut dyn Policy,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<SegmentResult, EvalError> {
    let seg = &route.segments[index];
    cfg.body.validate()?;
    let mut world =
        World::new(route.grid_for(index), seg.start, cfg.body.clone(), seed).with_entities(route.entities.clone());
    policy.reset();
    let camera = policy.camera();
    let mut best = 0.0f64;
    let mut collisions = 0u32;
    let mut was_colliding = false;
    let mut contact_seen = false;
    let mut slow_time = 0.0;
    let mut infer_total = 0.0;
    let mut infer_n = 0u32;
    let sub_dt = cfg.dt / cfg.substeps.max(1) as f64;
    let termination = loop {
        if world.time >= cfg.timeout_s - 1e-9 {
            break Termination::Timeout;
        }
        let p = world.robot.pose;
        let command = seg.command_for_position(p.x, p.y);
        let frame = camera.as_ref().map(|c| render_camera(&world, c));
        let obs = Observation {
            world: &world,
            segment: seg,
            command,
            frame: frame.as_ref(),
        };
        let t0 = Instant::now();
        let action = policy.act(&obs);
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        infer_total += match cfg.timing {
            Timing::Model => policy.macs_per_step() as f64 / REFERENCE_MACS_PER_SEC * 1e3,
            Timing::Wall => wall_ms,
        };
        infer_n += 1;
        let action = match action {
            Ok(a) if a.is_finite() => a,
            _ => break Termination::PolicyError,
        };
        let mut collided = false;
        for _ in 0..cfg.substeps.max(1) {
            collided |= world.step(action, sub_dt)?.collided;
        }
        if collided && !was_colliding {
            collisions += 1;
        }
        was_colliding = collided;
        contact_seen |= collided;

        let p = world.robot.pose;
        match seg.progress(p.x, p.y) {
            SegmentProgress::OnRoute(d) => best = best.max(d),
            SegmentProgress::WrongBranch(k) => {
                best = seg.crossings[k].entry_distance;
                break Termination::WrongBranch;
            }
        }
        if best >= SEGMENT_LENGTH - 1e-9 {
            break Termination::Goal;
        }
        // slow while pinned after a contact
        if contact_seen && world.robot.speed < cfg.wedge_speed {
            slow_time += cfg.dt;
            if slow_time >= cfg.wedge_time_s - 1e-9 {
                break Termination::Wedged;
            }
        } else {
            slow_time = 0.0;
        }
    };
    Ok(SegmentResult {
        segment: index,
        maneuvers: seg.maneuvers().to_vec(),
        distance_m: best.clamp(0.0, SEGMENT_LENGTH),
        success: termination == Termination::Goal,
        collisions,
        mean_inference_ms: if infer_n > 0 { infer_total / infer_n as f64 } else { 0.0 },
        termination,
        duration_s: world.time,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub segments: Vec<SegmentResult>,
    /// Percent of the route length driven.
    pub distance_pct: f64,
    pub success_pct: f64,
    /// Collisions summed over the trial's segments.
    pub collisions: f64,
    pub mean_inference_ms: f64,
    /// `None` when inference takes no measurable time.
    pub fps: Option<f64>,
}

impl TrialResult {
    pub fn from_segments(seed: u64, segments: Vec<SegmentResult>) -> Self {
        let n = segments.len().max(1) as f64;
        let distance_pct = 100.0 * segments.iter().map(|s| s.distance_m).sum::<f64>() / (n * SEGMENT_LENGTH);
        let success_pct = 100.0 * segments.iter().filter(|s| s.success).count() as f64 / n;
        let collisions = segments.iter().map(|s| s.collisions as f64).sum();
        let mean_inference_ms = segments.iter().map(|s| s.mean_inference_ms).sum::<f64>() / n;
        let fps = (mean_inference_ms > 0.0).then(|| 1000.0 / mean_inference_ms);
        TrialResult {
            seed,
            segments,
            distance_pct,
            success_pct,
            collisions,
            mean_inference_ms,
            fps,
        }
    }
}

pub fn run_trial(route: &RouteSpec, policy: &mut dyn Policy, cfg: &EvalConfig, seed: u64) -> Result<TrialResult, EvalError> {
    let segments = (0..route.segments.len())
        .map(|i| run_segment(route, i, policy, cfg, seed.wrapping_mul(1000).wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrialResult::from_segments(seed, segments))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len();
    if n == 0 {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub distance_pct: MeanStd,
    pub success_pct: MeanStd,
    pub collisions: MeanStd,
    pub fps: Option<MeanStd>,
    pub params: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub schema: u32,
    pub route: String,
    pub policy: String,
    pub timing: Timing,
    pub trials: Vec<TrialResult>,
    pub summary: BenchmarkSummary,
}

pub fn summarize(trials: &[TrialResult], params: Option<usize>) -> BenchmarkSummary {
    let col = |f: &dyn Fn(&TrialResult) -> f64| mean_std(&trials.iter().map(f).collect::<Vec<_>>());
    let fps: Option<Vec<f64>> = trials.iter().map(|t| t.fps).collect();
    BenchmarkSummary {
        distance_pct: col(&|t| t.distance_pct),
        success_pct: col(&|t| t.success_pct),
        collisions: col(&|t| t.collisions),
        fps: fps.map(|v| mean_std(&v)),
        params,
    }
}

/// Runs `trials` trials with seeds `seed, seed+1, ...`.
pub fn run_benchmark(
    route: &RouteSpec,
    policy: &mut dyn Policy,
    cfg: &EvalConfig,
    trials: usize,
    seed: u64,
) -> Result<BenchmarkResult, EvalError> {
    let results = (0..trials as u64)
        .map(|k| run_trial(route, policy, cfg, seed.wrapping_add(k)))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&results, policy.param_count());
    Ok(BenchmarkResult {
        schema: 1,
        route: route.name.clone(),
        policy: policy.name(),
        timing: cfg.timing,
        trials: results,
        summary,
    })
}

fn fmt_ms(m: &MeanStd, unit: &str) -> String {
    format!("{:.0}±{:.0}{unit}", m.mean, m.std)
}

fn fmt_params(p: Option<usize>) -> String {
    match p {
        Some(n) if n >= 1_000_000 => format!("{:.1}M", n as f64 / 1e6),
        Some(n) => n.to_string(),
        None => "n/a".into(),
    }
}

pub fn report_markdown(results: &[BenchmarkResult]) -> Result<String, EvalError> {
    if results.is_empty() || results.iter().any(|r| r.trials.is_empty()) {
        return Err(EvalError::Empty);
    }
    let mut md = String::new();
    md.push_str("| Policy | Route | Distance ↑ | Success ↑ | Collisions ↓ | FPS ↑ | Params ↓ |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    for r in results {
        let s = &r.summary;
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {:.1}±{:.1} | {} | {} |",
            r.policy,
            r.route,
            fmt_ms(&s.distance_pct, "%"),
            fmt_ms(&s.success_pct, "%"),
            s.collisions.mean,
            s.collisions.std,
            s.fps.as_ref().map_or("n/a".to_string(), |f| fmt_ms(f, "")),
            fmt_params(s.params)
        );
    }
    let _ = writeln!(md);
    for r in results {
        let _ = writeln!(md, "Trials for {} on {} ({} timing):", r.policy, r.route, match r.timing {
            Timing::Model => "modelled",
            Timing::Wall => "wall-clock",
        });
        let _ = writeln!(md);
        md.push_str("| Seed | Segment | Maneuvers | Distance (m) | Success | Collisions | End |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for t in &r.trials {
            for s in &t.segments {
                let m: Vec<&str> = s.maneuvers.iter().map(|c| c.as_str()).collect();
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {:.2} | {} | {} | {:?} |",
                    t.seed,
                    s.segment,
                    m.join("+"),
                    s.distance_m,
                    if s.success { "yes" } else { "no" },
                    s.collisions,
                    s.termination
                );
            }
        }
        let _ = writeln!(md);
    }
    Ok(md)
}

pub fn report_json(results: &[BenchmarkResult]) -> Result<String, EvalError> {
    if results.is_empty() || results.iter().any(|r| r.trials.is_empty()) {
        return Err(EvalError::Empty);
    }
    let mut s = serde_json::to_string_pretty(results).map_err(|e| EvalError::Policy(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes `report.md` and `report.json` into `dir`.
pub fn write_report(dir: &Path, results: &[BenchmarkResult]) -> Result<(), EvalError> {
    let md = report_markdown(results)?;
    let json = report_json(results)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.md"), md)?;
    std::fs::write(dir.join("report.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::route::builtin_route;

    fn seg_result(d: f64, ok: bool) -> SegmentResult {
        SegmentResult {
            segment: 0,
            maneuvers: vec![Command::Straight],
            distance_m: d,
            success: ok,
            collisions: 0,
            mean_inference_ms: 10.0,
            termination: if ok { Termination::Goal } else { Termination::WrongBranch },
            duration_s: 1.0,
        }
    }

    #[test]
    fn aggregation_arithmetic() {
        let segs: Vec<_> = [10.0, 10.0, 5.0, 10.0, 10.0, 10.0]
            .iter()
            .map(|&d| seg_result(d, d == 10.0))
            .collect();
        let t = TrialResult::from_segments(0, segs);
        assert_eq!(t.distance_pct.round(), 92.0);
        assert_eq!(t.success_pct.round(), 83.0);
        assert_eq!(t.fps, Some(100.0));
    }

    #[test]
    fn sample_std() {
        let m = mean_std(&[100.0, 100.0, 75.0]);
        assert!((m.mean - 91.666_666_666).abs() < 1e-6);
        assert_eq!(m.std.round(), 14.0);
        assert_eq!(mean_std(&[3.0, 3.0, 3.0]).std, 0.0);
    }

    #[test]
    fn stop_policy_times_out_at_zero() {
        let r = builtin_route("EVAL1").unwrap();
        let cfg = EvalConfig {
            timeout_s: 2.0,
            ..Default::default()
        };
        let res = run_segment(&r, 0, &mut ConstantPolicy(Action::STOP), &cfg, 0).unwrap();
        assert_eq!(res.distance_m, 0.0);
        assert!(!res.success);
        assert_eq!(res.termination, Termination::Timeout);
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(report_markdown(&[]).is_err());
        assert!(report_json(&[]).is_err());
    }
}
