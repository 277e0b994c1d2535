//! Collect, train and evaluate in one call: the full learning pipeline
//! from expert demonstrations to a benchmarked network policy.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datakit::{self, CollectConfig, DataError};
use crate::evalbench::{run_benchmark, BenchmarkResult, EvalConfig, EvalError};
use crate::nn::{self, EpochStats, NetPolicy, NnError, PolicyArchitecture, TrainConfig};
use crate::sim::route::builtin_route;
use crate::sim::world::BodyParams;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unknown route {0}")]
    UnknownRoute(String),
    #[error("could not collect {0} valid sessions")]
    Collection(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub routes: Vec<String>,
    /// Total demonstration time, split evenly over sessions.
    pub minutes: f64,
    pub sessions: usize,
    pub noise: bool,
    pub obstacles: bool,
    pub body: BodyParams,
    pub randomize_bias: Option<(f64, f64)>,
    pub width: usize,
    pub height: usize,
    pub train: TrainConfig,
    pub eval_route: String,
    pub eval_body: BodyParams,
    pub trials: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            routes: vec!["R2".into(), "R3".into()],
            minutes: 20.0,
            sessions: 10,
            noise: true,
            obstacles: false,
            body: BodyParams::default(),
            randomize_bias: None,
            width: 128,
            height: 48,
            train: TrainConfig {
                epochs: 30,
                ..Default::default()
            },
            eval_route: "EVAL1".into(),
            eval_body: BodyParams::default(),
            trials: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub sessions: Vec<PathBuf>,
    pub skipped_sessions: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub benchmark: BenchmarkResult,
    pub collect_s: f64,
    pub train_s: f64,
    pub eval_s: f64,
}

/// Records `cfg.sessions` valid sessions, cycling over the routes. A seed
/// whose session aborts is replaced by the next one.
pub fn collect_sessions(cfg: &PipelineConfig, dir: &Path) -> Result<(Vec<PathBuf>, usize), ExperimentError> {
    let per = cfg.minutes / cfg.sessions.max(1) as f64;
    let mut out = Vec::new();
    let mut skipped = 0;
    let mut k = 0u64;
    while out.len() < cfg.sessions {
        if skipped > 2 * cfg.sessions + 4 {
            return Err(ExperimentError::Collection(cfg.sessions));
        }
        let name = &cfg.routes[out.len() % cfg.routes.len()];
        let route = builtin_route(name).ok_or_else(|| ExperimentError::UnknownRoute(name.clone()))?;
        let ccfg = CollectConfig {
            route: name.clone(),
            minutes: per,
            noise: cfg.noise,
            obstacles: cfg.obstacles,
            seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(k),
            body: cfg.body.clone(),
            randomize_bias: cfg.randomize_bias,
            ..Default::default()
        };
        let path = dir.join(format!("session_{k:03}"));
        k += 1;
        match datakit::collect(&route, &ccfg, &path) {
            Ok(s) => out.push(s.dir),
            Err(e @ DataError::Io { .. }) => return Err(e.into()),
            Err(_) => skipped += 1,
        }
    }
    Ok((out, skipped))
}

/// Collects demonstrations, trains a network and benchmarks it.
pub fn run_pipeline(cfg: &PipelineConfig, dir: &Path, on_epoch: &mut dyn FnMut(&EpochStats)) -> Result<(PipelineReport, nn::Network<f32>), ExperimentError> {
    let t0 = Instant::now();
    let (sessions, skipped) = collect_sessions(cfg, &dir.join("data"))?;
    let collect_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let (train, val) = datakit::load_dataset(&sessions, cfg.seed, cfg.width, cfg.height)?;
    let arch = PolicyArchitecture::default().with_input(cfg.width, cfg.height);
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    let outcome = nn::train::train_with(&train, &val, arch, &tcfg, on_epoch)?;
    let train_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let route = builtin_route(&cfg.eval_route).ok_or_else(|| ExperimentError::UnknownRoute(cfg.eval_route.clone()))?;
    let mut policy = NetPolicy::new(outcome.network.clone(), "network");
    let ecfg = EvalConfig {
        body: cfg.eval_body.clone(),
        ..Default::default()
    };
    let benchmark = run_benchmark(&route, &mut policy, &ecfg, cfg.trials, cfg.seed)?;
    let eval_s = t2.elapsed().as_secs_f64();

    Ok((
        PipelineReport {
            sessions,
            skipped_sessions: skipped,
            train_samples: train.len(),
            val_samples: val.len(),
            best_epoch: outcome.best_epoch,
            history: outcome.history,
            benchmark,
            collect_s,
            train_s,
            eval_s,
        },
        outcome.network,
    ))
}

/// Single-body versus randomized-body training, evaluated on a body
/// neither saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiBodyConfig {
    pub base: PipelineConfig,
    /// Range both wheel biases are drawn from per session.
    pub bias_range: (f64, f64),
    /// Wheel biases of the evaluation body.
    pub held_out: (f64, f64),
    pub seeds: Vec<u64>,
}

impl Default for MultiBodyConfig {
    fn default() -> Self {
        MultiBodyConfig {
            // six pipelines share one budget, so each gets less data and fewer epochs
            base: PipelineConfig {
                minutes: 8.0,
                sessions: 8,
                train: TrainConfig {
                    epochs: 12,
                    ..Default::default()
                },
                ..Default::default()
            },
            bias_range: (0.85, 1.15),
            held_out: (0.9, 1.1),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiBodyRun {
    pub seed: u64,
    pub single: BenchmarkResult,
    pub randomized: BenchmarkResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiBodyReport {
    pub runs: Vec<MultiBodyRun>,
    /// Mean success percentage over seeds.
    pub single_success: f64,
    pub randomized_success: f64,
}

/// Trains one policy on the default body and one on randomized bodies per
/// seed, and benchmarks both on the held-out body.
pub fn multi_body(cfg: &MultiBodyConfig, dir: &Path, on_epoch: &mut dyn FnMut(&EpochStats)) -> Result<MultiBodyReport, ExperimentError> {
    let mut eval_body = cfg.base.eval_body.clone();
    eval_body.bias_l = cfg.held_out.0;
    eval_body.bias_r = cfg.held_out.1;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let single_cfg = PipelineConfig {
            seed,
            randomize_bias: None,
            eval_body: eval_body.clone(),
            ..cfg.base.clone()
        };
        let randomized_cfg = PipelineConfig {
            randomize_bias: Some(cfg.bias_range),
            ..single_cfg.clone()
        };
        let (single, _) = run_pipeline(&single_cfg, &dir.join(format!("seed{seed}_single")), on_epoch)?;
        let (randomized, _) = run_pipeline(&randomized_cfg, &dir.join(format!("seed{seed}_randomized")), on_epoch)?;
        runs.push(MultiBodyRun {
            seed,
            single: single.benchmark,
            randomized: randomized.benchmark,
        });
    }
    let n = runs.len().max(1) as f64;
    Ok(MultiBodyReport {
        single_success: runs.iter().map(|r| r.single.summary.success_pct.mean).sum::<f64>() / n,
        randomized_success: runs.iter().map(|r| r.randomized.summary.success_pct.mean).sum::<f64>() / n,
        runs,
    })
}
