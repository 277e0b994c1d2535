//! Mini-batch training with per-epoch validation and best-checkpoint
//! selection.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::arch::{Network, PolicyArchitecture};
use super::augment::{self, AugmentConfig, AugmentDraw};
use super::loss::{validation_metrics, LossParams};
use super::tape::{Graph, Mode};
use super::tensor::Tensor;
use super::NnError;
use crate::datakit::{Dataset, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub b: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            epochs: 100,
            batch: 64,
            b: LossParams::default().b,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, NnError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub within_threshold: f64,
    pub direction_match: f64,
    pub metric_mean: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    /// 1-based epoch of the selected checkpoint.
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Index of the entry with the highest metric average; ties go to the
/// earlier entry.
pub fn select_checkpoint(history: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &(a, b)) in history.iter().enumerate() {
        let m = (a + b) / 2.0;
        match best {
            Some((_, bm)) if m <= bm + 1e-12 => {}
            _ => best = Some((i, m)),
        }
    }
    best.map(|(i, _)| i)
}

/// Converts samples to network inputs, applying one draw per sample.
pub fn batch_tensors(
    samples: &[&Sample],
    width: usize,
    height: usize,
    draws: &[AugmentDraw],
) -> (Tensor<f32>, Tensor<f32>, Vec<f32>) {
    let n = samples.len();
    let per = width * height * 3;
    let mut images = Vec::with_capacity(n * per);
    let mut commands = Vec::with_capacity(n * 3);
    let mut targets = Vec::with_capacity(n * 2);
    for (s, d) in samples.iter().zip(draws) {
        let mut img: Vec<f32> = s.image.iter().map(|&b| b as f32 / 255.0).collect();
        let mut cmd = s.command;
        let mut t = s.target;
        augment::apply(&mut img, width, &mut cmd, &mut t, d);
        images.extend_from_slice(&img);
        commands.extend_from_slice(&cmd.one_hot());
        targets.extend_from_slice(&t);
    }
    (
        Tensor {
            shape: vec![n, height, width, 3],
            data: images,
        },
        Tensor {
            shape: vec![n, 3],
            data: commands,
        },
        targets,
    )
}

/// Eval-mode predictions for every sample, in order.
pub fn predict(net: &Network<f32>, data: &Dataset, batch: usize) -> Result<Vec<[f32; 2]>, NnError> {
    let mut out = Vec::with_capacity(data.samples.len());
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let draws = vec![AugmentDraw::IDENTITY; batch.max(1)];
    for chunk in refs.chunks(batch.max(1)) {
        let (img, cmd, _) = batch_tensors(chunk, data.width, data.height, &draws[..chunk.len()]);
        let y = net.forward(img, cmd, Mode::Eval)?;
        out.extend(y.data.chunks_exact(2).map(|p| [p[0], p[1]]));
    }
    Ok(out)
}

/// Validation loss and metrics.
pub fn evaluate(net: &Network<f32>, data: &Dataset, b: f64, batch: usize) -> Result<(f64, super::ValidationMetrics), NnError> {
    let preds = predict(net, data, batch)?;
    let mut loss = 0.0;
    let mut pairs = Vec::with_capacity(preds.len());
    for (s, p) in data.samples.iter().zip(&preds) {
        let t = [s.target[0] as f64, s.target[1] as f64];
        let p = [p[0] as f64, p[1] as f64];
        loss += super::loss::sample_loss(t, p, b);
        pairs.push((t[0] - t[1], p[0] - p[1]));
    }
    let m = validation_metrics(&pairs)?;
    Ok((loss / preds.len() as f64, m))
}

pub fn train(train: &Dataset, val: &Dataset, arch: PolicyArchitecture, cfg: &TrainConfig) -> Result<TrainOutcome, NnError> {
    train_with(train, val, arch, cfg, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    train: &Dataset,
    val: &Dataset,
    arch: PolicyArchitecture,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, NnError> {
    if train.samples.is_empty() {
        return Err(NnError::Empty("training set"));
    }
    if val.samples.is_empty() {
        return Err(NnError::Empty("validation set"));
    }
    for d in [train, val] {
        if (d.width, d.height) != (arch.width, arch.height) {
            return Err(NnError::Shape(format!(
                "dataset is {}x{}, network expects {}x{}",
                d.width, d.height, arch.width, arch.height
            )));
        }
    }
    if cfg.batch == 0 || cfg.epochs == 0 || !(cfg.b > 0.0) || !(cfg.lr > 0.0) {
        return Err(NnError::Shape("batch, epochs, b and lr must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::<f32>::init(arch, rng.gen())?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &net.params,
    );
    let (w, h) = (train.width, train.height);
    let mut order: Vec<usize> = (0..train.samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Network<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let draws: Vec<AugmentDraw> = samples.iter().map(|_| AugmentDraw::sample(&cfg.augment, &mut rng)).collect();
            let (img, cmd, targets) = batch_tensors(&samples, w, h, &draws);
            let mut g = Graph::new(&net.params, Mode::Train { seed: rng.gen() });
            let xi = g.input(img, false);
            let xc = g.input(cmd, false);
            let out = net.build(&mut g, xi, xc)?;
            let loss = g.policy_loss(out, &targets, cfg.b as f32)?;
            let lv = g.value(loss).data[0] as f64;
            if !lv.is_finite() {
                return Err(NnError::Divergence { epoch, batch: bi });
            }
            let grads = g.backward(loss);
            let updates = g.take_updates();
            drop(g);
            net.params.apply_updates(updates);
            opt.update(&mut net.params, &grads.params)?;
            loss_sum += lv * samples.len() as f64;
            count += samples.len();
        }
        let (val_loss, m) = evaluate(&net, val, cfg.b, cfg.batch)?;
        if !val_loss.is_finite() {
            return Err(NnError::Divergence { epoch, batch: 0 });
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / count as f64,
            val_loss,
            within_threshold: m.within_threshold,
            direction_match: m.direction_match,
            metric_mean: m.mean,
        };
        on_epoch(&stats);
        history.push(stats);
        let pairs: Vec<(f64, f64)> = history.iter().map(|s| (s.within_threshold, s.direction_match)).collect();
        if select_checkpoint(&pairs) == Some(epoch - 1) {
            best = Some((epoch, net.clone()));
        }
    }
    let (best_epoch, network) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        network,
        best_epoch,
        history,
    })
}
