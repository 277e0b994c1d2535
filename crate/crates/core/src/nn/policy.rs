//! The trained network as a benchmark policy.

use crate::datakit::resize_rgb;
use crate::evalbench::{EvalError, Observation, Policy};
use crate::sim::camera::CameraConfig;
use crate::types::Action;

use super::arch::{count_params, Network};
use super::tape::Mode;
use super::tensor::Tensor;

/// Renders at the capture resolution and box-filters to the network input,
/// as the dataset loader does.
#[derive(Debug, Clone)]
pub struct NetPolicy {
    pub net: Network<f32>,
    pub camera: CameraConfig,
    pub label: String,
}

impl NetPolicy {
    pub fn new(net: Network<f32>, label: impl Into<String>) -> Self {
        NetPolicy {
            net,
            camera: CameraConfig::default(),
            label: label.into(),
        }
    }

    /// Stored-form output for one RGB8 frame.
    pub fn infer(&self, rgb: &[u8], width: usize, height: usize, command: crate::types::Command) -> Result<[f32; 2], EvalError> {
        let a = &self.net.arch;
        let small = resize_rgb(rgb, width, height, a.width, a.height);
        let img = Tensor {
            shape: vec![1, a.height, a.width, 3],
            data: small.iter().map(|&b| b as f32 / 255.0).collect(),
        };
        let cmd = Tensor {
            shape: vec![1, 3],
            data: command.one_hot().to_vec(),
        };
        let y = self
            .net
            .forward(img, cmd, Mode::Eval)
            .map_err(|e| EvalError::Policy(e.to_string()))?;
        Ok([y.data[0], y.data[1]])
    }
}

impl Policy for NetPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn camera(&self) -> Option<CameraConfig> {
        Some(self.camera.clone())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action, EvalError> {
        let frame = obs.frame.ok_or_else(|| EvalError::Policy("no camera frame".into()))?;
        let rgb = frame.to_rgb8();
        let p = self.infer(&rgb, frame.width, frame.height, obs.command)?;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(EvalError::Policy("non-finite network output".into()));
        }
        let stored = [p[0].clamp(0.0, 1.0) as f64, p[1].clamp(0.0, 1.0) as f64];
        Ok(Action::from_stored(stored))
    }

    fn macs_per_step(&self) -> u64 {
        self.net.arch.macs()
    }

    fn param_count(&self) -> Option<usize> {
        Some(count_params(&self.net.arch))
    }
}
