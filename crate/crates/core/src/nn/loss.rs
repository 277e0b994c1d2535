//! Steering-weighted action loss and the validation metrics used for
//! checkpoint selection.

use serde::{Deserialize, Serialize};

use super::real::Real;
use super::NnError;

/// Steering difference counted as "within threshold".
pub const STEERING_THRESHOLD: f64 = 0.1;
/// Steering magnitude below which the direction is zero.
pub const SIGN_DEADBAND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Weight floor for samples with zero steering.
    pub b: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams { b: 0.25 }
    }
}

/// Loss of one stored-form prediction against its target.
///
/// `w^2 (s_t - s_p)^2 + mean((a_t - a_p)^2)` with `s = a_l - a_r` and
/// `w = |s_t| + b`.
pub fn sample_loss<T: Real>(t: [T; 2], p: [T; 2], b: T) -> T {
    let st = t[0] - t[1];
    let sp = p[0] - p[1];
    let w = st.abs() + b;
    let ds = st - sp;
    let d0 = p[0] - t[0];
    let d1 = p[1] - t[1];
    w * w * ds * ds + (d0 * d0 + d1 * d1) / T::c(2.0)
}

/// Derivative of [`sample_loss`] with respect to the prediction.
pub fn sample_loss_grad<T: Real>(t: [T; 2], p: [T; 2], b: T) -> [T; 2] {
    let st = t[0] - t[1];
    let sp = p[0] - p[1];
    let w = st.abs() + b;
    let g = T::c(2.0) * w * w * (sp - st);
    [g + (p[0] - t[0]), -g + (p[1] - t[1])]
}

pub fn policy_loss(target: [f64; 2], pred: [f64; 2], params: &LossParams) -> f64 {
    sample_loss(target, pred, params.b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub within_threshold: f64,
    pub direction_match: f64,
    pub mean: f64,
}

fn sign(s: f64) -> i8 {
    if s.abs() < SIGN_DEADBAND {
        0
    } else if s > 0.0 {
        1
    } else {
        -1
    }
}

/// Rates over `(s_t, s_p)` pairs.
pub fn validation_metrics(pairs: &[(f64, f64)]) -> Result<ValidationMetrics, NnError> {
    if pairs.is_empty() {
        return Err(NnError::Empty("validation batch"));
    }
    let n = pairs.len() as f64;
    let within = pairs.iter().filter(|(t, p)| (t - p).abs() <= STEERING_THRESHOLD).count() as f64 / n;
    let dir = pairs.iter().filter(|(t, p)| sign(*t) == sign(*p)).count() as f64 / n;
    Ok(ValidationMetrics {
        within_threshold: within,
        direction_match: dir,
        mean: (within + dir) / 2.0,
    })
}
