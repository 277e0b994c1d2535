//! Minimal tensor and reverse-mode autodiff engine with the driving
//! policy network, its weighted loss, Adam, augmentation and training.

pub mod adam;
pub mod arch;
pub mod augment;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod policy;
pub mod real;
pub mod tape;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use arch::{count_params, ConvSpec, Network, PolicyArchitecture, CIL_PARAMS, PILOTNET_PARAMS};
pub use augment::{AugmentConfig, AugmentDraw};
pub use loss::{policy_loss, validation_metrics, LossParams, ValidationMetrics};
pub use policy::NetPolicy;
pub use real::Real;
pub use tape::{Graph, Mode, Param, ParamStore, Var};
pub use tensor::Tensor;
pub use train::{select_checkpoint, train, EpochStats, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("not a weight file")]
    BadMagic,
    #[error("unsupported weight format version {0}")]
    Version(u16),
    #[error("architecture hash {found:016x} does not match {expected:016x}")]
    ArchMismatch { expected: u64, found: u64 },
    #[error("checksum mismatch")]
    Checksum,
    #[error("weight file truncated")]
    Truncated,
    #[error("weight file malformed: {0}")]
    Malformed(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(#[from] serde_json::Error),
}
