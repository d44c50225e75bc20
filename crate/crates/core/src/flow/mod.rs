//! Flow-matching action expert.
//!
//! Noisy chunks follow the straight path `A_τ = τ·A + (1-τ)·ε` from noise
//! (`τ = 0`) to data (`τ = 1`). The network regresses the path velocity and
//! sampling integrates it with forward Euler from `A_0 ~ N(0, I)`.

pub mod autodiff;
pub mod checkpoint;
pub mod context;
pub mod matching;
pub mod net;
pub mod policy;
pub mod scaler;
pub mod train;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use context::{ContextEncoder, ContextSource, EncoderConfig};
pub use matching::{
    corrupt, fm_loss, integrate, integrate_from, target_field, ActionChunk, FlowSample, Observation,
    SignConvention, VelocityField, DEFAULT_INTEGRATION_STEPS,
};
pub use net::{NetConfig, NetInit, VectorFieldNet};
pub use policy::{demo_examples, fit_scaler, policy_net_config, train_policy, train_policy_with, FlowPolicy};
pub use scaler::ActionScaler;
pub use train::{loss_curve_csv, train, AdamW, TrainConfig, TrainExample, TrainOutput, Trainer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("flow time {0} outside [0, 1]")]
    InvalidTau(f64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub(crate) fn check_shape(expected: (usize, usize), got: (usize, usize)) -> Result<(), FlowError> {
    if expected == got {
        Ok(())
    } else {
        Err(FlowError::ShapeMismatch { expected, got })
    }
}
