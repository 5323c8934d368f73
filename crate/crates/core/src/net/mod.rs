//! Minimal 1-D CNN engine: forward pass, exact reverse-mode gradients and
//! minibatch training for the fixed conv/BN/FC architecture.

mod arch;
mod checkpoint;
mod layers;
mod model;
mod train;

pub use arch::{ArchConfig, BnRunning, Layout, Lengths, NetworkParams};
pub use checkpoint::{load_checkpoint, quantize_params, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub(crate) use layers::global_max;
pub use layers::softmax;
pub use model::{
    argmax, batch_gradient, batch_loss, dropout_mask, forward, loss, predict, BatchGradient, BnBatchStats, ForwardMode,
    ForwardTrace, GradMode, Mode, BN_EPS, BN_MOMENTUM, LOSS_FLOOR,
};
pub use train::{accuracy, train, write_curve, CurvePoint, Optimiser, TrainConfig, TrainOutcome};
