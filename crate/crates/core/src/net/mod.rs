//! The 3D-convolutional emulator: architecture, layers, training and checkpoints.

pub mod arch;
pub mod checkpoint;
pub mod layers;
pub mod train;

pub use arch::{build_arch, row_reduction_chain, LayerSpec, NetworkSpec, Shape};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use layers::{backward, forward, predict, ForwardCache, LayerParams, Params};
pub use train::{adam_step, evaluate, lr_at, mse_loss, train, AdamConfig, EpochRecord, History, OptimizerState, TrainConfig, TrainOutcome};
