//! Online VFL core: model structure, the per-round protocol engine, regret
//! accounting and checkpoints.

pub mod checkpoint;
pub mod engine;
pub mod model;
pub mod probe;
pub mod regret;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use engine::{ChannelConfig, Engine, EngineConfig, NoiseMode, RoundInputs, RoundMetrics};
pub use model::{
    accuracy, assemble_representation, extract_embedding, head_gradient, head_local_update, head_loss, sensor_gradient,
    sensor_local_update, task_loss, task_outputs, weighted_task_loss, Block, GlobalModel, ModelConfig,
    ModelRepresentation, ReducedView,
};
pub use probe::{gradient_gap_probe, max_abs_gap, stacked_gradient, TheoryProbe};
pub use regret::{hindsight_loss, log_log_slope, per_round_losses, Hindsight, HindsightConfig, RegretLedger};
