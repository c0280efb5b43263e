//! The patch classifier: architecture, parameters, forward/backward passes,
//! ADAM training and checkpoints.

mod adam;
mod arch;
mod checkpoint;
mod model;
mod params;
mod train;

pub use adam::{adam_update, AdamState, BETA1, BETA2, EPSILON};
pub use arch::{Architecture, FeatureSizes};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use model::{backward, forward, loss_and_gradients, predict, ForwardCache, ForwardPass};
pub use params::{Gradients, NetworkParams};
pub use train::{
    argmax, describe_class_accuracy, train_from_manifest, train_model, train_step,
    training_class_weights, write_training_log, EpochRecord, TrainConfig, TrainOutcome,
};
