//! Reference CPU backend and ResNet18 training for chunk images.

pub mod error;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod resnet;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod transform;

pub use error::{NnError, Result};
pub use layers::{Layer, Mode, Param};
pub use resnet::{ResNet, ResNetConfig};
pub use tensor::Tensor;
pub use model::{
    load_checkpoint, save_checkpoint, Backbone, CheckpointInfo, CheckpointMeta, Model, ModelConfig,
    Prediction, Task,
};
pub use train::{evaluate, train, EpochRecord, ImageSource, TrainOutcome};
