//! The 1-D CNN: topology, real and fixed-point forward passes, training and
//! the JSON model file.

mod forward;
pub mod io;
pub mod layer;
pub mod network;
pub mod quant;
pub mod train;

use thiserror::Error;

pub use forward::{argmax, Activation};
pub use layer::{ConvParams, FcParams, Layer, LayerSpec, TensorShape};
pub use network::{
    build_conv_net, build_original, build_projected, memory_bytes, NetworkModel, ProjectedRanks,
    DEFAULT_CLASSES, ORIGINAL_FILTERS, SEGMENT_LEN,
};
pub use quant::{argmax_fixed, FixedActivation, FixedParams, LayerQuant, QuantPlan};
pub use train::{
    confusion_matrix, evaluate, loss_and_accuracy, loss_and_gradient, train, DataSplits, Dataset,
    EpochRecord, Gradients, TrainConfig, TrainHistory,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer {index} ({layer}): {detail}")]
    ShapeMismatch {
        index: usize,
        layer: String,
        detail: String,
    },
    #[error("input has {got} samples, model expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} outside 0..{classes}")]
    Label { label: usize, classes: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model is not quantized")]
    NotQuantized,
    #[error("{0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
