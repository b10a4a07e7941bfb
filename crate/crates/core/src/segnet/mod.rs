//! Encoder-decoder segmentation network: five 3x3 convolutions, one 4x4
//! max-pool, 4x nearest upsampling and a skip connection, with a BCE/Adam
//! trainer, per-layer int8 weight quantization and a MAC/memory ledger.

mod layers;
mod ledger;
mod network;
mod quant;
mod real;
mod tensor;
mod train;

pub use layers::{
    concat_channels, conv2d_3x3_same, maxpool_4x4, maxpool_4x4_with_argmax, relu, sigmoid, upsample_4x, ConvGrad,
    ConvLayer,
};
pub use ledger::{LayerCost, ResourceLedger};
pub use network::{Gradients, Inference, SegNet, SegNetShape};
pub use quant::{read_weights, write_weights, QuantizedLayer, QuantizedNet, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{bce_loss, loss_and_gradient, train, Sample, TrainConfig, BCE_CLAMP};

#[derive(Debug, thiserror::Error)]
pub enum SegnetError {
    #[error("expected {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{h}x{w} is not divisible by {factor}")]
    NotDivisible { h: usize, w: usize, factor: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("mask values must be 0 or 1")]
    NonBinaryMask,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("malformed weights: {0}")]
    MalformedWeights(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
