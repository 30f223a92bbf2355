//! Minimal convolutional network engine: layer graph, losses, Adam, training
//! loop, and a binary model format.

mod arch;
mod check;
mod io;
mod layers;
mod loss;
mod optim;
mod tensor;
mod train;

pub use arch::{dense_network, grower_network, tracer_network, EncoderConfig};
pub use check::{check_all_layer_kinds, gradient_check, layer_kind_cases, GradCheck};
pub use io::{ModelFile, MODEL_MAGIC, MODEL_VERSION};
pub use layers::{
    backward, backward_with_input, forward, predict, ForwardPass, Gradients, LayerKind,
    LayerParams, LayerSpec, Mode, ModelParams, Network, NetworkBuilder, BATCH_NORM_EPS,
    BATCH_NORM_MOMENTUM, LEAKY_RELU_SLOPE,
};
pub use loss::{bce, focal_loss, loss_and_grad, weighted_mse, LossKind, WeightVector, PROB_EPS};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;
pub use train::{
    evaluate_loss, train_from, train_model, Dataset, EpochRecord, History, Sample, TrainConfig,
    TrainRng,
};
