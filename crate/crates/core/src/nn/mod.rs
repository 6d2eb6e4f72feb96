//! A small feedforward network: dense, conv, max-pool, ReLU, dropout and
//! flatten layers on NHWC rows, trained by SGD with momentum.

mod layers;
mod network;
mod topology;
mod train;

pub use layers::{Layer, LayerKind, ParamGrad, Params, Shape3};
pub use network::{Gradients, Network, NetworkBuilder, Trace};
pub use topology::{build_topology, build_topology_with_width, Topology, Width, MNIST_CLASSES, MNIST_INPUT};
pub use train::{accuracy, mean_loss, train, train_with_progress, EpochRecord, Sgd, TrainConfig};
