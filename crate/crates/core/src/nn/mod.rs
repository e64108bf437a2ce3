//! Minimal CPU convolutional network: forward/backward, SGD, head replacement,
//! and access to conv1 feature maps and sigmoid head activations.

mod checkpoint;
mod kernels;
mod layer;
mod network;
mod optim;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use layer::{default_architecture, LayerKind, LayerSpec};
pub use network::{sigmoid, BatchActivations, Gradients, Network, Params};
pub use optim::Sgd;

#[allow(unused_imports)]
pub(crate) use network::{argmax, softmax};
