//! Model runtime: dense tensor math, layer definitions, network forward
//! pass with recorded activations, exact reverse-mode gradients, and
//! model/data file I/O.

pub mod layer;
pub mod model_io;
pub mod network;
pub mod tensor;

pub use layer::{Layer, PoolSign};
pub use model_io::{load_dataset, load_model, save_dataset, save_model, Sample};
pub use network::{ActivationTrace, Network};
pub use tensor::Tensor;
