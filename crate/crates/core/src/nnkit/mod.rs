//! Small dense-tensor kernel with reverse-mode differentiation, the layer set
//! used by the models, an AdamW optimiser and a flat weights format.

pub mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use graph::{Grads, Graph, Var};
pub use layers::{he_normal, Conv1d, Dense, LEAKY_SLOPE};
pub use params::{manifest_path, AdamW, ParamId, ParamStore};
pub use tensor::Tensor;
