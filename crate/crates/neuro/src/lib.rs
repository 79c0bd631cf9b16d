//! Minimal dense numeric core: row-major `f64` matrices, a reverse-mode
//! gradient tape, dense/LSTM layers and the Adam optimizer.

pub mod adam;
pub mod graph;
pub mod layers;
pub mod mat;
pub mod params;

pub use adam::Adam;
pub use graph::{Graph, NodeId};
pub use mat::Mat;
pub use params::{Bound, Grads, ParamFile, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum NeuroError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("bad parameter file: {0}")]
    Format(String),
}
