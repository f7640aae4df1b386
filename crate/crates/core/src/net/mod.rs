//! The denoising network and its weight files.

pub mod blocks;
pub mod cfe;
pub mod checkpoint;
pub mod config;
pub mod geometry;
pub mod layers;
pub mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use geometry::Geometry;
pub use model::{
    backward, forward_geometry, macs_per_event, model_forward, param_count, predict_scores,
    signal_prob, ModelCache, ModelWeights,
};
