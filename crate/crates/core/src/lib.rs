pub mod codec;
pub mod diffusion;
pub mod embeddings;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod neutral_text;
pub mod neutral_video;
pub mod pipeline;
pub mod video;
pub mod world;

pub use error::{Error, Result};
