pub mod bench;
pub mod blocks;
pub mod codecs;
pub mod config;
pub mod error;
pub mod matching;
pub mod metrics;
pub mod par;
pub mod params;
pub mod pipeline;
pub mod selftest;
pub mod ssd;
pub mod tensor;
pub mod weights;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
