//! Multi-bit hyperdimensional classification with an in-memory hardware
//! model: quantized hypervectors, record-based encoding with ADC
//! quantization, cosine/Hamming/MCAM similarity, single-pass and
//! hardware-aware retraining, array tiling and bit-flip robustness.

pub mod bundle;
pub mod datasets;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod hardware;
pub mod hv;
pub mod similarity;
pub mod trainer;

pub use encoder::{Encoder, EncoderConfig};
pub use error::{HdcError, Result};
pub use hv::{Hypervector, Precision, RealHypervector, RngSeed};
pub use similarity::{McamKernel, Metric};
pub use trainer::{HwartConfig, Model};
