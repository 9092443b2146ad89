//! Compression of neural network weight tensors by weighted rate-distortion
//! quantization followed by context-adaptive binary arithmetic coding.
//!
//! The pipeline per layer: [`quantizer`] maps weights onto an equidistant grid
//! while pricing each candidate with the live [`ctxmodel`] states, then
//! [`binarizer`] turns indices into bins that [`bacore`] codes. [`bitstream`]
//! and [`ingest`] hold the compressed and uncompressed containers, and
//! [`codec`] ties the pieces together for whole models.

pub mod bacore;
pub mod binarizer;
pub mod bitstream;
pub mod codec;
pub mod ctxmodel;
pub mod ingest;
pub mod metrics;
pub mod quantizer;
pub mod tensor;
mod wire;

pub use codec::{decode_bytes, encode_model, sweep, CodecError, EncodeOptions};
pub use quantizer::{EtaMode, RdConfig};
pub use tensor::WeightTensor;
