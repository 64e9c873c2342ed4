//! Object-aware dual-encoder video-text pre-training.
//!
//! A video encoder with divided space-time attention and a text encoder are
//! trained contrastively on four streams: the raw clip, a masked anchor frame
//! that keeps only patches under detected objects, the object-tag sequence,
//! and the caption. Objects shape training only; retrieval at evaluation time
//! uses the plain dual encoder.

pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod losses;
pub mod objects;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::{Gradients, Real, Tensor};
