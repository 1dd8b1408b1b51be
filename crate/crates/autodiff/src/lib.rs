//! Deterministic reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The engine is deliberately small: a tape ([`Graph`]) of tensor-level ops,
//! NHWC convolutions, batch normalisation, pooling, attention arithmetic
//! (broadcast Hadamard products), a handful of losses, and Adam. Everything
//! runs single-threaded and draws randomness only from explicit [`RngState`]s,
//! so identical seeds reproduce identical bits.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{centered_cosine, BatchStats, Graph, Mode, Var};
pub use kernels::{ConvGeom, Padding, PoolKind, PoolScope};
pub use nn::{BatchNorm, BnRecord, Conv2d, ConvTranspose2d, Dense, Norm};
pub use optim::{AdamState, LrSchedule};
pub use params::{Param, ParamId, ParamStore};
pub use rng::RngState;
pub use tensor::Tensor;
