//! Feature-pyramid cores for one-stage detection.
//!
//! The crate builds the trident pyramid network core together with the FPN,
//! PANet, BiFPN, bFPN and hFPN baselines on top of a small reverse-mode
//! autograd engine, and ships exact parameter/FLOP accounting plus a
//! desk-scale training harness (tiny backbone, RetinaNet-style head,
//! synthetic shapes dataset).

pub mod analysis;
pub mod backbone;
pub mod blocks;
pub mod cores;
pub mod error;
pub mod head;
pub mod model;
pub mod params;
pub mod pyramid;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelSpec};
pub use params::{ParamId, ParamStore, Registry};
pub use pyramid::Pyramid;
pub use tensor::{Scalar, Shape, Tape, Tensor, Var};
