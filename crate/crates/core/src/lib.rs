//! Adaptive-slot object-centric aggregation at desk scale.
//!
//! The crate implements a two-stage slot-attention aggregator: a first
//! aggregation pass produces intermediate slots, a global prototype codebook
//! quantizes them and prunes duplicates, and a second masked pass with
//! annealed noise refines the survivors. Everything differentiable runs on a
//! small reverse-mode tape ([`tape`]) with an explicit stop-gradient
//! primitive, so the gradient-truncation structure of the training scheme is
//! testable down to the bit.
//!
//! All numeric code is generic over the scalar type through [`Real`];
//! concrete `f64` aliases live at the crate root (`Tensor64`, `Tape64`, ...).
//! Gradient checking is specified against 64-bit arithmetic, which is the
//! type the training harness uses.

pub mod codebook;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod metaslot;
pub mod metrics;
pub mod rng;
pub mod scene;
pub mod slots;
pub mod tape;
pub mod tensor;

use std::fmt::{Debug, Display};

pub use error::{CoreError, Result};

/// Scalar type the numeric core is generic over: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into the active scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 constant converts to scalar type")
}

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tape::Tape<f64>;
pub type Var64 = tape::Var<f64>;
pub type Gradients64 = tape::Gradients<f64>;
pub type Codebook64 = codebook::PrototypeCodebook<f64>;
pub type SlotAttentionParams64 = slots::SlotAttentionParams<f64>;
pub type DecoderParams64 = decoder::DecoderParams<f64>;
pub type Scene64 = scene::SyntheticScene<f64>;

