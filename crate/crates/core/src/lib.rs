//! Oriented-detection building blocks: multi-scale strip-kernel convolution
//! blocks, multi-directional strip attention, bottom-up pyramid fusion, a
//! unit-circle angle codec, rotated-box geometry and a boundary experiment.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases.

pub mod detect;
pub mod eaem;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod mdcaa;
pub mod msk;
pub mod nn;
pub mod pyramid;
pub mod scalar;
pub mod tensor;

pub use eaem::{AngleCode, Omega};
pub use error::{Error, Result};
pub use geometry::{ConvexPolygon, OrientedBox};
pub use pyramid::{Network, NetworkConfig};
pub use scalar::{DType, Scalar};
pub use tensor::{Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type AngleCode32 = AngleCode<f32>;
pub type AngleCode64 = AngleCode<f64>;
pub type OrientedBox32 = OrientedBox<f32>;
pub type OrientedBox64 = OrientedBox<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
