// Guards like `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod io;
pub mod loss_schedule;
pub mod metrics;
pub mod model;
pub mod rfsim;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Codec32 = trainer::SpectralCodec<f32>;
pub type Codec64 = trainer::SpectralCodec<f64>;
