//! Fully convolutional segmentation networks built from scratch, with
//! translated skip connections, coordinate-channel input augmentation and
//! effective-receptive-field measurement.

pub mod error;
pub mod tensor;
pub mod tsc;
pub mod arch;
pub mod data;
pub mod erf;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
