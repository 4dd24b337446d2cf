//! Zero-reference low-light image enhancement guided by a frozen
//! image/text encoder.
//!
//! The toolkit trains a lightweight curve-estimation network using only
//! low-light data. Guidance comes from hand-designed zero-reference
//! losses, a learned positive/negative prompt pair, and open-vocabulary
//! antonym-prompt classification — all driven through a frozen
//! CLIP-style encoder (or a deterministic stub for tests).

pub mod archive;
pub mod baseline;
pub mod curve;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod prior;
pub mod semantic;
pub mod train;
pub mod vlm;

pub use error::{Error, Result};
pub use image::ImageTensor;
