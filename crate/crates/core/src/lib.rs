//! Color-controllable makeup synthesis at desk scale.
//!
//! Weak color labels are extracted from landmark regions, a color-conditioned
//! residual generator is trained against a multi-head Wasserstein critic, and
//! the result is evaluated for color accuracy and style-transfer fidelity.

pub mod colorlab;
pub mod dataset;
pub mod error;
pub mod evalproto;
pub mod image;
pub mod inference;
pub mod losses;
pub mod networks;
pub mod synthdata;
pub mod training;
pub mod weakcolor;

pub use colorlab::{delta_e76, lab_sq_error, LabColor, RgbColor};
pub use error::{Error, Result};
pub use image::{ImageTensor, ValueRange};
