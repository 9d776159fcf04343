//! Image containers, color conversion and raster I/O.

mod color;
mod field;
pub mod io;

pub use color::{to_luminance, ColorImage, LUMA_B, LUMA_G, LUMA_R};
pub use field::{relative_l2, ScalarField};
pub use io::{load_image, save_field, save_image, RasterFormat};
