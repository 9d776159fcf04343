//! Spectral total-variation decomposition of images.
//!
//! An image is evolved under TV flow, the flow is differentiated twice in time
//! to obtain scale layers, and a texture is extracted by integrating those
//! layers over a per-pixel band (a stratum) centred on a fitted separation
//! surface.

// `!(a < b)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod imagecore;

pub use error::{Error, Result};
pub use imagecore::{ColorImage, ScalarField};
pub mod synth;
pub mod tvflow;
pub mod spectv;
pub mod surface;
pub mod gabor;
pub mod texapp;
pub mod config;
pub mod pipeline;
