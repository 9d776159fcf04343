//! Texture manipulation: scale an extracted texture layer in the luminance
//! channel, optionally only inside a mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{ColorImage, ScalarField};

/// Mask pixels at or above this value are inside.
pub const MASK_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipulationSpec {
    /// 1 keeps the texture, 0 removes it, above 1 enhances, below 0 inverts.
    pub gain: f64,
    #[serde(skip)]
    pub mask: Option<ScalarField>,
    /// Clamp the output luminance to `[0, 1]`.
    pub clamp: bool,
}

impl ManipulationSpec {
    pub fn new(gain: f64) -> Self {
        Self { gain, mask: None, clamp: true }
    }

    pub fn with_mask(mut self, mask: ScalarField) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn unclamped(mut self) -> Self {
        self.clamp = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gain.is_finite() {
            return Err(Error::Parameter(format!("gain must be finite, got {}", self.gain)));
        }
        Ok(())
    }
}

/// `Y + (gain - 1)·texture` inside the mask, `Y` outside.
pub fn manipulate_luma(luma: &ScalarField, texture: &ScalarField, spec: &ManipulationSpec) -> Result<ScalarField> {
    spec.validate()?;
    luma.check_dims(texture)?;
    if let Some(mask) = &spec.mask {
        if !mask.same_dims(luma) {
            return Err(Error::Contract(format!(
                "mask is {}x{}, image is {}x{}",
                mask.width(),
                mask.height(),
                luma.width(),
                luma.height()
            )));
        }
    }
    let k = spec.gain - 1.0;
    let values = luma
        .values()
        .iter()
        .zip(texture.values())
        .enumerate()
        .map(|(i, (&y, &t))| {
            if spec.mask.as_ref().is_some_and(|m| m.values()[i] < MASK_THRESHOLD) {
                return y;
            }
            let v = y + k * t;
            if spec.clamp {
                v.clamp(0.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    ScalarField::new(luma.width(), luma.height(), values)
}

/// Manipulate the luminance of `image`; chroma is left unchanged.
pub fn manipulate(image: &ColorImage, texture: &ScalarField, spec: &ManipulationSpec) -> Result<ColorImage> {
    image.with_luma(manipulate_luma(image.luma(), texture, spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn setup() -> (ScalarField, ScalarField) {
        let y = synth::natural_like(24, 20, 3);
        let t = synth::sine_stripes(24, 20, 6.0, 20.0, 0.1);
        (y, t)
    }

    #[test]
    fn unit_gain_is_identity() {
        let (y, t) = setup();
        assert_eq!(manipulate_luma(&y, &t, &ManipulationSpec::new(1.0)).unwrap(), y);
        assert_eq!(manipulate_luma(&y, &t, &ManipulationSpec::new(1.0).unclamped()).unwrap(), y);
    }

    #[test]
    fn zero_gain_removes_texture() {
        let (y, t) = setup();
        let out = manipulate_luma(&y, &t, &ManipulationSpec::new(0.0).unclamped()).unwrap();
        assert!(out.sub(&y.sub(&t).unwrap()).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn masked_pixels_are_untouched() {
        let (y, t) = setup();
        let mask = ScalarField::from_fn(24, 20, |x, _| if x < 12 { 1.0 } else { 0.0 });
        let out = manipulate_luma(&y, &t, &ManipulationSpec::new(3.0).with_mask(mask)).unwrap();
        for yy in 0..20 {
            for x in 12..24 {
                assert_eq!(out.get(x, yy).to_bits(), y.get(x, yy).to_bits());
            }
        }
        assert!((0..20).any(|yy| out.get(3, yy) != y.get(3, yy)));
    }

    #[test]
    fn mask_size_mismatch_is_contract_error() {
        let (y, t) = setup();
        let spec = ManipulationSpec::new(2.0).with_mask(ScalarField::zeros(3, 3));
        assert!(matches!(manipulate_luma(&y, &t, &spec), Err(Error::Contract(_))));
    }

    #[test]
    fn chroma_is_preserved() {
        let r = synth::natural_like(10, 8, 1);
        let g = r.map(|v| 0.8 * v);
        let b = r.map(|v| 1.0 - v);
        let img = ColorImage::from_rgb(&r, &g, &b).unwrap();
        let out = manipulate(&img, &synth::sine_stripes(10, 8, 4.0, 0.0, 0.05), &ManipulationSpec::new(2.0)).unwrap();
        assert_eq!(out.cb(), img.cb());
        assert_eq!(out.cr(), img.cr());
    }

    #[test]
    fn non_finite_gain_is_rejected() {
        let (y, t) = setup();
        assert!(manipulate_luma(&y, &t, &ManipulationSpec::new(f64::INFINITY)).is_err());
    }
}
