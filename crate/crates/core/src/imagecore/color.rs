use crate::error::{Error, Result};

use super::ScalarField;

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;

// Chroma scale factors that make the RGB <-> YCbCr pair an exact inverse.
const CB_SCALE: f64 = 2.0 * (1.0 - LUMA_B);
const CR_SCALE: f64 = 2.0 * (1.0 - LUMA_R);

/// Luminance plus two zero-centred chroma channels.
///
/// Neutral (achromatic) pixels have both chroma channels equal to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    luma: ScalarField,
    cb: ScalarField,
    cr: ScalarField,
}

impl ColorImage {
    pub fn new(luma: ScalarField, cb: ScalarField, cr: ScalarField) -> Result<Self> {
        luma.check_dims(&cb)?;
        luma.check_dims(&cr)?;
        Ok(Self { luma, cb, cr })
    }

    /// Achromatic image with the given luminance.
    pub fn from_gray(luma: ScalarField) -> Self {
        let (w, h) = luma.dims();
        Self { luma, cb: ScalarField::zeros(w, h), cr: ScalarField::zeros(w, h) }
    }

    pub fn from_rgb(r: &ScalarField, g: &ScalarField, b: &ScalarField) -> Result<Self> {
        r.check_dims(g)?;
        r.check_dims(b)?;
        let (w, h) = r.dims();
        let n = w * h;
        let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let (rv, gv, bv) = (r.values()[i], g.values()[i], b.values()[i]);
            let yv = LUMA_R * rv + LUMA_G * gv + LUMA_B * bv;
            y.push(yv);
            cb.push((bv - yv) / CB_SCALE);
            cr.push((rv - yv) / CR_SCALE);
        }
        Ok(Self {
            luma: ScalarField::from_vec_unchecked(w, h, y),
            cb: ScalarField::from_vec_unchecked(w, h, cb),
            cr: ScalarField::from_vec_unchecked(w, h, cr),
        })
    }

    pub fn to_rgb(&self) -> (ScalarField, ScalarField, ScalarField) {
        let (w, h) = self.dims();
        let n = w * h;
        let (mut r, mut g, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let yv = self.luma.values()[i];
            let rv = yv + CR_SCALE * self.cr.values()[i];
            let bv = yv + CB_SCALE * self.cb.values()[i];
            let gv = (yv - LUMA_R * rv - LUMA_B * bv) / LUMA_G;
            r.push(rv);
            g.push(gv);
            b.push(bv);
        }
        (
            ScalarField::from_vec_unchecked(w, h, r),
            ScalarField::from_vec_unchecked(w, h, g),
            ScalarField::from_vec_unchecked(w, h, b),
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        self.luma.dims()
    }

    pub fn luma(&self) -> &ScalarField {
        &self.luma
    }

    pub fn cb(&self) -> &ScalarField {
        &self.cb
    }

    pub fn cr(&self) -> &ScalarField {
        &self.cr
    }

    pub fn is_achromatic(&self) -> bool {
        self.cb.values().iter().chain(self.cr.values()).all(|&c| c == 0.0)
    }

    /// Replace the luminance channel, keeping chroma.
    pub fn with_luma(&self, luma: ScalarField) -> Result<Self> {
        if !luma.same_dims(&self.luma) {
            return Err(Error::Contract("replacement luminance has different dimensions".into()));
        }
        Ok(Self { luma, cb: self.cb.clone(), cr: self.cr.clone() })
    }
}

/// Copy of the luminance channel.
pub fn to_luminance(img: &ColorImage) -> ScalarField {
    img.luma.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_rgb(r: f64, g: f64, b: f64) -> ColorImage {
        ColorImage::from_rgb(
            &ScalarField::filled(3, 2, r),
            &ScalarField::filled(3, 2, g),
            &ScalarField::filled(3, 2, b),
        )
        .unwrap()
    }

    #[test]
    fn white_has_unit_luminance() {
        let y = to_luminance(&constant_rgb(1.0, 1.0, 1.0));
        assert!(y.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn pure_red_uses_fixed_weight() {
        let y = to_luminance(&constant_rgb(1.0, 0.0, 0.0));
        assert!(y.values().iter().all(|&v| v == 0.299));
    }

    #[test]
    fn gray_ramp_is_its_own_luminance() {
        let ramp = ScalarField::from_fn(16, 1, |x, _| x as f64 / 15.0);
        let img = ColorImage::from_rgb(&ramp, &ramp, &ramp).unwrap();
        for (a, b) in to_luminance(&img).values().iter().zip(ramp.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let (r, g, b) = img.to_rgb();
        for i in 0..ramp.len() {
            assert!((r.values()[i] - ramp.values()[i]).abs() < 1e-14);
            assert!((g.values()[i] - ramp.values()[i]).abs() < 1e-14);
            assert!((b.values()[i] - ramp.values()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn rgb_round_trip() {
        let img = constant_rgb(0.2, 0.7, 0.4);
        let (r, g, b) = img.to_rgb();
        assert!((r.values()[0] - 0.2).abs() < 1e-14);
        assert!((g.values()[0] - 0.7).abs() < 1e-14);
        assert!((b.values()[0] - 0.4).abs() < 1e-14);
    }
}
