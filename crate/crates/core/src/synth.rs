//! Synthetic test images with known structure.
//!
//! Shapes have a linear edge ramp of [`EDGE_RAMP`] pixels. A hard-edged
//! digital disc overstates its perimeter by about 17% under the forward
//! difference TV, the soft ramp keeps that bias below 4%.

use std::f64::consts::PI;

use crate::imagecore::ScalarField;

/// Width in pixels of the linear edge ramp used for discs and rings.
pub const EDGE_RAMP: f64 = 2.0;

#[inline]
fn ramp(signed_dist: f64) -> f64 {
    (signed_dist / EDGE_RAMP + 0.5).clamp(0.0, 1.0)
}

/// Coverage of a soft disc at pixel `(x, y)`; pixel centres are at integer
/// coordinates.
#[inline]
pub fn disc_coverage(x: f64, y: f64, cx: f64, cy: f64, radius: f64) -> f64 {
    ramp(radius - (x - cx).hypot(y - cy))
}

/// A single disc of height `h` centred in a `w x h` image over `background`.
pub fn disc(width: usize, height: usize, radius: f64, h: f64, background: f64) -> ScalarField {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    ScalarField::from_fn(width, height, |x, y| background + h * disc_coverage(x as f64, y as f64, cx, cy, radius))
}

/// Add a disc of height `h` to `field` in place.
pub fn add_disc(field: &mut ScalarField, cx: f64, cy: f64, radius: f64, h: f64) {
    let r = radius + EDGE_RAMP;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(field.width() - 1);
    let y1 = ((cy + r).ceil() as usize).min(field.height() - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let c = disc_coverage(x as f64, y as f64, cx, cy, radius);
            if c > 0.0 {
                let v = field.get(x, y);
                field.set(x, y, v + h * c);
            }
        }
    }
}

/// Square wave of the given period along direction `angle_deg`, values
/// `±amplitude`. The stripe lines run perpendicular to that direction.
pub fn square_stripes(width: usize, height: usize, period: f64, angle_deg: f64, amplitude: f64) -> ScalarField {
    let (s, c) = angle_deg.to_radians().sin_cos();
    ScalarField::from_fn(width, height, |x, y| {
        let t = (x as f64 * c + y as f64 * s) / period;
        let frac = t - t.floor();
        if frac < 0.5 {
            amplitude
        } else {
            -amplitude
        }
    })
}

/// Sinusoid `amplitude·cos(2π·(x cos θ + y sin θ)/period)`.
pub fn sine_stripes(width: usize, height: usize, period: f64, angle_deg: f64, amplitude: f64) -> ScalarField {
    let (s, c) = angle_deg.to_radians().sin_cos();
    ScalarField::from_fn(width, height, |x, y| {
        amplitude * (2.0 * PI * (x as f64 * c + y as f64 * s) / period).cos()
    })
}

/// Concentric sinusoidal rings around the image centre.
pub fn concentric_rings(width: usize, height: usize, period: f64, amplitude: f64) -> ScalarField {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    ScalarField::from_fn(width, height, |x, y| {
        let r = (x as f64 - cx).hypot(y as f64 - cy);
        amplitude * (2.0 * PI * r / period).cos()
    })
}

/// 1-D signal (a `n x 1` field) with `value` on `[start, start + len)`.
pub fn pulse(n: usize, start: usize, len: usize, value: f64) -> ScalarField {
    ScalarField::from_fn(n, 1, |x, _| if x >= start && x < start + len { value } else { 0.0 })
}

/// 1-D square wave of half-period `block` on `[start, start + len)`, zero
/// elsewhere. Starts with `+amplitude`.
pub fn square_wave_1d(n: usize, start: usize, len: usize, block: usize, amplitude: f64) -> ScalarField {
    ScalarField::from_fn(n, 1, |x, _| {
        if x < start || x >= start + len {
            0.0
        } else if ((x - start) / block).is_multiple_of(2) {
            amplitude
        } else {
            -amplitude
        }
    })
}

/// Vertical square-wave stripes (intensity varies along x) in `bands`
/// horizontal bands of equal height. The integer block width grows linearly
/// from `block_top` in the first band to `block_bottom` in the last. Blocks
/// are laid out from the centre column, so the pattern is mirror-symmetric
/// for even widths. Values `±amplitude`.
pub fn graded_stripes(
    width: usize,
    height: usize,
    bands: usize,
    block_top: usize,
    block_bottom: usize,
    amplitude: f64,
) -> ScalarField {
    let bands = bands.clamp(1, height.max(1));
    let cx = (width / 2) as i64;
    ScalarField::from_fn(width, height, |x, y| {
        let band = y * bands / height;
        let frac = if bands > 1 { band as f64 / (bands - 1) as f64 } else { 0.0 };
        let block = (block_top as f64 + (block_bottom as f64 - block_top as f64) * frac).round().max(1.0) as i64;
        let k = (x as i64 - cx).div_euclid(block);
        if k.rem_euclid(2) == 0 {
            amplitude
        } else {
            -amplitude
        }
    })
}

/// Checkerboard whose tile size grows linearly from `size_top` on the first
/// row to `size_bottom` on the last, like a tiled floor seen in perspective.
pub fn perspective_tiles(width: usize, height: usize, size_top: f64, size_bottom: f64, amplitude: f64) -> ScalarField {
    // Row bands: the band starting at row y has height s(y).
    let mut band_of_row = Vec::with_capacity(height);
    let mut band_size = Vec::new();
    let mut y = 0usize;
    let mut band = 0usize;
    while y < height {
        let frac = y as f64 / (height.max(2) - 1) as f64;
        let s = (size_top + (size_bottom - size_top) * frac).round().max(1.0) as usize;
        for _ in 0..s {
            if y < height {
                band_of_row.push(band);
                y += 1;
            }
        }
        band_size.push(s);
        band += 1;
    }
    ScalarField::from_fn(width, height, |x, y| {
        let b = band_of_row[y];
        let s = band_size[b];
        let col = x / s;
        if (col + b) % 2 == 0 {
            amplitude
        } else {
            -amplitude
        }
    })
}

/// Deterministic pseudo-random smooth image (sum of soft blobs), used where a
/// "natural" test image is needed without shipping binary fixtures.
pub fn natural_like(width: usize, height: usize, seed: u64) -> ScalarField {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / ((1u64 << 53) as f64)
    };
    let mut f = ScalarField::filled(width, height, 0.45);
    // Large-scale illumination gradient.
    let (gx, gy) = (next() - 0.5, next() - 0.5);
    for y in 0..height {
        for x in 0..width {
            let v = f.get(x, y) + 0.2 * (gx * x as f64 / width as f64 + gy * y as f64 / height as f64);
            f.set(x, y, v);
        }
    }
    for _ in 0..40 {
        let cx = next() * width as f64;
        let cy = next() * height as f64;
        let r = 2.0 + next() * (width.min(height) as f64 / 6.0);
        let h = (next() - 0.5) * 0.4;
        add_disc(&mut f, cx, cy, r, h);
    }
    // Fine texture patch.
    let tex = sine_stripes(width, height, 3.0 + 4.0 * next(), 180.0 * next(), 0.06);
    for y in height / 4..3 * height / 4 {
        for x in width / 4..3 * width / 4 {
            let v = f.get(x, y) + tex.get(x, y);
            f.set(x, y, v);
        }
    }
    f.clamp(0.0, 1.0)
}
