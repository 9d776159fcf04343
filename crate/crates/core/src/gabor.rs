//! Gabor filter bank and the scale-orientation descriptor.
//!
//! Orientations are reported in degrees in `[0, 180)` in pixel coordinates
//! (x to the right, y down) and describe the direction of the stripe lines,
//! i.e. the carrier direction of the best filter plus 90°. Vertical stripes
//! therefore read 90°.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::io::{encode_f32_raw, encode_rgb_png};
use crate::imagecore::ScalarField;
use crate::surface::percentile;

pub const DEFAULT_ORIENTATIONS: usize = 30;
pub const DEFAULT_FREQUENCIES: [f64; 4] = [1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
pub const DEFAULT_CONFIDENCE: f64 = 0.05;
/// Gaussian width times frequency for a bank with one-octave bandwidth.
pub const OCTAVE_SIGMA_FACTOR: f64 = 0.56;
/// Percentile of the magnitudes used as the layer's robust maximum.
const ROBUST_MAX_PERCENTILE: f64 = 99.0;
/// Below this fraction of the layer's peak value, responses count as zero.
const MAGNITUDE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SigmaPolicy {
    /// `σ = factor / W` on both axes.
    Octave { factor: f64 },
    /// The same `σ` for every frequency.
    Fixed { sigma: f64 },
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy::Octave { factor: OCTAVE_SIGMA_FACTOR }
    }
}

impl SigmaPolicy {
    fn sigma(&self, frequency: f64) -> f64 {
        match *self {
            SigmaPolicy::Octave { factor } => factor / frequency,
            SigmaPolicy::Fixed { sigma } => sigma,
        }
    }
}

/// One complex filter. The isotropic envelope makes it separable:
/// `k(x, y) = kx(x) · ky(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaborFilter {
    pub orientation_index: usize,
    pub frequency_index: usize,
    /// Carrier direction `μπ/M` in radians.
    pub theta: f64,
    pub frequency: f64,
    pub sigma: f64,
    pub radius: usize,
    kx: Vec<(f64, f64)>,
    ky: Vec<(f64, f64)>,
}

impl GaborFilter {
    fn new(mu: usize, m: usize, fi: usize, frequency: f64, sigma: f64) -> Self {
        let theta = mu as f64 * PI / m as f64;
        let radius = (3.0 * sigma).ceil() as usize;
        let envelope: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let x = i as f64 - radius as f64;
                (-0.5 * x * x / (sigma * sigma)).exp()
            })
            .collect();
        let norm: f64 = envelope.iter().sum();
        let axis = |dir: f64| -> Vec<(f64, f64)> {
            envelope
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let x = i as f64 - radius as f64;
                    let (s, c) = (2.0 * PI * frequency * dir * x).sin_cos();
                    (g / norm * c, g / norm * s)
                })
                .collect()
        };
        let (sin_t, cos_t) = theta.sin_cos();
        Self {
            orientation_index: mu,
            frequency_index: fi,
            theta,
            frequency,
            sigma,
            radius,
            kx: axis(cos_t),
            ky: axis(sin_t),
        }
    }

    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    /// Tap at offset `(x, y)` from the centre, `|x|, |y| ≤ radius`.
    pub fn tap(&self, x: isize, y: isize) -> (f64, f64) {
        let r = self.radius as isize;
        let (a, b) = self.kx[(x + r) as usize];
        let (c, d) = self.ky[(y + r) as usize];
        (a * c - b * d, a * d + b * c)
    }

    /// Full 2-D kernel, row-major, `size()²` complex taps.
    pub fn kernel(&self) -> Vec<(f64, f64)> {
        let r = self.radius as isize;
        let mut out = Vec::with_capacity(self.size() * self.size());
        for y in -r..=r {
            for x in -r..=r {
                out.push(self.tap(x, y));
            }
        }
        out
    }

    /// Magnitude of the complex convolution of `f` with this filter,
    /// replicating border pixels.
    pub fn response(&self, f: &ScalarField) -> ScalarField {
        let (w, h) = f.dims();
        let r = self.radius as isize;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let src = f.values();
        let rows: Vec<(f64, f64)> = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                let row = &src[y * w..(y + 1) * w];
                (0..w).map(move |x| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (j, &(kr, ki)) in self.kx.iter().enumerate() {
                        let v = row[clamp(x as isize - (j as isize - r), w)];
                        re += v * kr;
                        im += v * ki;
                    }
                    (re, im)
                })
            })
            .collect();
        let mag: Vec<f64> = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                let rows = &rows;
                (0..w).map(move |x| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (j, &(kr, ki)) in self.ky.iter().enumerate() {
                        let (vr, vi) = rows[clamp(y as isize - (j as isize - r), h) * w + x];
                        re += vr * kr - vi * ki;
                        im += vr * ki + vi * kr;
                    }
                    re.hypot(im)
                })
            })
            .collect();
        ScalarField::from_vec_unchecked(w, h, mag)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaborBank {
    orientations: usize,
    frequencies: Vec<f64>,
    filters: Vec<GaborFilter>,
}

pub fn build_bank(orientations: usize, frequencies: &[f64], sigma_policy: SigmaPolicy) -> Result<GaborBank> {
    if orientations < 2 {
        return Err(Error::Parameter(format!("need at least 2 orientations, got {orientations}")));
    }
    if frequencies.is_empty() {
        return Err(Error::Parameter("empty frequency list".into()));
    }
    let mut filters = Vec::with_capacity(orientations * frequencies.len());
    for (fi, &w) in frequencies.iter().enumerate() {
        if !(w > 0.0 && w <= 0.5) {
            return Err(Error::Parameter(format!("frequency {w} outside (0, 0.5] cycles/pixel")));
        }
        let sigma = sigma_policy.sigma(w);
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Parameter(format!("degenerate sigma {sigma} for frequency {w}")));
        }
        for mu in 0..orientations {
            filters.push(GaborFilter::new(mu, orientations, fi, w, sigma));
        }
    }
    Ok(GaborBank { orientations, frequencies: frequencies.to_vec(), filters })
}

impl Default for GaborBank {
    fn default() -> Self {
        build_bank(DEFAULT_ORIENTATIONS, &DEFAULT_FREQUENCIES, SigmaPolicy::default()).expect("valid defaults")
    }
}

impl GaborBank {
    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn filters(&self) -> &[GaborFilter] {
        &self.filters
    }

    pub fn filter(&self, frequency_index: usize, orientation_index: usize) -> &GaborFilter {
        &self.filters[frequency_index * self.orientations + orientation_index]
    }

    /// Stripe-line direction in degrees for orientation bin `mu`.
    pub fn bin_angle(&self, mu: usize) -> f64 {
        (mu as f64 * 180.0 / self.orientations as f64 + 90.0) % 180.0
    }

    pub fn bin_width(&self) -> f64 {
        180.0 / self.orientations as f64
    }
}

/// Response magnitudes, indexed by frequency then orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct BankResponse {
    pub orientations: usize,
    pub magnitudes: Vec<ScalarField>,
}

impl BankResponse {
    pub fn get(&self, frequency_index: usize, orientation_index: usize) -> &ScalarField {
        &self.magnitudes[frequency_index * self.orientations + orientation_index]
    }
}

fn centred(layer: &ScalarField) -> ScalarField {
    let m = layer.mean();
    layer.map(|v| v - m)
}

/// The layer mean is removed first, so constant input gives zero response.
pub fn bank_response(layer: &ScalarField, bank: &GaborBank) -> Result<BankResponse> {
    if !layer.is_finite() {
        return Err(Error::Contract("layer has non-finite values".into()));
    }
    let f = centred(layer);
    Ok(BankResponse {
        orientations: bank.orientations,
        magnitudes: bank.filters.par_iter().map(|k| k.response(&f)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrientationMap {
    width: usize,
    height: usize,
    /// Stripe-line direction in degrees, one of the bin centres.
    pub orientation: Vec<f64>,
    pub orientation_index: Vec<usize>,
    pub frequency_index: Vec<usize>,
    pub magnitude: ScalarField,
    pub confident: Vec<bool>,
    /// Robust maximum of the magnitudes the confidence threshold refers to.
    pub robust_max: f64,
}

impl OrientationMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn confident_count(&self) -> usize {
        self.confident.iter().filter(|&&c| c).count()
    }

    pub fn orientation_field(&self) -> ScalarField {
        ScalarField::from_vec_unchecked(self.width, self.height, self.orientation.clone())
    }

    /// Hue from orientation, value from magnitude relative to the robust max.
    pub fn to_false_color_png(&self) -> Result<Vec<u8>> {
        let scale = if self.robust_max > 0.0 { self.robust_max } else { 1.0 };
        let rgb: Vec<[f64; 3]> = self
            .orientation
            .iter()
            .zip(self.magnitude.values())
            .map(|(&o, &m)| hsv_to_rgb(2.0 * o, 1.0, (m / scale).min(1.0)))
            .collect();
        encode_rgb_png(self.width, self.height, &rgb)
    }

    /// Writes `<stem>.png`, `<stem>_orientation.f32` and `<stem>_magnitude.f32`.
    pub fn export(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (format!("{stem}.png"), self.to_false_color_png()?),
            (format!("{stem}_orientation.f32"), encode_f32_raw(&self.orientation_field())),
            (format!("{stem}_magnitude.f32"), encode_f32_raw(&self.magnitude)),
        ];
        for (name, bytes) in files {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

fn hsv_to_rgb(hue_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (hue_deg.rem_euclid(360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Per-pixel best (frequency, orientation) over the bank for one layer.
pub fn orientation_map(layer: &ScalarField, bank: &GaborBank, confidence: f64) -> Result<OrientationMap> {
    if !layer.is_finite() {
        return Err(Error::Contract("layer has non-finite values".into()));
    }
    let (w, h) = layer.dims();
    let f = centred(layer);
    let n = w * h;
    let mut best_mag = vec![0.0; n];
    let mut best_idx = vec![(0usize, 0usize); n];
    let mut seen = false;
    for fi in 0..bank.frequencies.len() {
        let mags: Vec<ScalarField> =
            (0..bank.orientations).into_par_iter().map(|mu| bank.filter(fi, mu).response(&f)).collect();
        for (mu, m) in mags.iter().enumerate() {
            for (i, &v) in m.values().iter().enumerate() {
                // Strict comparison: ties keep the finer scale and lower bin.
                if !seen || v > best_mag[i] {
                    best_mag[i] = v;
                    best_idx[i] = (fi, mu);
                }
            }
            seen = true;
        }
    }
    let mut sorted = best_mag.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let robust_max = percentile(&sorted, ROBUST_MAX_PERCENTILE);
    let floor = MAGNITUDE_FLOOR * layer.max_abs().max(f64::MIN_POSITIVE);
    let threshold = confidence * robust_max;
    let usable = robust_max > floor;
    Ok(OrientationMap {
        width: w,
        height: h,
        orientation: best_idx.iter().map(|&(_, mu)| bank.bin_angle(mu)).collect(),
        orientation_index: best_idx.iter().map(|&(_, mu)| mu).collect(),
        frequency_index: best_idx.iter().map(|&(fi, _)| fi).collect(),
        confident: best_mag.iter().map(|&m| usable && m >= threshold && m > floor).collect(),
        magnitude: ScalarField::from_vec_unchecked(w, h, best_mag),
        robust_max,
    })
}

/// One orientation map per layer.
pub fn scale_orientation_descriptor(
    layers: &[ScalarField],
    bank: &GaborBank,
    confidence: f64,
) -> Result<Vec<OrientationMap>> {
    if layers.is_empty() {
        return Err(Error::Contract("no layers given".into()));
    }
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::Parameter(format!("confidence threshold {confidence} outside [0, 1]")));
    }
    layers.iter().map(|l| orientation_map(l, bank, confidence)).collect()
}

/// Circular distance between two orientations in degrees, period 180°.
pub fn orientation_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}
