//! Regression of the salient-time samples: a robust plane, or a local linear
//! surface that falls back to that plane where data is thin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::ScalarField;

use super::{Sample, SampleSet, MIN_SAMPLES};

/// Bisquare tuning constant, in units of the robust residual scale.
pub const TUKEY_C: f64 = 4.685;
pub const IRLS_ROUNDS: usize = 5;
/// Consistency factor turning a median absolute deviation into a standard
/// deviation for Gaussian residuals.
const MAD_TO_SIGMA: f64 = 1.4826;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Plane,
    Local,
}

impl std::str::FromStr for FitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(FitKind::Plane),
            "local" => Ok(FitKind::Local),
            other => Err(Error::Parameter(format!("unknown fit kind {other:?} (expected plane or local)"))),
        }
    }
}

/// `T = a·x + b·y + c`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PlaneCoefficients {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Robust residual scale of the final plane fit.
    pub residual_scale: f64,
    /// Fraction of samples with non-zero robust weight.
    pub inlier_fraction: f64,
    pub plane: PlaneCoefficients,
    /// Pixels where the local fit fell back to the plane (local fits only).
    pub fallback_fraction: f64,
}

/// Fitted separation time per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceField {
    pub times: ScalarField,
    pub kind: FitKind,
    pub diagnostics: FitDiagnostics,
}

/// Weighted least squares plane through centred coordinates.
fn weighted_plane(samples: &[Sample], weights: &[f64]) -> Result<PlaneCoefficients> {
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::DegenerateGeometry("all sample weights are zero".into()));
    }
    let (mut mx, mut my, mut mt) = (0.0, 0.0, 0.0);
    for (s, &w) in samples.iter().zip(weights) {
        mx += w * s.x;
        my += w * s.y;
        mt += w * s.t;
    }
    mx /= wsum;
    my /= wsum;
    mt /= wsum;
    let (mut sxx, mut sxy, mut syy, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (s, &w) in samples.iter().zip(weights) {
        let (dx, dy, dt) = (s.x - mx, s.y - my, s.t - mt);
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
        sxt += w * dx * dt;
        syt += w * dy * dt;
    }
    let det = sxx * syy - sxy * sxy;
    if !(det > 1e-12 * (sxx * syy).max(f64::MIN_POSITIVE)) || sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::DegenerateGeometry("sample positions are collinear".into()));
    }
    let a = (syy * sxt - sxy * syt) / det;
    let b = (sxx * syt - sxy * sxt) / det;
    Ok(PlaneCoefficients { a, b, c: mt - a * mx - b * my })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Robust plane: weighted least squares refined by IRLS with bisquare
/// weights. Returns the coefficients, the final robust weights and the scale.
pub fn robust_plane(samples: &[Sample]) -> Result<(PlaneCoefficients, Vec<f64>, f64)> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData { found: samples.len(), needed: MIN_SAMPLES });
    }
    let base: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let mut plane = weighted_plane(samples, &base)?;
    let mut robust = vec![1.0; samples.len()];
    let mut scale = 0.0;
    for _ in 0..IRLS_ROUNDS {
        let mut abs_res: Vec<f64> = samples.iter().map(|s| (s.t - plane.eval(s.x, s.y)).abs()).collect();
        scale = MAD_TO_SIGMA * median(&mut abs_res);
        if scale <= 1e-12 * (1.0 + plane.c.abs()) {
            // Exact fit of the majority; points off it are outliers.
            for (r, s) in robust.iter_mut().zip(samples) {
                *r = if (s.t - plane.eval(s.x, s.y)).abs() <= 1e-9 * (1.0 + s.t.abs()) { 1.0 } else { 0.0 };
            }
        } else {
            let cutoff = TUKEY_C * scale;
            for (r, s) in robust.iter_mut().zip(samples) {
                let u = (s.t - plane.eval(s.x, s.y)) / cutoff;
                *r = if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
            }
        }
        let w: Vec<f64> = base.iter().zip(&robust).map(|(b, r)| b * r).collect();
        plane = weighted_plane(samples, &w)?;
        if scale <= 1e-12 * (1.0 + plane.c.abs()) {
            break;
        }
    }
    Ok((plane, robust, scale))
}

fn clamp_to_range(t: f64, range: (f64, f64)) -> f64 {
    t.clamp(range.0, range.1)
}

pub fn fit_plane(samples: &SampleSet) -> Result<SurfaceField> {
    let (plane, robust, scale) = robust_plane(&samples.samples)?;
    let inliers = robust.iter().filter(|&&r| r > 0.0).count();
    let times = ScalarField::from_fn(samples.width, samples.height, |x, y| {
        clamp_to_range(plane.eval(x as f64, y as f64), samples.t_range)
    });
    Ok(SurfaceField {
        times,
        kind: FitKind::Plane,
        diagnostics: FitDiagnostics {
            residual_scale: scale,
            inlier_fraction: inliers as f64 / samples.samples.len() as f64,
            plane,
            fallback_fraction: 0.0,
        },
    })
}

/// Minimum Gaussian mass (in sample equivalents) for a local fit.
const MIN_LOCAL_MASS: f64 = 5.0;

/// Gaussian-weighted local linear regression evaluated at every pixel.
pub fn fit_surface_local(samples: &SampleSet, bandwidth: f64) -> Result<SurfaceField> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let (plane, robust, scale) = robust_plane(&samples.samples)?;
    let inliers = robust.iter().filter(|&&r| r > 0.0).count();
    let (w, h) = (samples.width, samples.height);

    // Bucket samples on a coarse grid so each pixel only visits neighbours
    // within the Gaussian's effective support.
    let reach = 4.0 * bandwidth;
    let cell = reach.max(1.0);
    let cols = ((w as f64) / cell).ceil().max(1.0) as usize;
    let rows = ((h as f64) / cell).ceil().max(1.0) as usize;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cols * rows];
    for (i, s) in samples.samples.iter().enumerate() {
        let cx = ((s.x / cell) as usize).min(cols - 1);
        let cy = ((s.y / cell) as usize).min(rows - 1);
        buckets[cy * cols + cx].push(i);
    }
    let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);

    let evaluated: Vec<(f64, bool)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (px, py) = ((i % w) as f64, (i / w) as f64);
            let cx = ((px / cell) as usize).min(cols - 1);
            let cy = ((py / cell) as usize).min(rows - 1);
            let (mut mass, mut sw) = (0.0, 0.0);
            let (mut mx, mut my, mut mt) = (0.0, 0.0, 0.0);
            let mut local: Vec<(f64, f64, f64, f64)> = Vec::new();
            for by in cy.saturating_sub(1)..=(cy + 1).min(rows - 1) {
                for bx in cx.saturating_sub(1)..=(cx + 1).min(cols - 1) {
                    for &j in &buckets[by * cols + bx] {
                        let s = &samples.samples[j];
                        let (dx, dy) = (s.x - px, s.y - py);
                        let d2 = dx * dx + dy * dy;
                        if d2 > reach * reach {
                            continue;
                        }
                        let g = (-d2 * inv_two_h2).exp();
                        let wt = g * s.weight;
                        mass += g;
                        sw += wt;
                        mx += wt * dx;
                        my += wt * dy;
                        mt += wt * s.t;
                        local.push((dx, dy, s.t, wt));
                    }
                }
            }
            if mass < MIN_LOCAL_MASS || !(sw > 0.0) {
                return (plane.eval(px, py), true);
            }
            mx /= sw;
            my /= sw;
            mt /= sw;
            let (mut sxx, mut sxy, mut syy, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(dx, dy, t, wt) in &local {
                let (ex, ey, et) = (dx - mx, dy - my, t - mt);
                sxx += wt * ex * ex;
                sxy += wt * ex * ey;
                syy += wt * ey * ey;
                sxt += wt * ex * et;
                syt += wt * ey * et;
            }
            let det = sxx * syy - sxy * sxy;
            // Positions must spread over a meaningful fraction of the kernel.
            let min_spread = 1e-3 * sw * bandwidth * bandwidth;
            if !(det > min_spread * min_spread) {
                return (plane.eval(px, py), true);
            }
            let a = (syy * sxt - sxy * syt) / det;
            let b = (sxx * syt - sxy * sxt) / det;
            // Intercept at the query point (offset 0,0).
            (mt - a * mx - b * my, false)
        })
        .collect();

    let fallback = evaluated.iter().filter(|e| e.1).count();
    let values = evaluated.iter().map(|&(t, _)| clamp_to_range(t, samples.t_range)).collect();
    Ok(SurfaceField {
        times: ScalarField::from_vec_unchecked(w, h, values),
        kind: FitKind::Local,
        diagnostics: FitDiagnostics {
            residual_scale: scale,
            inlier_fraction: inliers as f64 / samples.samples.len() as f64,
            plane,
            fallback_fraction: fallback as f64 / (w * h) as f64,
        },
    })
}
