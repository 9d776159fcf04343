//! Separation surfaces and texture strata.
//!
//! Pipeline: salient time map (per-pixel argmax of `|φ|` inside a band),
//! percentile filtering of that map, regression of a smooth surface through
//! the survivors, a band (the stratum) around the surface, and finally
//! integration of the layers inside the stratum.

mod export;
mod fit;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::ScalarField;
use crate::spectv::{reconstruct, spectrum, transform, SpectralStack, Spectrum, TransferFunction};
use crate::tvflow::{FlowParams, TimeGrid};

pub use export::{export_diagnostics, DiagnosticsManifest};
pub use fit::{
    fit_plane, fit_surface_local, robust_plane, FitDiagnostics, FitKind, PlaneCoefficients, SurfaceField,
    IRLS_ROUNDS, TUKEY_C,
};

/// Fewest regression samples accepted by the fits.
pub const MIN_SAMPLES: usize = 10;
/// Upward stratum allowance relative to the downward half-width.
pub const UPPER_BAND_FACTOR: f64 = 1.5;

/// Per-pixel time of maximal `|φ|` inside a band, and that maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeMap {
    width: usize,
    height: usize,
    times: Vec<Option<f64>>,
    salience: ScalarField,
    band: (f64, f64),
}

impl TimeMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn time(&self, x: usize, y: usize) -> Option<f64> {
        self.times[y * self.width + x]
    }

    pub fn times(&self) -> &[Option<f64>] {
        &self.times
    }

    pub fn salience(&self) -> &ScalarField {
        &self.salience
    }

    /// Grid times of the first and last layer inside the band.
    pub fn band(&self) -> (f64, f64) {
        self.band
    }

    pub fn present_count(&self) -> usize {
        self.times.iter().filter(|t| t.is_some()).count()
    }

    /// Times as a field, with absent pixels set to `fill`.
    pub fn to_field(&self, fill: f64) -> ScalarField {
        ScalarField::from_vec_unchecked(self.width, self.height, self.times.iter().map(|t| t.unwrap_or(fill)).collect())
    }
}

pub fn salient_time_map(stack: &SpectralStack, t1: f64, t2: f64) -> Result<TimeMap> {
    if !(t1 < t2) {
        return Err(Error::Range(format!("band needs t1 < t2, got [{t1}, {t2}]")));
    }
    let selected: Vec<usize> = (0..stack.len()).filter(|&k| {
        let t = stack.layer_time(k);
        t >= t1 && t <= t2
    }).collect();
    let (Some(&first), Some(&last)) = (selected.first(), selected.last()) else {
        return Err(Error::Range(format!("no grid time lies in [{t1}, {t2}]")));
    };
    let (w, h) = stack.dims();
    let best: Vec<(Option<f64>, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let mut best_k = None;
            let mut best_v = 0.0;
            for &k in &selected {
                let v = stack.layer(k).values()[i].abs();
                // Strict comparison keeps the earliest time on ties.
                if v > best_v {
                    best_v = v;
                    best_k = Some(k);
                }
            }
            (best_k.map(|k| stack.layer_time(k)), best_v)
        })
        .collect();
    Ok(TimeMap {
        width: w,
        height: h,
        times: best.iter().map(|b| b.0).collect(),
        salience: ScalarField::from_vec_unchecked(w, h, best.iter().map(|b| b.1).collect()),
        band: (stack.layer_time(first), stack.layer_time(last)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub weight: f64,
}

/// Regression input: filtered samples of a time map.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub width: usize,
    pub height: usize,
    /// Surface values are clamped to this range.
    pub t_range: (f64, f64),
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Linear-interpolated percentile (`p` in `[0, 100]`) of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const DEFAULT_PCT_LO: f64 = 85.0;
pub const DEFAULT_PCT_HI: f64 = 95.0;
pub const DEFAULT_MARGIN: usize = 8;

/// Keep interior pixels whose salience lies between two percentiles of the
/// interior saliences. The salience is also the regression weight.
pub fn filter_time_map(tm: &TimeMap, pct_lo: f64, pct_hi: f64, boundary_margin: usize) -> Result<SampleSet> {
    if !(0.0..=100.0).contains(&pct_lo) || !(0.0..=100.0).contains(&pct_hi) || pct_lo > pct_hi {
        return Err(Error::Parameter(format!("invalid percentile range [{pct_lo}, {pct_hi}]")));
    }
    let (w, h) = tm.dims();
    let interior = |x: usize, y: usize| {
        x >= boundary_margin && y >= boundary_margin && x + boundary_margin < w && y + boundary_margin < h
    };
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if let (true, Some(t)) = (interior(x, y), tm.time(x, y)) {
                candidates.push((x, y, t, tm.salience.get(x, y)));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::InsufficientData { found: 0, needed: MIN_SAMPLES });
    }
    let mut sal: Vec<f64> = candidates.iter().map(|c| c.3).collect();
    sal.sort_by(|a, b| a.total_cmp(b));
    let lo = percentile(&sal, pct_lo);
    let hi = percentile(&sal, pct_hi);
    let samples: Vec<Sample> = candidates
        .into_iter()
        .filter(|c| c.3 >= lo && c.3 <= hi)
        .map(|(x, y, t, s)| Sample { x: x as f64, y: y as f64, t, weight: s })
        .collect();
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData { found: samples.len(), needed: MIN_SAMPLES });
    }
    Ok(SampleSet { width: w, height: h, t_range: tm.band(), samples })
}

/// Per-pixel integration interval `[lo, hi]` around the surface.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratum {
    pub surface: ScalarField,
    pub lo: ScalarField,
    pub hi: ScalarField,
    /// Downward half-width `alpha·T_s`.
    pub half_width: ScalarField,
}

impl Stratum {
    pub fn contains(&self, i: usize, t: f64) -> bool {
        t >= self.lo.values()[i] && t <= self.hi.values()[i]
    }

    /// Spatial indicator transfer function equivalent to this stratum.
    pub fn transfer(&self, stack: &SpectralStack) -> TransferFunction {
        let (w, h) = stack.dims();
        TransferFunction::Spatial(
            stack
                .layer_times()
                .iter()
                .map(|&t| {
                    ScalarField::from_vec_unchecked(
                        w,
                        h,
                        (0..w * h).map(|i| if self.contains(i, t) { 1.0 } else { 0.0 }).collect(),
                    )
                })
                .collect(),
        )
    }

    /// Interval covering every layer time at every pixel.
    pub fn full(stack: &SpectralStack) -> Stratum {
        let (w, h) = stack.dims();
        let times = stack.layer_times();
        let (first, last) = (times[0], times[times.len() - 1]);
        Stratum {
            surface: ScalarField::filled(w, h, 0.5 * (first + last)),
            lo: ScalarField::filled(w, h, first),
            hi: ScalarField::filled(w, h, last),
            half_width: ScalarField::filled(w, h, 0.5 * (last - first)),
        }
    }

    /// Interval containing no layer time.
    pub fn empty(stack: &SpectralStack) -> Stratum {
        let (w, h) = stack.dims();
        Stratum {
            surface: ScalarField::zeros(w, h),
            lo: ScalarField::filled(w, h, -2.0),
            hi: ScalarField::filled(w, h, -1.0),
            half_width: ScalarField::zeros(w, h),
        }
    }
}

pub const DEFAULT_ALPHA: f64 = 0.35;

/// Band `[T_s - w, T_s + 1.5·w]` with `w = alpha·T_s`, clipped to
/// `[t1/2, 2·t2]` and to the layer times of `grid`. An interval that contains
/// no layer time collapses onto the layer time nearest the surface.
pub fn make_stratum(surface: &SurfaceField, alpha: f64, t1: f64, t2: f64, grid: &TimeGrid) -> Result<Stratum> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("alpha must be non-negative, got {alpha}")));
    }
    let layer_times = grid.interior();
    let (g_lo, g_hi) = (layer_times[0], layer_times[layer_times.len() - 1]);
    let clip_lo = (0.5 * t1).max(g_lo);
    let clip_hi = (2.0 * t2).min(g_hi);
    let ts = &surface.times;
    let (w, h) = ts.dims();
    let n = w * h;
    let (mut lo, mut hi, mut half) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &t in ts.values() {
        let width = alpha * t;
        let mut a = (t - width).max(clip_lo);
        let mut b = (t + UPPER_BAND_FACTOR * width).min(clip_hi);
        if !layer_times.iter().any(|&tk| tk >= a && tk <= b) {
            let nearest = layer_times
                .iter()
                .copied()
                .min_by(|x, y| (x - t).abs().total_cmp(&(y - t).abs()))
                .expect("grid has interior nodes");
            a = nearest;
            b = nearest;
        }
        lo.push(a);
        hi.push(b);
        half.push(width);
    }
    Ok(Stratum {
        surface: ts.clone(),
        lo: ScalarField::from_vec_unchecked(w, h, lo),
        hi: ScalarField::from_vec_unchecked(w, h, hi),
        half_width: ScalarField::from_vec_unchecked(w, h, half),
    })
}

/// Integrate the layers inside the stratum. Returns `(texture, f - texture)`.
pub fn extract_stratum(stack: &SpectralStack, stratum: &Stratum) -> Result<(ScalarField, ScalarField)> {
    stack.residual().check_dims(&stratum.lo)?;
    let (w, h) = stack.dims();
    let weights = stack.weights();
    let times = stack.layer_times();
    let texture: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (lo, hi) = (stratum.lo.values()[i], stratum.hi.values()[i]);
            let mut acc = 0.0;
            for (k, &t) in times.iter().enumerate() {
                if t >= lo && t <= hi {
                    acc += weights[k] * stack.layer(k).values()[i];
                }
            }
            acc
        })
        .collect();
    let texture = ScalarField::from_vec_unchecked(w, h, texture);
    let residual = reconstruct(stack).sub(&texture)?;
    Ok((texture, residual))
}

/// Settings for [`decompose`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    pub fit: FitKind,
    pub alpha: f64,
    pub pct_lo: f64,
    pub pct_hi: f64,
    pub margin: usize,
    /// Local-fit bandwidth in pixels; `None` means image diagonal / 6.
    pub bandwidth: Option<f64>,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            fit: FitKind::Plane,
            alpha: DEFAULT_ALPHA,
            pct_lo: DEFAULT_PCT_LO,
            pct_hi: DEFAULT_PCT_HI,
            margin: DEFAULT_MARGIN,
            bandwidth: None,
        }
    }
}

impl DecomposeConfig {
    pub fn resolved_bandwidth(&self, width: usize, height: usize) -> f64 {
        self.bandwidth.unwrap_or_else(|| (width as f64).hypot(height as f64) / 6.0)
    }
}

/// Intermediate products of a decomposition, for inspection and export.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub spectrum: Spectrum,
    pub time_map: TimeMap,
    pub samples: SampleSet,
    pub surface: SurfaceField,
    pub stratum: Stratum,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub texture: ScalarField,
    pub residual: ScalarField,
    pub diagnostics: Diagnostics,
}

/// Full pipeline on a precomputed stack.
pub fn decompose_stack(stack: &SpectralStack, t1: f64, t2: f64, config: &DecomposeConfig) -> Result<Decomposition> {
    if !(t1 < t2) {
        return Err(Error::Range(format!("band needs t1 < t2, got [{t1}, {t2}]")));
    }
    let time_map = salient_time_map(stack, t1, t2)?;
    let samples = filter_time_map(&time_map, config.pct_lo, config.pct_hi, config.margin)?;
    let surface = match config.fit {
        FitKind::Plane => fit_plane(&samples)?,
        FitKind::Local => {
            let (w, h) = stack.dims();
            fit_surface_local(&samples, config.resolved_bandwidth(w, h))?
        }
    };
    let stratum = make_stratum(&surface, config.alpha, t1, t2, stack.grid())?;
    let (texture, residual) = extract_stratum(stack, &stratum)?;
    Ok(Decomposition {
        texture,
        residual,
        diagnostics: Diagnostics { spectrum: spectrum(stack), time_map, samples, surface, stratum },
    })
}

/// Transform `f` and run the separation-surface pipeline on it.
pub fn decompose(
    f: &ScalarField,
    t1: f64,
    t2: f64,
    grid: &TimeGrid,
    flow: &FlowParams,
    config: &DecomposeConfig,
) -> Result<Decomposition> {
    if !(t1 < t2) {
        return Err(Error::Range(format!("band needs t1 < t2, got [{t1}, {t2}]")));
    }
    let stack = transform(f, grid, flow)?;
    decompose_stack(&stack, t1, t2, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectv::{filter, transform};
    use crate::synth;
    use crate::tvflow::FlowParams;

    fn plane_surface(w: usize, h: usize, t: f64) -> SurfaceField {
        SurfaceField {
            times: ScalarField::filled(w, h, t),
            kind: FitKind::Plane,
            diagnostics: FitDiagnostics {
                residual_scale: 0.0,
                inlier_fraction: 1.0,
                plane: PlaneCoefficients { a: 0.0, b: 0.0, c: t },
                fallback_fraction: 0.0,
            },
        }
    }

    #[test]
    fn stratum_formula() {
        let grid = TimeGrid::uniform(20.0, 200).unwrap();
        let s = make_stratum(&plane_surface(4, 3, 4.0), 0.35, 2.0, 8.0, &grid).unwrap();
        assert!(s.lo.values().iter().all(|&v| (v - 2.6).abs() < 1e-12));
        assert!(s.hi.values().iter().all(|&v| (v - 6.1).abs() < 1e-12));
    }

    #[test]
    fn zero_alpha_snaps_to_nearest_node() {
        let grid = TimeGrid::uniform(10.0, 10).unwrap();
        let s = make_stratum(&plane_surface(2, 2, 4.3), 0.0, 1.0, 9.0, &grid).unwrap();
        assert!(s.lo.values().iter().all(|&v| v == 4.0));
        assert!(s.hi.values().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn stratum_brackets_surface() {
        let grid = TimeGrid::default();
        let surf = SurfaceField {
            times: ScalarField::from_fn(16, 16, |x, y| 0.5 + 0.1 * x as f64 + 0.05 * y as f64),
            ..plane_surface(16, 16, 1.0)
        };
        let s = make_stratum(&surf, 0.35, 0.4, 3.0, &grid).unwrap();
        for i in 0..256 {
            let t = s.surface.values()[i];
            assert!(s.lo.values()[i] <= t && t <= s.hi.values()[i]);
        }
    }

    #[test]
    fn percentile_band_keeps_expected_fraction() {
        let (w, h) = (40, 30);
        let stack_free = TimeMap {
            width: w,
            height: h,
            times: vec![Some(1.0); w * h],
            salience: ScalarField::from_fn(w, h, |x, y| (y * w + x) as f64),
            band: (0.5, 2.0),
        };
        let s = filter_time_map(&stack_free, 85.0, 95.0, 0).unwrap();
        let frac = s.len() as f64 / (w * h) as f64;
        assert!((frac - 0.10).abs() <= 2.0 / (w * h) as f64, "kept {frac}");
    }

    #[test]
    fn margin_and_outliers_are_excluded() {
        let (w, h) = (40, 40);
        let sal = ScalarField::from_fn(w, h, |x, y| {
            if (x * 31 + y * 17) % 20 == 0 {
                1e6
            } else {
                ((x * 13 + y * 7) % 97) as f64
            }
        });
        let tm = TimeMap { width: w, height: h, times: vec![Some(2.0); w * h], salience: sal, band: (1.0, 3.0) };
        let s = filter_time_map(&tm, 85.0, 95.0, 4).unwrap();
        assert!(s.samples.iter().all(|p| p.weight < 1e6));
        assert!(s.samples.iter().all(|p| p.x >= 4.0 && p.y >= 4.0 && p.x < 36.0 && p.y < 36.0));
    }

    #[test]
    fn constant_image_has_no_salient_pixels() {
        let f = ScalarField::filled(24, 24, 0.3);
        let stack = transform(&f, &TimeGrid::default(), &FlowParams::default()).unwrap();
        let tm = salient_time_map(&stack, 0.5, 4.0).unwrap();
        assert_eq!(tm.present_count(), 0);
        assert!(matches!(filter_time_map(&tm, 85.0, 95.0, 2), Err(Error::InsufficientData { .. })));
        let cfg = DecomposeConfig::default();
        assert!(matches!(decompose_stack(&stack, 0.5, 4.0, &cfg), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn empty_band_is_range_error() {
        let f = synth::disc(16, 16, 4.0, 1.0, 0.0);
        let stack = transform(&f, &TimeGrid::default(), &FlowParams::default()).unwrap();
        assert!(matches!(salient_time_map(&stack, 100.0, 200.0), Err(Error::Range(_))));
        assert!(matches!(salient_time_map(&stack, 2.0, 2.0), Err(Error::Range(_))));
    }

    #[test]
    fn full_and_empty_strata() {
        let f = synth::natural_like(24, 24, 9);
        let stack = transform(&f, &TimeGrid::default(), &FlowParams::default()).unwrap();
        let (tex, res) = extract_stratum(&stack, &Stratum::full(&stack)).unwrap();
        assert!(tex.add(&res).unwrap().sub(&f).unwrap().max_abs() < 1e-10);
        assert!(res.sub(stack.residual()).unwrap().max_abs() < 1e-10);

        let (tex, res) = extract_stratum(&stack, &Stratum::empty(&stack)).unwrap();
        assert_eq!(tex.max_abs(), 0.0);
        assert!(res.sub(&f).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn extraction_matches_spatial_filter() {
        let f = synth::natural_like(20, 20, 4);
        let stack = transform(&f, &TimeGrid::default(), &FlowParams::default()).unwrap();
        let surf = SurfaceField {
            times: ScalarField::from_fn(20, 20, |x, _| 0.3 + 0.2 * x as f64),
            ..plane_surface(20, 20, 1.0)
        };
        let st = make_stratum(&surf, 0.35, 0.2, 5.0, stack.grid()).unwrap();
        let (tex, _) = extract_stratum(&stack, &st).unwrap();
        let via_filter = filter(&stack, &st.transfer(&stack), false).unwrap();
        assert!(tex.sub(&via_filter).unwrap().max_abs() < 1e-12);
    }
}
