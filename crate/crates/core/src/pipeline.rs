//! End-to-end operations with their rendered outputs. The command line and
//! the HTTP service both go through these functions, so equal inputs give
//! byte-equal files.

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gabor::{scale_orientation_descriptor, OrientationMap};
use crate::imagecore::io::{encode_color, encode_field, encode_rgb_png, signed_to_display, RasterFormat};
use crate::imagecore::{ColorImage, ScalarField};
use crate::spectv::{filter, spectrum, transform_with_trajectory, SpectralStack, Spectrum, TransferFunction};
use crate::surface::{decompose_stack, export_diagnostics, Decomposition, FitDiagnostics, FitKind};
use crate::texapp::{manipulate, ManipulationSpec};

/// Forward transform of the luminance, plus the number of flow steps whose
/// inner solver hit its iteration cap.
pub fn run_transform(luma: &ScalarField, config: &RunConfig) -> Result<(SpectralStack, usize)> {
    let grid = config.grid.build()?;
    let out = transform_with_trajectory(luma, &grid, &config.flow)?;
    let capped = out.reports().iter().filter(|r| !r.converged).count();
    Ok((out.stack, capped))
}

/// Signed layer rendered with zero at mid-gray and `±max|v|` at the ends.
pub fn render_signed_png(field: &ScalarField) -> Result<Vec<u8>> {
    encode_field(&signed_to_display(field, field.max_abs()), RasterFormat::Png)
}

pub fn render_png(field: &ScalarField) -> Result<Vec<u8>> {
    encode_field(field, RasterFormat::Png)
}

pub fn render_color_png(image: &ColorImage) -> Result<Vec<u8>> {
    encode_color(image, RasterFormat::Png)
}

const PLOT_W: usize = 640;
const PLOT_H: usize = 360;
const PLOT_PAD: usize = 30;

/// Line plot of the spectrum against log time.
pub fn spectrum_plot_png(s: &Spectrum) -> Result<Vec<u8>> {
    let mut px = vec![[1.0, 1.0, 1.0]; PLOT_W * PLOT_H];
    let (x0, x1) = (PLOT_PAD as f64, (PLOT_W - PLOT_PAD) as f64);
    let (y0, y1) = ((PLOT_H - PLOT_PAD) as f64, PLOT_PAD as f64);
    let mut line = |a: (f64, f64), b: (f64, f64), color: [f64; 3]| {
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for i in 0..=n {
            let s = i as f64 / n as f64;
            let x = (a.0 + s * (b.0 - a.0)).round() as usize;
            let y = (a.1 + s * (b.1 - a.1)).round() as usize;
            if x < PLOT_W && y < PLOT_H {
                px[y * PLOT_W + x] = color;
            }
        }
    };
    let black = [0.0, 0.0, 0.0];
    line((x0, y0), (x1, y0), black);
    line((x0, y0), (x0, y1), black);
    if s.len() >= 2 {
        let (lt0, lt1) = (s.times[0].ln(), s.times[s.len() - 1].ln());
        let top = s.values.iter().cloned().fold(0.0, f64::max);
        let top = if top > 0.0 { top } else { 1.0 };
        let pt = |k: usize| {
            let fx = if lt1 > lt0 { (s.times[k].ln() - lt0) / (lt1 - lt0) } else { 0.0 };
            (x0 + fx * (x1 - x0), y0 + s.values[k] / top * (y1 - y0))
        };
        for k in 1..s.len() {
            line(pt(k - 1), pt(k), [0.1, 0.3, 0.8]);
        }
    }
    encode_rgb_png(PLOT_W, PLOT_H, &px)
}

/// Writes `stack/`, `spectrum.csv` and `spectrum.png` under `dir`.
pub fn write_transform(stack: &SpectralStack, dir: &Path) -> Result<()> {
    crate::spectv::save_stack(stack, dir.join("stack"))?;
    let s = spectrum(stack);
    write_file(&dir.join("spectrum.csv"), s.to_csv().as_bytes())?;
    write_file(&dir.join("spectrum.png"), &spectrum_plot_png(&s)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandStats {
    pub t1: f64,
    pub t2: f64,
    pub layers: usize,
    /// Squared L2 norm of the band image.
    pub energy: f64,
    /// `energy` relative to the squared L2 norm of `f - mean f`.
    pub fraction: f64,
}

pub struct BandOutput {
    pub image: ScalarField,
    pub png: Vec<u8>,
    pub stats: BandStats,
}

/// Ideal band-pass over `[t1, t2]`. With `include_residual` the residual is
/// added and the result rendered as an ordinary image; otherwise the signed
/// band is rendered around mid-gray.
pub fn band_filter(stack: &SpectralStack, t1: f64, t2: f64, include_residual: bool) -> Result<BandOutput> {
    if !(t1 <= t2) {
        return Err(Error::Range(format!("band needs t1 <= t2, got [{t1}, {t2}]")));
    }
    let h = TransferFunction::band(stack, t1, t2);
    let layers = match &h {
        TransferFunction::Scalar(v) => v.iter().filter(|&&x| x != 0.0).count(),
        TransferFunction::Spatial(_) => unreachable!("band transfer is scalar"),
    };
    let band = filter(stack, &h, false)?;
    let energy = band.dot(&band);
    let rec = crate::spectv::reconstruct(stack);
    let m = rec.mean();
    let total: f64 = rec.values().iter().map(|v| (v - m) * (v - m)).sum();
    let fraction = if total > 0.0 { energy / total } else { 0.0 };
    let (image, png) = if include_residual {
        let img = band.add(stack.residual())?;
        let png = render_png(&img)?;
        (img, png)
    } else {
        let png = render_signed_png(&band)?;
        (band, png)
    };
    Ok(BandOutput { image, png, stats: BandStats { t1, t2, layers, energy, fraction } })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitManifest {
    pub t1: f64,
    pub t2: f64,
    pub fit: FitKind,
    pub alpha: f64,
    pub pct_lo: f64,
    pub pct_hi: f64,
    pub margin: usize,
    pub bandwidth: f64,
    pub samples: usize,
    pub diagnostics: FitDiagnostics,
}

pub struct DecomposeOutput {
    pub decomposition: Decomposition,
    pub texture_png: Vec<u8>,
    pub residual_png: Vec<u8>,
    pub manifest: FitManifest,
}

/// Separation-surface decomposition of the luminance stack; the residual is
/// rendered with the chroma of `image`.
pub fn decompose_image(image: &ColorImage, stack: &SpectralStack, config: &RunConfig) -> Result<DecomposeOutput> {
    let (t1, t2) = config.band()?;
    let dc = config.surface.decompose_config();
    let decomposition = decompose_stack(stack, t1, t2, &dc)?;
    let texture_png = render_signed_png(&decomposition.texture)?;
    let residual_png = render_color_png(&image.with_luma(decomposition.residual.clone())?)?;
    let (w, h) = stack.dims();
    let manifest = FitManifest {
        t1,
        t2,
        fit: dc.fit,
        alpha: dc.alpha,
        pct_lo: dc.pct_lo,
        pct_hi: dc.pct_hi,
        margin: dc.margin,
        bandwidth: dc.resolved_bandwidth(w, h),
        samples: decomposition.diagnostics.samples.len(),
        diagnostics: decomposition.diagnostics.surface.diagnostics.clone(),
    };
    Ok(DecomposeOutput { decomposition, texture_png, residual_png, manifest })
}

/// Writes `texture.png`, `residual.png`, `fit.json` and `diagnostics/`.
pub fn write_decompose(out: &DecomposeOutput, dir: &Path) -> Result<()> {
    write_file(&dir.join("texture.png"), &out.texture_png)?;
    write_file(&dir.join("residual.png"), &out.residual_png)?;
    write_file(&dir.join("fit.json"), to_json(&out.manifest)?.as_bytes())?;
    export_diagnostics(&out.decomposition.diagnostics, dir.join("diagnostics"))?;
    Ok(())
}

/// Decompose, then scale the texture by the configured gain.
pub fn manipulate_image(
    image: &ColorImage,
    stack: &SpectralStack,
    config: &RunConfig,
    mask: Option<ScalarField>,
) -> Result<(ColorImage, Vec<u8>)> {
    let (t1, t2) = config.band()?;
    let decomposition = decompose_stack(stack, t1, t2, &config.surface.decompose_config())?;
    let mut spec = ManipulationSpec::new(config.manipulate.gain);
    spec.clamp = config.manipulate.clamp;
    spec.mask = mask;
    let out = manipulate(image, &decomposition.texture, &spec)?;
    let png = render_color_png(&out)?;
    Ok((out, png))
}

/// Layers analysed by the orientation descriptor: the configured band if
/// one is set, otherwise one layer per octave of the time grid.
pub fn sod_layers(stack: &SpectralStack, config: &RunConfig) -> Result<Vec<(String, ScalarField)>> {
    if let (Some(lo), Some(hi)) = (config.band_lo, config.band_hi) {
        let band = filter(stack, &TransferFunction::band(stack, lo, hi), false)?;
        return Ok(vec![("band".to_string(), band)]);
    }
    let times = stack.layer_times();
    let mut out = Vec::new();
    let mut lo = times[0];
    let last = times[times.len() - 1];
    while lo <= last {
        let hi = 2.0 * lo;
        let ind: Vec<f64> = times.iter().map(|&t| if t >= lo && t < hi { 1.0 } else { 0.0 }).collect();
        if ind.iter().any(|&x| x != 0.0) {
            let layer = filter(stack, &TransferFunction::Scalar(ind), false)?;
            out.push((format!("octave_{:02}", out.len()), layer));
        }
        lo = hi;
    }
    Ok(out)
}

pub fn orientation_maps(layers: &[(String, ScalarField)], config: &RunConfig) -> Result<Vec<OrientationMap>> {
    let fields: Vec<ScalarField> = layers.iter().map(|(_, f)| f.clone()).collect();
    scale_orientation_descriptor(&fields, &config.gabor.bank()?, config.gabor.confidence)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the resolved configuration as `config.toml`.
pub fn write_config_echo(config: &RunConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join("config.toml"), config.to_toml_string().as_bytes())
}
