//! Writes the intermediate products of a decomposition to a directory:
//! raw `f32` rasters plus a JSON manifest describing them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::io::encode_f32_raw;

use super::{Diagnostics, FitDiagnostics, FitKind, Sample};

pub const DIAGNOSTICS_MANIFEST: &str = "diagnostics.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsManifest {
    pub width: usize,
    pub height: usize,
    pub band: (f64, f64),
    pub fit: FitKind,
    pub fit_diagnostics: FitDiagnostics,
    pub sample_count: usize,
    pub samples: Vec<Sample>,
    /// Raster files, each `width·height` little-endian `f32` values.
    pub rasters: Vec<String>,
    pub spectrum_times: Vec<f64>,
    pub spectrum_values: Vec<f64>,
}

/// Absent salient times are written as NaN.
pub fn export_diagnostics(diag: &Diagnostics, dir: impl AsRef<Path>) -> Result<DiagnosticsManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (width, height) = diag.time_map.dims();
    let rasters = [
        ("time_map.f32", diag.time_map.to_field(f64::NAN)),
        ("salience.f32", diag.time_map.salience().clone()),
        ("surface.f32", diag.surface.times.clone()),
        ("stratum_lo.f32", diag.stratum.lo.clone()),
        ("stratum_hi.f32", diag.stratum.hi.clone()),
    ];
    for (name, field) in &rasters {
        let p = dir.join(name);
        std::fs::write(&p, encode_f32_raw(field)).map_err(|e| Error::io(p, e))?;
    }
    let manifest = DiagnosticsManifest {
        width,
        height,
        band: diag.time_map.band(),
        fit: diag.surface.kind,
        fit_diagnostics: diag.surface.diagnostics.clone(),
        sample_count: diag.samples.len(),
        samples: diag.samples.samples.clone(),
        rasters: rasters.iter().map(|(n, _)| n.to_string()).collect(),
        spectrum_times: diag.spectrum.times.clone(),
        spectrum_values: diag.spectrum.values.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let p = dir.join(DIAGNOSTICS_MANIFEST);
    std::fs::write(&p, json).map_err(|e| Error::io(p, e))?;
    Ok(manifest)
}
