//! On-disk stack layout: `manifest.json` plus one raw little-endian `f32`
//! raster per layer, one for the residual and one for the terminal slope.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::io::{decode_f32_raw, encode_f32_raw};
use crate::tvflow::TimeGrid;

use super::SpectralStack;

pub const STACK_MANIFEST: &str = "manifest.json";
const FORMAT_TAG: &str = "tvstrata-stack";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    width: usize,
    height: usize,
    times: Vec<f64>,
    mean_value: f64,
    layers: Vec<String>,
    residual: String,
    terminal_slope: String,
}

fn layer_name(k: usize) -> String {
    format!("phi_{k:04}.f32")
}

pub fn save_stack(stack: &SpectralStack, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (width, height) = stack.dims();
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        width,
        height,
        times: stack.grid().times().to_vec(),
        mean_value: stack.mean_value(),
        layers: (0..stack.len()).map(layer_name).collect(),
        residual: "residual.f32".into(),
        terminal_slope: "terminal_slope.f32".into(),
    };
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    for (name, layer) in manifest.layers.iter().zip(stack.layers()) {
        write(name, &encode_f32_raw(layer))?;
    }
    write(&manifest.residual, &encode_f32_raw(stack.residual()))?;
    write(&manifest.terminal_slope, &encode_f32_raw(stack.terminal_slope()))?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write(STACK_MANIFEST, json.as_bytes())
}

pub fn load_stack(dir: impl AsRef<Path>) -> Result<SpectralStack> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read(&p).map_err(|e| Error::io(p, e))
    };
    let manifest: Manifest =
        serde_json::from_slice(&read(STACK_MANIFEST)?).map_err(|e| Error::Format(format!("stack manifest: {e}")))?;
    if manifest.format != FORMAT_TAG || manifest.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported stack format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let (w, h) = (manifest.width, manifest.height);
    let grid = TimeGrid::from_times(manifest.times)?;
    let layers = manifest
        .layers
        .iter()
        .map(|name| decode_f32_raw(&read(name)?, w, h))
        .collect::<Result<Vec<_>>>()?;
    let residual = decode_f32_raw(&read(&manifest.residual)?, w, h)?;
    let slope = decode_f32_raw(&read(&manifest.terminal_slope)?, w, h)?;
    SpectralStack::from_parts(grid, layers, residual, slope, manifest.mean_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectv::transform;
    use crate::synth;
    use crate::tvflow::FlowParams;

    #[test]
    fn stack_round_trip_is_bit_exact_after_first_save() {
        let f = synth::natural_like(20, 16, 2);
        let grid = TimeGrid::geometric(0.1, 3.0, 8).unwrap();
        let stack = transform(&f, &grid, &FlowParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        save_stack(&stack, &a).unwrap();
        let loaded = load_stack(&a).unwrap();
        assert_eq!(loaded.grid().times(), stack.grid().times());
        assert_eq!(loaded.mean_value(), stack.mean_value());
        for (x, y) in loaded.layers().iter().zip(stack.layers()) {
            for (p, q) in x.values().iter().zip(y.values()) {
                assert_eq!(*p, *q as f32 as f64);
            }
        }
        save_stack(&loaded, &b).unwrap();
        for entry in std::fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
        }
        assert_eq!(load_stack(&b).unwrap(), loaded);
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_stack(dir.path()), Err(Error::Io { .. })));
    }
}
