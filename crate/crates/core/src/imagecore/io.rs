//! PNG and PGM/PPM reading and writing.
//!
//! Samples are normalized to `[0, 1]` on load. On save, values are clamped to
//! `[0, 1]`; PGM/PPM files are written with 16-bit samples and PNG files with
//! 8-bit samples.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};

use super::{ColorImage, ScalarField};

/// Output encoding for rasters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterFormat {
    /// 8-bit PNG.
    Png,
    /// 16-bit binary PGM (gray) or PPM (color).
    Pnm,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(RasterFormat::Png),
            Some("pgm" | "ppm" | "pnm") => Ok(RasterFormat::Pnm),
            _ => Err(Error::Format(format!("cannot infer raster format from {}", path.display()))),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ColorImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    decode(reader)
}

pub fn decode_image_bytes(bytes: &[u8]) -> Result<ColorImage> {
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Format(e.to_string()))?;
    decode(reader)
}

fn decode<R: std::io::BufRead + std::io::Seek>(reader: ImageReader<R>) -> Result<ColorImage> {
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::Format(format!("{other:?} images are not supported"))),
        None => return Err(Error::Format("unrecognized image data".into())),
    }
    let img = reader.decode().map_err(|e| Error::Format(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Format("empty image".into()));
    }
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let y = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Ok(ColorImage::from_gray(ScalarField::from_vec_unchecked(w, h, y)))
        }
        DynamicImage::ImageLuma16(buf) => {
            let y = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
            Ok(ColorImage::from_gray(ScalarField::from_vec_unchecked(w, h, y)))
        }
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let buf = img.to_luma16();
            let y = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
            Ok(ColorImage::from_gray(ScalarField::from_vec_unchecked(w, h, y)))
        }
        DynamicImage::ImageRgb8(buf) => rgb_from_samples(w, h, buf.into_raw(), 255.0),
        other => rgb_from_samples(w, h, other.to_rgb16().into_raw(), 65535.0),
    }
}

fn rgb_from_samples<T: Into<f64> + Copy>(w: usize, h: usize, raw: Vec<T>, max: f64) -> Result<ColorImage> {
    let n = w * h;
    let (mut r, mut g, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in raw.chunks_exact(3) {
        r.push(px[0].into() / max);
        g.push(px[1].into() / max);
        b.push(px[2].into() / max);
    }
    if r.iter().zip(&g).zip(&b).all(|((r, g), b)| r == g && g == b) {
        return Ok(ColorImage::from_gray(ScalarField::from_vec_unchecked(w, h, r)));
    }
    ColorImage::from_rgb(
        &ScalarField::from_vec_unchecked(w, h, r),
        &ScalarField::from_vec_unchecked(w, h, g),
        &ScalarField::from_vec_unchecked(w, h, b),
    )
}

#[inline]
fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

#[inline]
fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn field_to_dynamic(field: &ScalarField, format: RasterFormat) -> DynamicImage {
    let (w, h) = (field.width() as u32, field.height() as u32);
    match format {
        RasterFormat::Png => {
            let raw = field.values().iter().map(|&v| quantize8(v)).collect();
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("sized buffer"))
        }
        RasterFormat::Pnm => {
            let raw = field.values().iter().map(|&v| quantize16(v)).collect();
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("sized buffer"))
        }
    }
}

fn color_to_dynamic(img: &ColorImage, format: RasterFormat) -> DynamicImage {
    if img.is_achromatic() {
        return field_to_dynamic(img.luma(), format);
    }
    let (w, h) = img.dims();
    let (r, g, b) = img.to_rgb();
    let interleaved = (0..w * h).flat_map(|i| [r.values()[i], g.values()[i], b.values()[i]]);
    match format {
        RasterFormat::Png => {
            let raw = interleaved.map(quantize8).collect();
            DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, raw).expect("sized buffer"))
        }
        RasterFormat::Pnm => {
            let raw = interleaved.map(quantize16).collect();
            DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w as u32, h as u32, raw).expect("sized buffer"))
        }
    }
}

fn encode(img: &DynamicImage, format: RasterFormat) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    let fmt = match format {
        RasterFormat::Png => ImageFormat::Png,
        RasterFormat::Pnm => ImageFormat::Pnm,
    };
    img.write_to(&mut out, fmt).map_err(|e| Error::Format(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn encode_field(field: &ScalarField, format: RasterFormat) -> Result<Vec<u8>> {
    encode(&field_to_dynamic(field, format), format)
}

pub fn encode_color(img: &ColorImage, format: RasterFormat) -> Result<Vec<u8>> {
    encode(&color_to_dynamic(img, format), format)
}

/// 8-bit RGB PNG from interleaved channels in `[0, 1]`.
pub fn encode_rgb_png(width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<Vec<u8>> {
    if rgb.len() != width * height {
        return Err(Error::Contract(format!("{} pixels for a {width}x{height} image", rgb.len())));
    }
    let raw = rgb.iter().flat_map(|p| p.map(quantize8)).collect();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(width as u32, height as u32, raw).expect("sized buffer");
    encode(&DynamicImage::ImageRgb8(buf), RasterFormat::Png)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Save a single channel. Format follows the file extension.
pub fn save_field(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_field(field, RasterFormat::from_path(path)?)?;
    write_bytes(path, &bytes)
}

/// Save a color image; achromatic images are written as single-channel files.
pub fn save_image(img: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_color(img, RasterFormat::from_path(path)?)?;
    write_bytes(path, &bytes)
}

/// Render a signed field as gray with zero mapped to 0.5 and `±scale` to 0/1.
pub fn signed_to_display(field: &ScalarField, scale: f64) -> ScalarField {
    let s = if scale > 0.0 { scale } else { 1.0 };
    field.map(|v| (0.5 + 0.5 * v / s).clamp(0.0, 1.0))
}

/// Raw little-endian 32-bit float raster.
pub fn encode_f32_raw(field: &ScalarField) -> Vec<u8> {
    field.values().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32_raw(bytes: &[u8], width: usize, height: usize) -> Result<ScalarField> {
    if bytes.len() != width * height * 4 {
        return Err(Error::Format(format!(
            "raw raster has {} bytes, expected {} for {width}x{height}",
            bytes.len(),
            width * height * 4
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ScalarField::new(width, height, values)
}

pub fn save_f32_raw(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_f32_raw(field))
}

pub fn load_f32_raw(path: impl AsRef<Path>, width: usize, height: usize) -> Result<ScalarField> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f32_raw(&bytes, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_pgm_extremes_normalize_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bw.pgm");
        std::fs::write(&p, b"P5\n2 1\n255\n\x00\xff").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.luma().values(), &[0.0, 1.0]);
        assert!(img.is_achromatic());
    }

    #[test]
    fn mid_gray_png_is_neutral() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gray.png");
        let buf = ImageBuffer::<Rgb<u8>, _>::from_pixel(4, 3, Rgb([128u8, 128, 128]));
        buf.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert!(img.luma().values().iter().all(|&v| (v - 0.5).abs() <= 0.5 / 255.0 + 1e-12));
        assert!(img.is_achromatic());
    }

    #[test]
    fn zeros_save_as_black_and_values_clamp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.pgm");
        save_field(&ScalarField::zeros(3, 3), &p).unwrap();
        assert!(load_image(&p).unwrap().luma().values().iter().all(|&v| v == 0.0));

        let q = dir.path().join("c.pgm");
        save_field(&ScalarField::filled(2, 2, 1.5), &q).unwrap();
        assert!(load_image(&q).unwrap().luma().values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ramp.pgm");
        let f = ScalarField::from_fn(37, 11, |x, y| ((x * 7 + y * 13) % 101) as f64 / 100.0 + 1e-7);
        save_field(&f, &p).unwrap();
        let back = load_image(&p).unwrap();
        for (a, b) in back.luma().values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 2f64.powi(-16));
        }
        // Second trip through the file is exact.
        let p2 = dir.path().join("ramp2.pgm");
        save_field(back.luma(), &p2).unwrap();
        let again = load_image(&p2).unwrap();
        assert_eq!(again.luma(), back.luma());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn color_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        let r = ScalarField::from_fn(5, 4, |x, _| x as f64 / 4.0);
        let g = ScalarField::from_fn(5, 4, |_, y| y as f64 / 3.0);
        let b = ScalarField::filled(5, 4, 0.25);
        let img = ColorImage::from_rgb(&r, &g, &b).unwrap();
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        let (r2, g2, b2) = back.to_rgb();
        for i in 0..r.len() {
            assert!((r2.values()[i] - r.values()[i]).abs() < 2e-5);
            assert!((g2.values()[i] - g.values()[i]).abs() < 2e-5);
            assert!((b2.values()[i] - b.values()[i]).abs() < 2e-5);
        }
    }

    #[test]
    fn missing_file_and_unknown_format_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(dir.path().join("nope.png")), Err(Error::Io { .. })));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&junk), Err(Error::Format(_))));
    }

    #[test]
    fn raw_f32_round_trip_is_bit_exact() {
        let f = ScalarField::from_fn(6, 5, |x, y| (x as f64 * 0.3 - y as f64 * 1.7) as f32 as f64);
        let bytes = encode_f32_raw(&f);
        let back = decode_f32_raw(&bytes, 6, 5).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode_f32_raw(&back), bytes);
    }
}
