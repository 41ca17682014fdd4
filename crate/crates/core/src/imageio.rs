//! PNG reading and writing. Pixel values travel as `f64` in `[0, 255]`.

use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::binio;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// A decoded image with one (gray) or three (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub pixels: Tensor<f64>,
    /// True when the source had 16-bit samples that were rescaled to 8-bit range.
    pub rescaled_from_16bit: bool,
}

impl Image {
    pub fn is_gray(&self) -> bool {
        self.pixels.channels() == 1
    }
}

fn image_err(path: &Path, detail: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

/// Reads a PNG (or any format the decoder recognises). Alpha is dropped;
/// 16-bit samples are mapped to `[0, 255]` with a warning.
pub fn read_image(path: &Path) -> Result<Image> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| image_err(path, e))?;
    let color = img.color();
    let gray = !color.has_color();
    let wide = color.bytes_per_pixel() / color.channel_count() > 1;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let ch = if gray { 1 } else { 3 };
    let shape = Shape::new(h, w, ch).map_err(|_| image_err(path, "image has no pixels"))?;
    let data: Vec<f64> = if wide {
        log::warn!("{}: 16-bit samples rescaled to 8-bit range", path.display());
        let raw = match (gray, img) {
            (true, i) => i.into_luma16().into_raw(),
            (false, i) => i.into_rgb16().into_raw(),
        };
        raw.into_iter().map(|v| v as f64 * 255.0 / 65535.0).collect()
    } else {
        let raw = match (gray, img) {
            (true, i) => i.into_luma8().into_raw(),
            (false, i) => i.into_rgb8().into_raw(),
        };
        raw.into_iter().map(f64::from).collect()
    };
    Ok(Image {
        pixels: Tensor::from_vec(shape, data)?,
        rescaled_from_16bit: wide,
    })
}

/// Rounds and clamps to 8-bit samples.
pub fn to_u8(img: &Tensor<f64>) -> Vec<u8> {
    img.data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Encodes a 1- or 3-channel image as 8-bit PNG bytes.
pub fn encode_png(img: &Tensor<f64>) -> Result<Vec<u8>> {
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::shape(format!("PNG output needs 1 or 3 channels, got {c}"))),
    };
    let (w, h) = (img.cols(), img.rows());
    if w > u32::MAX as usize || h > u32::MAX as usize {
        return Err(Error::Resource(format!("image {w}x{h} too large for PNG")));
    }
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf)
        .write_image(&to_u8(img), w as u32, h as u32, color)
        .map_err(|e| Error::Resource(format!("PNG encoding failed: {e}")))?;
    Ok(buf)
}

/// Writes an 8-bit PNG atomically.
pub fn write_png(path: &Path, img: &Tensor<f64>) -> Result<()> {
    binio::write_atomic(path, &encode_png(img)?)
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::NoImages(dir.to_path_buf()));
    }
    Ok(out)
}

/// File stem used as the image's name in reports.
pub fn image_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(rows: usize, cols: usize, ch: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(rows, cols, ch).unwrap(), |x, y, c| {
            ((x * 31 + y * 17 + c * 101) % 256) as f64
        })
    }

    #[test]
    fn png_round_trip_is_bit_preserving() {
        let dir = tempfile::tempdir().unwrap();
        for ch in [1, 3] {
            let img = pattern(7, 5, ch);
            let p = dir.path().join(format!("c{ch}.png"));
            write_png(&p, &img).unwrap();
            let back = read_image(&p).unwrap();
            assert_eq!(back.pixels, img);
            assert!(!back.rescaled_from_16bit);
            let bytes = fs::read(&p).unwrap();
            write_png(&p, &back.pixels).unwrap();
            assert_eq!(fs::read(&p).unwrap(), bytes);
        }
    }

    #[test]
    fn sixteen_bit_is_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("wide.png");
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![0u16, 65535]).unwrap();
        buf.save(&p).unwrap();
        let img = read_image(&p).unwrap();
        assert!(img.rescaled_from_16bit);
        assert_eq!(img.pixels.data(), &[0.0, 255.0]);
    }

    #[test]
    fn listing_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(list_images(dir.path()), Err(Error::NoImages(_))));
        write_png(&dir.path().join("b.png"), &pattern(2, 2, 1)).unwrap();
        write_png(&dir.path().join("a.PNG"), &pattern(2, 2, 1)).unwrap();
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let names: Vec<_> = list_images(dir.path()).unwrap().iter().map(|p| image_name(p)).collect();
        assert_eq!(names, ["a", "b"]);

        let bad = dir.path().join("bad.png");
        fs::write(&bad, b"not a png").unwrap();
        assert!(matches!(read_image(&bad), Err(Error::Image { .. })));
    }
}
