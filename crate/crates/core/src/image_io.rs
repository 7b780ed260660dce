//! 8-bit PNG and PPM reading and writing.

use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use crate::blocks::ImageRGB;
use crate::error::{Error, Result};
use crate::tensor::Float;

const EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::InvalidArgument(format!(
            "{}: unsupported image extension (use .png or .ppm)",
            path.display()
        ))),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, format_for(path)?)?.to_rgb8();
    ImageRGB::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw())
}

/// Writes `round(255 x)` as 8-bit RGB; the format follows the extension.
pub fn save_image<T: Float>(img: &ImageRGB<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .ok_or_else(|| Error::shape("image buffer size"))?;
    buf.save_with_format(path, format)?;
    Ok(())
}

/// PNG/PPM files directly inside `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if path.is_file() && EXTENSIONS.contains(&ext.as_str()) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every image of [`list_images`], labelled by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, ImageRGB)>> {
    let dir = dir.as_ref();
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no .png or .ppm images", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_image(&p)?))
        })
        .collect()
}
