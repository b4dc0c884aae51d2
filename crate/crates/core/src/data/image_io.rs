use std::io::Cursor;
use std::path::Path;

use image::imageops::FilterType;
use image::{ImageFormat, RgbImage};

use super::LabeledImage;
use crate::{Error, Result};

/// Maps an 8-bit channel value to `[-1, 1]`.
pub fn normalize(p: u8) -> f32 {
    2.0 * p as f32 / 255.0 - 1.0
}

/// Inverse of [`normalize`], rounding to the nearest 8-bit value.
pub fn denormalize(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 255.0 / 2.0).round()) as u8
}

fn to_rgb(image: &LabeledImage) -> RgbImage {
    let bytes = image.pixels.iter().map(|&v| denormalize(v)).collect();
    RgbImage::from_raw(image.width as u32, image.height as u32, bytes).expect("HWC buffer matches dimensions")
}

fn from_rgb(rgb: &RgbImage, size: usize) -> LabeledImage {
    let rgb = if rgb.width() as usize != size || rgb.height() as usize != size {
        image::imageops::resize(rgb, size as u32, size as u32, FilterType::Triangle)
    } else {
        rgb.clone()
    };
    LabeledImage {
        height: size,
        width: size,
        channels: 3,
        pixels: rgb.as_raw().iter().map(|&p| normalize(p)).collect(),
        labels: Vec::new(),
    }
}

/// Encodes a 3-channel image as PNG bytes.
pub fn encode_png(image: &LabeledImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    to_rgb(image)
        .write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            reason: e.to_string(),
        })?;
    Ok(out)
}

/// Decodes PNG bytes, resizing to `size x size` when needed. Labels are left empty.
pub fn decode_png(bytes: &[u8], size: usize) -> Result<LabeledImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::Image {
        path: "<memory>".into(),
        reason: e.to_string(),
    })?;
    Ok(from_rgb(&img.to_rgb8(), size))
}

pub fn load_image(path: &Path, size: usize) -> Result<LabeledImage> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(from_rgb(&img.to_rgb8(), size))
}

pub fn save_png(path: &Path, image: &LabeledImage) -> Result<()> {
    to_rgb(image).save_with_format(path, ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
