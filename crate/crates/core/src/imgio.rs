//! Image loading, cropping, and resizing into CHW f64 arrays in `[0, 1]`.

use std::path::Path;

use image::{imageops, DynamicImage, RgbImage};
use ndarray::{Array3, ArrayD};
use thiserror::Error;

use crate::datamodel::Rect;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("failed to read image '{path}': {source}")]
    Read { path: String, source: image::ImageError },
    #[error("failed to write image '{path}': {source}")]
    Write { path: String, source: image::ImageError },
    #[error("crop {rect:?} lies outside image {width}x{height}")]
    CropOutOfBounds { rect: String, width: u32, height: u32 },
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, ImageIoError> {
    let img = image::open(path)
        .map_err(|source| ImageIoError::Read { path: path.display().to_string(), source })?;
    Ok(img.to_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<(), ImageIoError> {
    img.save(path)
        .map_err(|source| ImageIoError::Write { path: path.display().to_string(), source })
}

/// Convert to CHW f64 in `[0, 1]`.
pub fn to_chw(img: &RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
    })
}

pub fn to_chw_dyn(img: &RgbImage) -> ArrayD<f64> {
    to_chw(img).into_dyn()
}

/// Convert CHW f64 in `[0, 1]` back to an 8-bit image (values clamped).
pub fn from_chw(arr: &Array3<f64>) -> RgbImage {
    let (c, h, w) = arr.dim();
    assert_eq!(c, 3, "expected 3 channels");
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| (arr[[ch, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Crop a box (pixel corners, clamped to the image) out of an image.
pub fn crop(img: &RgbImage, rect: &Rect) -> Result<RgbImage, ImageIoError> {
    let (w, h) = img.dimensions();
    let clipped = rect.clipped(w as f64, h as f64).ok_or_else(|| ImageIoError::CropOutOfBounds {
        rect: format!("{rect:?}"),
        width: w,
        height: h,
    })?;
    let x = clipped.x1().floor() as u32;
    let y = clipped.y1().floor() as u32;
    let cw = (clipped.width().ceil() as u32).max(1).min(w - x);
    let ch = (clipped.height().ceil() as u32).max(1).min(h - y);
    Ok(imageops::crop_imm(img, x, y, cw, ch).to_image())
}

/// Bilinear resize.
pub fn resize(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    DynamicImage::ImageRgb8(img.clone())
        .resize_exact(width, height, imageops::FilterType::Triangle)
        .to_rgb8()
}
