//! Raster file I/O. Images travel as 8-bit RGB PNG, segmentation maps as
//! single-channel 8-bit label PNG. Quantization to/from 8 bits happens here
//! and nowhere else.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};
use ndarray::{Array2, Array3};

use crate::error::{Result, SpicError};
use crate::types::{CoarseImage, Image, SegmentationMap};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}

fn rgb_to_array(rgb: &RgbImage) -> Array3<f64> {
    let (w, h) = rgb.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        dequantize(rgb.get_pixel(x as u32, y as u32)[c])
    })
}

fn array_to_rgb(data: &Array3<f64>) -> RgbImage {
    let (_, h, w) = data.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([
            quantize(data[[0, y as usize, x as usize]]),
            quantize(data[[1, y as usize, x as usize]]),
            quantize(data[[2, y as usize, x as usize]]),
        ])
    })
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = ImageReader::open(path)?.decode()?.into_rgb8();
    Image::new(rgb_to_array(&img))
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    array_to_rgb(img.data()).save(path)?;
    Ok(())
}

pub fn read_coarse(path: &Path) -> Result<CoarseImage> {
    let img = ImageReader::open(path)?.decode()?.into_rgb8();
    CoarseImage::new(rgb_to_array(&img))
}

pub fn write_coarse(path: &Path, img: &CoarseImage) -> Result<()> {
    array_to_rgb(img.data()).save(path)?;
    Ok(())
}

/// Reads a label raster. `n_classes` of the result is `max(label) + 1` unless
/// a larger class count is supplied.
pub fn read_labels(path: &Path, n_classes: Option<u8>) -> Result<SegmentationMap> {
    let img = ImageReader::open(path)?.decode()?.into_luma8();
    let (w, h) = img.dimensions();
    let labels = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0]
    });
    let max = labels.iter().copied().max().unwrap_or(0);
    if max == u8::MAX {
        return Err(SpicError::InvalidImage(
            "label 255 leaves no room for n_classes in one byte".into(),
        ));
    }
    let n_c = match n_classes {
        Some(n) if n > max => n,
        Some(n) => {
            return Err(SpicError::LabelOutOfRange {
                label: max,
                n_classes: n,
            })
        }
        None => max + 1,
    };
    SegmentationMap::new(labels, n_c)
}

pub fn write_labels(path: &Path, s: &SegmentationMap) -> Result<()> {
    let (h, w) = (s.height(), s.width());
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([s.labels()[[y as usize, x as usize]]])
    });
    img.save(path)?;
    Ok(())
}
