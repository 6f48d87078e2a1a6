//! 8-bit color and 16-bit depth PNG codecs (depth scaled by 5000 per meter).

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::frame::{ColorImage, DepthImage};

/// Depth PNG units per meter.
pub const DEPTH_SCALE: f64 = 5000.0;

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_color_png(path: impl AsRef<Path>) -> Result<ColorImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(image_err(path))?.into_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    ColorImage::from_data(w as usize, h as usize, data)
}

pub fn read_depth_png(path: impl AsRef<Path>) -> Result<DepthImage> {
    let path = path.as_ref();
    let img = match image::open(path).map_err(image_err(path))? {
        DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(Error::Dataset(format!(
                "{}: depth must be a 16-bit single-channel PNG, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p[0] as f64 / DEPTH_SCALE).collect();
    DepthImage::from_data(w as usize, h as usize, data)
}

pub fn write_color_png(img: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        let c = img.get(x as usize, y as usize);
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    buf.save(path).map_err(image_err(path))
}

pub fn write_depth_png(img: &DepthImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        let d = img.get(x as usize, y as usize);
        Luma([(d * DEPTH_SCALE).round().clamp(0.0, u16::MAX as f64) as u16])
    });
    buf.save(path).map_err(image_err(path))
}
