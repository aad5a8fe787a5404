use std::path::Path;

use image::{GrayImage, RgbImage, RgbaImage};

use super::DataError;
use crate::tensor::Tensor;

/// An 8-bit raster, interleaved row-major (`(y * width + x) * channels + c`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(DataError::BadRaster(format!(
                "{width}x{height} with {channels} channels (need non-empty, 1 or 3 channels)"
            )));
        }
        if data.len() != width * height * channels {
            return Err(DataError::BadRaster(format!(
                "{} bytes for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, DataError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data).expect("sized from dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// `v / 255 − 0.5`.
pub fn normalize_value(v: u8) -> f32 {
    v as f32 / 255.0 - 0.5
}

/// Inverse of [`normalize_value`], rounding to the nearest level.
pub fn denormalize_value(v: f32) -> u8 {
    ((v + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Planar `(1, channels, height, width)` tensor with values in [−0.5, 0.5].
pub fn normalize(raster: &Raster) -> Tensor<f32> {
    Tensor::from_fn([1, raster.channels, raster.height, raster.width], |[_, c, y, x]| {
        normalize_value(raster.get(x, y, c))
    })
}

/// Inverse of [`normalize`] for the first batch item.
pub fn denormalize(t: &Tensor<f32>) -> Raster {
    let s = t.shape();
    Raster::from_fn(s.width, s.height, s.channels, |x, y, c| denormalize_value(t.at(0, c, y, x)))
}

fn read_image(path: &Path) -> Result<image::DynamicImage, DataError> {
    image::open(path).map_err(|e| DataError::Image {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

fn write_err(path: &Path, e: impl ToString) -> DataError {
    DataError::Image {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

/// Reads any PNG as 3-channel RGB.
pub fn read_rgb_png(path: &Path) -> Result<Raster, DataError> {
    let img = read_image(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Raster::new(w as usize, h as usize, 3, img.into_raw())
}

/// Reads a mask PNG, mapping 255 to 1. Values other than 0, 1 and 255 are rejected.
pub fn read_mask_png(path: &Path) -> Result<Raster, DataError> {
    let img = read_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let mut data = img.into_raw();
    for v in &mut data {
        *v = match *v {
            0 => 0,
            1 | 255 => 1,
            other => {
                return Err(DataError::MaskValue {
                    path: path.to_owned(),
                    value: other,
                })
            }
        };
    }
    Raster::new(w as usize, h as usize, 1, data)
}

pub fn write_rgb_png(raster: &Raster, path: &Path) -> Result<(), DataError> {
    let img = RgbImage::from_raw(raster.width as u32, raster.height as u32, raster.data.clone())
        .ok_or_else(|| write_err(path, "raster is not RGB"))?;
    img.save(path).map_err(|e| write_err(path, e))
}

/// Writes a {0,1} label raster as a 0/255 PNG.
pub fn write_mask_png(mask: &Raster, path: &Path) -> Result<(), DataError> {
    let bytes = mask.data.iter().map(|&v| if v > 0 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes)
        .ok_or_else(|| write_err(path, "mask is not single-channel"))?;
    img.save(path).map_err(|e| write_err(path, e))
}

/// RGBA image with landslide pixels tinted red.
pub fn overlay(image: &Raster, mask: &Raster) -> Result<RgbaImage, DataError> {
    if !image.same_dims(mask) || image.channels != 3 || mask.channels != 1 {
        return Err(DataError::BadRaster(format!(
            "overlay needs an RGB image and a mask of equal size, got {}x{}x{} and {}x{}x{}",
            image.width, image.height, image.channels, mask.width, mask.height, mask.channels
        )));
    }
    let mut out = RgbaImage::new(image.width as u32, image.height as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        let (r, g, b) = (image.data[3 * i], image.data[3 * i + 1], image.data[3 * i + 2]);
        px.0 = if mask.data[i] > 0 {
            [((r as u16 + 255) / 2) as u8, g / 2, b / 2, 255]
        } else {
            [r, g, b, 255]
        };
    }
    Ok(out)
}

pub fn write_overlay_png(image: &Raster, mask: &Raster, path: &Path) -> Result<(), DataError> {
    overlay(image, mask)?.save(path).map_err(|e| write_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_value(0), -0.5);
        assert_eq!(normalize_value(255), 0.5);
        assert!((normalize_value(128) - 0.00196).abs() < 1e-5);
        for v in 0..=255u8 {
            assert_eq!(denormalize_value(normalize_value(v)), v);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Raster::from_fn(5, 3, 3, |x, y, c| (x * 40 + y * 7 + c) as u8);
        let p = dir.path().join("a.png");
        write_rgb_png(&rgb, &p).unwrap();
        assert_eq!(read_rgb_png(&p).unwrap(), rgb);

        let mask = Raster::from_fn(5, 3, 1, |x, y, _| ((x + y) % 2) as u8);
        let p = dir.path().join("m.png");
        write_mask_png(&mask, &p).unwrap();
        assert_eq!(read_mask_png(&p).unwrap(), mask);
    }

    #[test]
    fn bad_mask_value_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        GrayImage::from_raw(2, 1, vec![0, 7]).unwrap().save(&p).unwrap();
        assert!(matches!(read_mask_png(&p), Err(DataError::MaskValue { value: 7, .. })));
    }
}
