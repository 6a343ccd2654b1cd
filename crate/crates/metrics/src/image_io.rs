use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use tanet_tensor::Tensor;

use crate::{MetricsError, Result};

/// A height x width x channels pixel buffer with values in `[0,1]`,
/// row-major and channel-interleaved. Channels is 1 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(MetricsError::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(MetricsError::InvalidImage(format!(
                "{height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Planar `[C,H,W]` tensor (or `[1,C,H,W]` when `batched`).
    pub fn to_tensor(&self, batched: bool) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = self.get(y, x, ch);
                }
            }
        }
        let shape = if batched { vec![1, c, h, w] } else { vec![c, h, w] };
        Tensor::new(shape, data).expect("shape matches data")
    }

    /// Converts a planar `[C,H,W]` / `[1,C,H,W]` tensor back into an
    /// image, clamping into `[0,1]` (the export contract).
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.shape();
        let (c, h, w) = match shape {
            [c, h, w] => (*c, *h, *w),
            [1, c, h, w] => (*c, *h, *w),
            _ => {
                return Err(MetricsError::InvalidImage(format!(
                    "expected [C,H,W] or [1,C,H,W] tensor, got {shape:?}"
                )))
            }
        };
        let mut img = Image::filled(h, w, c, 0.0);
        let data = t.data();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    img.set(y, x, ch, data[(ch * h + y) * w + x].clamp(0.0, 1.0));
                }
            }
        }
        Ok(img)
    }

    /// Quantizes to 8-bit with round-half-up after clamping.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Loads an 8- or 16-bit RGB/grayscale PNG, mapping values linearly to
/// `[0,1]` (v/255 or v/65535).
pub fn load_png(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| MetricsError::Decode {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => {
            let pixels = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Image::new(h, w, 1, pixels)
        }
        DynamicImage::ImageRgb8(buf) => {
            let pixels = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            Image::new(h, w, 3, pixels)
        }
        DynamicImage::ImageLuma16(buf) => {
            let pixels = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
            Image::new(h, w, 1, pixels)
        }
        DynamicImage::ImageRgb16(buf) => {
            let pixels = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
            Image::new(h, w, 3, pixels)
        }
        other => Err(MetricsError::UnsupportedColor {
            path: path.display().to_string(),
            color: format!("{:?}", other.color()),
        }),
    }
}

/// Saves as an 8-bit PNG (grayscale or RGB), quantizing round-half-up.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let bytes = img.to_bytes();
    let (w, h) = (img.width as u32, img.height as u32);
    let result = match img.channels {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes)
            .expect("byte count matches dims")
            .save(path),
        _ => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes)
            .expect("byte count matches dims")
            .save(path),
    };
    result.map_err(|e| MetricsError::Decode {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
