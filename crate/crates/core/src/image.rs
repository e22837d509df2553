//! RGB images held as 8-bit samples; accessors expose values in `[0, 1]`.

use std::fmt;
use std::path::Path;

use image::imageops::FilterType;
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Side length every image is resized to at load time.
pub const IMAGE_SIZE: usize = 256;

#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    /// Row-major `H×W×3`.
    data: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{}x3)", self.height, self.width)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Image {
    /// Builds an image from a function returning values in `[0, 1]`
    /// (clamped, then quantized to 8 bits).
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(quantize(f(y, x, c)));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn from_rgb8(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "expected {} bytes for a {height}x{width}x3 image, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn solid(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(height, width, |_, _, c| rgb[c])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        f64::from(self.data[(y * self.width + x) * 3 + c]) / 255.0
    }

    /// One colour channel as an `H×W` array in `[0, 1]`.
    pub fn channel(&self, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.height, self.width), |(y, x)| self.get(y, x, c))
    }

    pub fn ensure_size(&self, size: usize) -> Result<()> {
        if self.height != size || self.width != size {
            return Err(Error::shape(format!(
                "expected a {size}x{size}x3 image, got {}x{}x3",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Block-averages the image by `factor` into a `3×(H/f)×(W/f)` array.
    pub fn block_mean(&self, factor: usize) -> Array3<f64> {
        let (h, w) = (self.height / factor, self.width / factor);
        let inv = 1.0 / (factor * factor) as f64;
        let mut out = Array3::<f64>::zeros((3, h, w));
        for y in 0..h * factor {
            for x in 0..w * factor {
                for c in 0..3 {
                    out[[c, y / factor, x / factor]] += self.get(y, x, c);
                }
            }
        }
        out *= inv;
        out
    }

    /// Decodes a PNG/JPEG file and resizes it to `size×size` RGB.
    pub fn load(path: &Path, size: usize) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let rgb = if img.width() as usize == size && img.height() as usize == size {
            img.to_rgb8()
        } else {
            img.resize_exact(size as u32, size as u32, FilterType::Triangle)
                .to_rgb8()
        };
        Self::from_rgb8(size, size, rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| Error::shape("image buffer size"))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}
