//! Per-channel amplitude spectrum, log compression and centred
//! low-frequency crop.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::Image;

/// Side of the low-frequency window kept from the shifted spectrum.
pub const CROP_SIZE: usize = 128;

/// `|Σ_m Σ_n X(m,n)·exp(-j2π(um/H + vn/W))|` for every `(u, v)`, with the
/// unnormalised forward transform (no `1/(HW)` factor). DC sits at `(0, 0)`.
pub fn dft2_amplitude(channel: ArrayView2<'_, f64>) -> Array2<f64> {
    let (h, w) = channel.dim();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);

    let mut buf: Vec<Complex<f64>> = channel.iter().map(|&x| Complex::new(x, 0.0)).collect();
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for v in 0..w {
        for u in 0..h {
            column[u] = buf[u * w + v];
        }
        col_fft.process(&mut column);
        for u in 0..h {
            buf[u * w + v] = column[u];
        }
    }
    Array2::from_shape_vec((h, w), buf.into_iter().map(|c| c.norm()).collect()).expect("spectrum shape")
}

/// Elementwise `ln(1 + M)`; the amplitude must be non-negative.
pub fn log_compress(amplitude: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if let Some(&bad) = amplitude.iter().find(|&&m| !(m >= 0.0)) {
        return Err(Error::invalid(format!(
            "amplitude spectrum entries must be non-negative, found {bad}"
        )));
    }
    Ok(amplitude.mapv(f64::ln_1p))
}

/// Circularly shifts by half a period so DC moves from `(0, 0)` to `(H/2, W/2)`.
pub fn center_shift(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let mut out = Array2::<f64>::zeros((h, w));
    for ((u, v), &val) in x.indexed_iter() {
        out[[(u + h / 2) % h, (v + w / 2) % w]] = val;
    }
    out
}

/// Centre-shifts the spectrum and keeps the central `size×size` window;
/// DC lands at `(size/2, size/2)`.
pub fn crop_low_frequency(spectrum: ArrayView2<'_, f64>, size: usize) -> Result<Array2<f64>> {
    let (h, w) = spectrum.dim();
    if h < size || w < size {
        return Err(Error::shape(format!(
            "spectrum {h}x{w} is smaller than the {size}x{size} crop; images must be resized to 256x256 before spectrum extraction"
        )));
    }
    let shifted = center_shift(spectrum);
    let (r0, c0) = (h / 2 - size / 2, w / 2 - size / 2);
    Ok(shifted.slice(s![r0..r0 + size, c0..c0 + size]).to_owned())
}

/// Log-amplitude low-frequency crop for the R, G and B channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFeature {
    /// `3×size×size`, all entries ≥ 0.
    pub values: Array3<f64>,
}

impl SpectrumFeature {
    pub fn from_image(image: &Image) -> Result<Self> {
        Self::from_image_with_crop(image, CROP_SIZE)
    }

    pub fn from_image_with_crop(image: &Image, size: usize) -> Result<Self> {
        let mut values = Array3::<f64>::zeros((3, size, size));
        for c in 0..3 {
            let amp = dft2_amplitude(image.channel(c).view());
            let feat = log_compress(amp.view())?;
            values
                .slice_mut(s![c, .., ..])
                .assign(&crop_low_frequency(feat.view(), size)?);
        }
        Ok(Self { values })
    }

    pub fn size(&self) -> usize {
        self.values.dim().1
    }

    /// Index of the DC component inside the crop.
    pub fn dc_position(&self) -> (usize, usize) {
        (self.size() / 2, self.size() / 2)
    }

    /// Channel-major CSV: `3·size` rows of `size` values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for plane in self.values.outer_iter() {
            for row in plane.rows() {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}
