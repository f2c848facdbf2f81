//! Planar floating-point RGB raster, the working representation for
//! enhancement. Values live on the 8-bit scale `[0, 255]` but are kept as
//! `f64` so the Retinex log-domain math has headroom.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Channel-major RGB image: three planes of `height * width` doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    planes: [Vec<f64>; 3],
}

impl RgbImage {
    /// Builds an image from three equally sized planes. Rejects length
    /// mismatches and non-finite samples.
    pub fn from_planes(height: usize, width: usize, planes: [Vec<f64>; 3]) -> Result<Self> {
        let n = height * width;
        for plane in &planes {
            if plane.len() != n {
                return Err(Error::ShapeMismatch(alloc::format!(
                    "plane has {} samples, expected {}x{} = {}",
                    plane.len(),
                    height,
                    width,
                    n
                )));
            }
            if plane.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadConfig(alloc::string::String::from(
                    "image plane contains a non-finite value",
                )));
            }
        }
        Ok(Self {
            height,
            width,
            planes,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            planes: [
                vec![value; height * width],
                vec![value; height * width],
                vec![value; height * width],
            ],
        }
    }

    /// Converts interleaved 8-bit RGB rows into planar doubles, mapping each
    /// byte verbatim to its float value.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        let n = height * width;
        if rgb.len() != 3 * n {
            return Err(Error::ShapeMismatch(alloc::format!(
                "interleaved buffer has {} bytes, expected {}",
                rgb.len(),
                3 * n
            )));
        }
        let mut planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            planes[0][i] = px[0] as f64;
            planes[1][i] = px[1] as f64;
            planes[2][i] = px[2] as f64;
        }
        Ok(Self {
            height,
            width,
            planes,
        })
    }

    /// Quantizes back to interleaved 8-bit RGB: clamp to `[0, 255]`, then
    /// round half away from zero.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.num_pixels();
        let mut out = vec![0u8; 3 * n];
        for c in 0..3 {
            for (i, &v) in self.planes[c].iter().enumerate() {
                out[3 * i + c] = quantize(v);
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        &self.planes[channel]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut Vec<f64> {
        &mut self.planes[channel]
    }

    pub fn planes(&self) -> &[Vec<f64>; 3] {
        &self.planes
    }

    /// Swaps two channels in place. The enhancement pipeline is channel-wise,
    /// so this commutes with it.
    pub fn swap_channels(&mut self, a: usize, b: usize) {
        self.planes.swap(a, b);
    }
}

/// Clamp to `[0, 255]` and round half away from zero.
pub fn quantize(v: f64) -> u8 {
    let clamped = v.max(0.0).min(255.0);
    libm::round(clamped) as u8
}
