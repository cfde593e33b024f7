//! Validated input images.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::grid::Grid3;

/// Minimum accepted image side length, px.
pub const MIN_SIDE: usize = 32;

/// An RGB input image with pixel values in `[0,1]`.
///
/// Stored channel-major (3 x H x W) for convolution-friendly access; the
/// constructors accept interleaved H x W x 3 buffers as well.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInput {
    pixels: Grid3,
    source_path: Option<String>,
}

impl ImageInput {
    /// Builds from a channel-major 3 x H x W grid, validating invariants.
    pub fn new(pixels: Grid3) -> Result<Self, Error> {
        if pixels.c() != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 3 channels, got {}",
                pixels.c()
            )));
        }
        if pixels.h() < MIN_SIDE || pixels.w() < MIN_SIDE {
            return Err(Error::InvalidImage(format!(
                "image {}x{} below minimum {MIN_SIDE}x{MIN_SIDE}",
                pixels.h(),
                pixels.w()
            )));
        }
        for &v in pixels.data() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidImage(format!(
                    "pixel value {v} outside [0,1]"
                )));
            }
        }
        Ok(ImageInput {
            pixels,
            source_path: None,
        })
    }

    /// Builds from an interleaved H x W x 3 buffer (row-major, RGB per pixel).
    pub fn from_interleaved(h: usize, w: usize, rgb: &[f32]) -> Result<Self, Error> {
        if rgb.len() != h * w * 3 {
            return Err(Error::InvalidImage(format!(
                "interleaved buffer length {} != {h}x{w}x3",
                rgb.len()
            )));
        }
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for p in 0..h * w {
                data.push(rgb[p * 3 + c]);
            }
        }
        ImageInput::new(Grid3::from_vec(3, h, w, data))
    }

    pub fn with_source_path(mut self, path: String) -> Self {
        self.source_path = Some(path);
        self
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.pixels.h()
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.pixels.w()
    }

    #[inline]
    pub fn pixels(&self) -> &Grid3 {
        &self.pixels
    }

    pub fn source_path(&self) -> Option<&str> {
        self.source_path.as_deref()
    }

    /// Mean value of each channel.
    pub fn channel_means(&self) -> [f32; 3] {
        [
            self.pixels.channel_mean_f64(0) as f32,
            self.pixels.channel_mean_f64(1) as f32,
            self.pixels.channel_mean_f64(2) as f32,
        ]
    }

    /// Pixel-wise multiply of every channel by a 2-D mask (shapes must match).
    pub fn masked(&self, mask: &crate::grid::Grid2) -> Result<ImageInput, Error> {
        if mask.h() != self.h() || mask.w() != self.w() {
            return Err(Error::ShapeMismatch {
                context: "mask vs image",
            });
        }
        let mut out = self.pixels.clone();
        for c in 0..3 {
            let plane = out.channel_mut(c);
            for (v, &m) in plane.iter_mut().zip(mask.data()) {
                *v = (*v * m).clamp(0.0, 1.0);
            }
        }
        Ok(ImageInput {
            pixels: out,
            source_path: None,
        })
    }

    /// Rebuilds an image around already-validated pixel data of the same
    /// shape. Callers guarantee values stay finite and in `[0, 1]`.
    pub(crate) fn with_pixels(&self, pixels: Grid3) -> ImageInput {
        debug_assert!(pixels.same_shape(&self.pixels));
        ImageInput {
            pixels,
            source_path: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_small_images() {
        let g = Grid3::zeros(3, 16, 64);
        assert!(matches!(ImageInput::new(g), Err(Error::InvalidImage(_))));
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let mut g = Grid3::zeros(3, 32, 32);
        g.set(1, 0, 0, 1.5);
        assert!(matches!(ImageInput::new(g), Err(Error::InvalidImage(_))));
    }

    #[test]
    fn interleaved_round_trip_matches_channel_major() {
        let h = 32;
        let w = 32;
        let mut rgb = vec![0.0f32; h * w * 3];
        rgb[(5 * w + 7) * 3 + 1] = 0.5; // green at (5,7)
        let img = ImageInput::from_interleaved(h, w, &rgb).unwrap();
        assert_eq!(img.pixels().get(1, 5, 7), 0.5);
        assert_eq!(img.pixels().get(0, 5, 7), 0.0);
    }
}
