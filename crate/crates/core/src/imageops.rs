//! Pixel-space operations used by the perturbation metrics: masked mean
//! fill, separable Gaussian blur, and the bokeh composite that keeps salient
//! regions sharp while blurring everything else.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::grid::{Grid2, Grid3};
use crate::image::ImageInput;

/// Replaces masked pixels (mask value 1) with the image's per-channel mean,
/// leaving the rest untouched: `I * (1 - M) + mean * M`.
pub fn mean_fill(image: &ImageInput, mask: &Grid2) -> Result<ImageInput, Error> {
    if mask.h() != image.h() || mask.w() != image.w() {
        return Err(Error::ShapeMismatch {
            context: "mask vs image",
        });
    }
    let means = image.channel_means();
    let mut out = image.pixels().clone();
    for c in 0..3 {
        let mu = means[c];
        let plane = out.channel_mut(c);
        for (v, &m) in plane.iter_mut().zip(mask.data()) {
            *v = *v * (1.0 - m) + mu * m;
        }
    }
    Ok(image.with_pixels(out))
}

/// Blur radius used for the bokeh composite: 5% of the shorter image side.
pub fn blur_radius(h: usize, w: usize) -> usize {
    libm::roundf(0.05 * h.min(w) as f32) as usize
}

fn gaussian_taps(radius: usize) -> Vec<f32> {
    // Radius r covers +-3 sigma, so sigma = r / 3.
    let sigma = radius as f32 / 3.0;
    let mut taps = vec![0.0f32; 2 * radius + 1];
    let mut sum = 0.0f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f32 - radius as f32;
        *t = libm::expf(-(d * d) / (2.0 * sigma * sigma));
        sum += f64::from(*t);
    }
    for t in &mut taps {
        *t = (f64::from(*t) / sum) as f32;
    }
    taps
}

fn blur_plane(plane: &[f32], h: usize, w: usize, taps: &[f32], radius: usize) -> Vec<f32> {
    // Horizontal pass, then vertical; edges clamp to the border pixel.
    let mut horiz = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f32;
            for (i, &t) in taps.iter().enumerate() {
                let src = (c as isize + i as isize - radius as isize).clamp(0, w as isize - 1);
                acc += t * plane[r * w + src as usize];
            }
            horiz[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f32;
            for (i, &t) in taps.iter().enumerate() {
                let src = (r as isize + i as isize - radius as isize).clamp(0, h as isize - 1);
                acc += t * horiz[src as usize * w + c];
            }
            out[r * w + c] = acc.clamp(0.0, 1.0);
        }
    }
    out
}

/// Separable Gaussian blur with clamp-to-edge borders. Radius 0 is the
/// identity.
pub fn gaussian_blur(image: &ImageInput, radius: usize) -> ImageInput {
    if radius == 0 {
        return image.with_pixels(image.pixels().clone());
    }
    let (h, w) = (image.h(), image.w());
    let taps = gaussian_taps(radius);
    let mut out = Grid3::zeros(3, h, w);
    for c in 0..3 {
        let blurred = blur_plane(image.pixels().channel(c), h, w, &taps, radius);
        out.channel_mut(c).copy_from_slice(&blurred);
    }
    image.with_pixels(out)
}

/// Bokeh composite: masked pixels stay sharp, everything else is blurred.
/// `I * M + blur(I) * (1 - M)` with the default [`blur_radius`].
pub fn bokeh_compose(image: &ImageInput, mask: &Grid2) -> Result<ImageInput, Error> {
    if mask.h() != image.h() || mask.w() != image.w() {
        return Err(Error::ShapeMismatch {
            context: "mask vs image",
        });
    }
    let blurred = gaussian_blur(image, blur_radius(image.h(), image.w()));
    let mut out = image.pixels().clone();
    for c in 0..3 {
        let soft = blurred.pixels().channel(c);
        let plane = out.channel_mut(c);
        for ((v, &b), &m) in plane.iter_mut().zip(soft).zip(mask.data()) {
            *v = *v * m + b * (1.0 - m);
        }
    }
    Ok(image.with_pixels(out))
}
