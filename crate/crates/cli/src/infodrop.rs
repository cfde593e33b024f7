//! Information drop: the relative loss in lossy-compressed size when the
//! image is replaced by its bokeh composite (salient region sharp, the rest
//! Gaussian-blurred).
//!
//! Both images are encoded as JPEG at one fixed quality; only the size
//! ratio matters, so absolute sizes are never reported.

use gcame_core::metrics::{top_fraction_mask, TieMode};
use gcame_core::{imageops, Grid2, ImageInput};
use image::ImageEncoder;

use crate::error::Result;
use crate::render::to_rgb8;

/// Fixed encoder quality. Changing this changes every reported value, so it
/// is part of the metric's definition.
pub const JPEG_QUALITY: u8 = 75;

/// Fraction of pixels kept sharp, shared with the confidence-drop mask.
pub const KEEP_FRACTION: f32 = 0.2;

fn jpeg_size(img: &image::RgbImage) -> Option<usize> {
    let mut buf = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, JPEG_QUALITY)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .ok()?;
    Some(buf.len())
}

/// Compressed-size reduction of the bokeh composite versus the original,
/// in percent. Saliency ties at the mask cut-off are kept, so a uniformly
/// salient map keeps the whole image sharp and the drop is near zero.
///
/// Returns `None` when the encoder fails; the value is never fabricated.
pub fn information_drop(image: &ImageInput, saliency: &Grid2) -> Result<Option<f64>> {
    let mask = top_fraction_mask(saliency, KEEP_FRACTION, TieMode::IncludeTies);
    let bokeh = imageops::bokeh_compose(image, &mask)?;
    let sizes = (jpeg_size(&to_rgb8(image)), jpeg_size(&to_rgb8(&bokeh)));
    Ok(match sizes {
        (Some(original), Some(bokeh)) if original > 0 => {
            Some((1.0 - bokeh as f64 / original as f64) * 100.0)
        }
        _ => None,
    })
}
