//! Rendering: saliency heatmap overlays, box outlines, labels, and contact
//! sheets, all as deterministic PNG bytes.
//!
//! The colormap is a fixed four-stop blue-cyan-yellow-red ramp (value 0 maps
//! to dark blue, 1 to pure red). Heat is alpha-blended over the image with
//! per-pixel alpha `0.5 * saliency`, so a zero map reproduces the input
//! image exactly.

use std::path::Path;

use gcame_core::{Detection, Grid2, ImageInput};
use image::{ImageEncoder, Rgb, RgbImage};

use crate::error::{CliError, Result};

/// Four-stop linear ramp: (0, dark blue), (1/3, cyan), (2/3, yellow),
/// (1, red). The peak value renders as the top color `[255, 0, 0]`.
pub fn colormap(v: f32) -> [u8; 3] {
    const STOPS: [(f32, [f32; 3]); 4] = [
        (0.0, [0.0, 0.0, 96.0]),
        (1.0 / 3.0, [0.0, 255.0, 255.0]),
        (2.0 / 3.0, [255.0, 255.0, 0.0]),
        (1.0, [255.0, 0.0, 0.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    let mut lo = STOPS[0];
    let mut hi = STOPS[STOPS.len() - 1];
    for pair in STOPS.windows(2) {
        if v >= pair[0].0 && v <= pair[1].0 {
            lo = pair[0];
            hi = pair[1];
            break;
        }
    }
    let span = hi.0 - lo.0;
    let t = if span > 0.0 { (v - lo.0) / span } else { 0.0 };
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (lo.1[c] + (hi.1[c] - lo.1[c]) * t).round() as u8;
    }
    out
}

/// Converts unit-range float pixels to 8-bit RGB.
pub fn to_rgb8(image: &ImageInput) -> RgbImage {
    let (h, w) = (image.h(), image.w());
    let px = image.pixels();
    let mut out = RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let rgb = [
                (px.get(0, i, j) * 255.0).round() as u8,
                (px.get(1, i, j) * 255.0).round() as u8,
                (px.get(2, i, j) * 255.0).round() as u8,
            ];
            out.put_pixel(j as u32, i as u32, Rgb(rgb));
        }
    }
    out
}

/// Loads a PNG or JPEG into the unit-range planar format.
pub fn load_image(path: &Path) -> Result<ImageInput> {
    let img = image::open(path)
        .map_err(|e| CliError::Image {
            path: path.into(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = f32::from(p.0[c]) / 255.0;
        }
    }
    let grid = gcame_core::Grid3::from_vec(3, h, w, data);
    ImageInput::new(grid)
        .map(|i| i.with_source_path(path.to_string_lossy().into_owned()))
        .map_err(CliError::Core)
}

/// Encodes to PNG bytes; identical images give identical bytes.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| CliError::Config(format!("png encoding: {e}")))?;
    Ok(buf)
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_png(img)?).map_err(|e| CliError::io(path, e))
}

fn blend_heat(base: &ImageInput, saliency: &Grid2) -> Result<RgbImage> {
    if base.h() != saliency.h() || base.w() != saliency.w() {
        return Err(CliError::Config(format!(
            "saliency {}x{} does not match image {}x{}",
            saliency.h(),
            saliency.w(),
            base.h(),
            base.w()
        )));
    }
    let px = base.pixels();
    let (h, w) = (base.h(), base.w());
    let mut out = RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let v = saliency.get(i, j);
            let heat = colormap(v);
            let a = 0.5 * v.clamp(0.0, 1.0);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let base_v = px.get(c, i, j) * 255.0;
                rgb[c] = (base_v * (1.0 - a) + f32::from(heat[c]) * a).round() as u8;
            }
            out.put_pixel(j as u32, i as u32, Rgb(rgb));
        }
    }
    Ok(out)
}

const BOX_COLOR: Rgb<u8> = Rgb([0, 255, 64]);

fn draw_box(img: &mut RgbImage, x1: f32, y1: f32, x2: f32, y2: f32, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x1 = (x1 as i64).clamp(0, w - 1);
    let y1 = (y1 as i64).clamp(0, h - 1);
    let x2 = (x2 as i64 - 1).clamp(0, w - 1);
    let y2 = (y2 as i64 - 1).clamp(0, h - 1);
    for x in x1..=x2 {
        img.put_pixel(x as u32, y1 as u32, color);
        img.put_pixel(x as u32, y2 as u32, color);
    }
    for y in y1..=y2 {
        img.put_pixel(x1 as u32, y as u32, color);
        img.put_pixel(x2 as u32, y as u32, color);
    }
}

// 5x7 bitmap font, one byte per row, low 5 bits used. Enough glyphs for
// labels: digits, uppercase letters, and light punctuation.
fn glyph(ch: char) -> [u8; 7] {
    match ch {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        _ => [0x00; 7],
    }
}

/// Draws uppercase 5x7 text; unknown characters render as spaces.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        let g = glyph(ch.to_ascii_uppercase());
        for (row, bits) in g.iter().enumerate() {
            for col in 0..5 {
                if bits & (0x10 >> col) != 0 {
                    let (px, py) = (cx + col as i64, y + row as i64);
                    if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height()
                    {
                        img.put_pixel(px as u32, py as u32, color);
                    }
                }
            }
        }
        cx += 6;
    }
}

/// Saliency heatmap alpha-blended over the image, with the predicted box
/// outlined and labeled.
pub fn overlay_rgb(
    image: &ImageInput,
    saliency: &Grid2,
    detection: &Detection,
    label: &str,
) -> Result<RgbImage> {
    let mut img = blend_heat(image, saliency)?;
    let b = &detection.bbox;
    draw_box(&mut img, b.x1, b.y1, b.x2, b.y2, BOX_COLOR);
    // Label above the box when it fits, else inside the top edge.
    let ty = if b.y1 >= 9.0 { b.y1 as i64 - 9 } else { b.y1 as i64 + 2 };
    draw_text(&mut img, b.x1 as i64, ty, label, BOX_COLOR);
    Ok(img)
}

/// [`overlay_rgb`] as PNG bytes. Deterministic bytes for fixed inputs.
pub fn render_overlay(
    image: &ImageInput,
    saliency: &Grid2,
    detection: &Detection,
    label: &str,
) -> Result<Vec<u8>> {
    encode_png(&overlay_rgb(image, saliency, detection, label)?)
}

/// Lays tiles out in a fixed-column grid with a caption strip under each.
/// Tiles must share one size.
pub fn contact_sheet(tiles: &[(String, RgbImage)], columns: usize) -> Result<RgbImage> {
    let Some((_, first)) = tiles.first() else {
        return Err(CliError::Config("contact sheet needs at least one tile".into()));
    };
    let (tw, th) = (first.width(), first.height());
    if tiles.iter().any(|(_, t)| t.width() != tw || t.height() != th) {
        return Err(CliError::Config("contact sheet tiles must share one size".into()));
    }
    let columns = columns.max(1);
    let rows = tiles.len().div_ceil(columns);
    const PAD: u32 = 4;
    const CAPTION: u32 = 11;
    let cell_w = tw + PAD;
    let cell_h = th + CAPTION + PAD;
    let mut sheet = RgbImage::from_pixel(
        PAD + columns as u32 * cell_w,
        PAD + rows as u32 * cell_h,
        Rgb([24, 24, 24]),
    );
    for (idx, (caption, tile)) in tiles.iter().enumerate() {
        let cx = PAD + (idx % columns) as u32 * cell_w;
        let cy = PAD + (idx / columns) as u32 * cell_h;
        for y in 0..th {
            for x in 0..tw {
                sheet.put_pixel(cx + x, cy + y, *tile.get_pixel(x, y));
            }
        }
        draw_text(
            &mut sheet,
            i64::from(cx),
            i64::from(cy + th + 2),
            caption,
            Rgb([220, 220, 220]),
        );
    }
    Ok(sheet)
}
