//! Colormapped overlays and PNG output.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, Rgb, RgbImage};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

use super::map::AttributionMap;

/// Jet-style colormap, piecewise linear through blue (0), cyan (0.25),
/// green (0.5), yellow (0.75) and red (1). Inputs are clamped to `[0,1]`.
pub fn jet(v: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ];
    let x = v.clamp(0.0, 1.0) * 4.0;
    let i = (x.floor() as usize).min(3);
    let t = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A `[1,H,W]` or `[3,H,W]` tensor in `[0,1]` as an 8-bit RGB image.
pub fn tensor_to_rgb(image: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = image.chw()?;
    if c != 1 && c != 3 {
        return Err(shape_err!("expected 1 or 3 channels, got {c}"));
    }
    let plane = h * w;
    let d = image.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |ch: usize| to_u8(d[if c == 1 { i } else { ch * plane + i }]);
        Rgb([px(0), px(1), px(2)])
    }))
}

/// Blends `jet(map)` over `base` with weight `alpha_blend`. The map must be
/// normalized to `[0,1]` and match the base's spatial size.
pub fn render_overlay(base: &Tensor, map: &AttributionMap, alpha_blend: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha_blend) {
        return Err(Error::Domain(format!("alpha_blend must lie in [0,1], got {alpha_blend}")));
    }
    let (c, h, w) = base.chw()?;
    if (map.height(), map.width()) != (h, w) {
        return Err(shape_err!("map is {}x{}, base image is {h}x{w}", map.height(), map.width()));
    }
    if map.values.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain("overlay maps must be normalized to [0,1]".into()));
    }
    if c != 1 && c != 3 {
        return Err(shape_err!("expected 1 or 3 channels, got {c}"));
    }
    let plane = h * w;
    let (b, m) = (base.data(), map.values.data());
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let color = jet(m[i]);
        let px = |ch: usize| {
            let base_v = b[if c == 1 { i } else { ch * plane + i }];
            to_u8((1.0 - alpha_blend) * base_v + alpha_blend * color[ch])
        };
        Rgb([px(0), px(1), px(2)])
    }))
}

/// A `[1,H,W]` tensor as 8-bit grayscale, `[3,H,W]` as RGB.
pub fn tensor_to_image(image: &Tensor) -> Result<DynamicImage> {
    let (c, h, w) = image.chw()?;
    if c == 1 {
        let data = image.data().iter().map(|&v| to_u8(v)).collect();
        let gray = GrayImage::from_raw(w as u32, h as u32, data).expect("buffer size");
        return Ok(DynamicImage::ImageLuma8(gray));
    }
    Ok(DynamicImage::ImageRgb8(tensor_to_rgb(image)?))
}

/// PNG bytes of `image`, 8 bits per channel.
pub fn encode_png(image: impl Into<DynamicImage>) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    image.into().write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Image {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    Ok(out.into_inner())
}

pub fn write_png(image: impl Into<DynamicImage>, path: &Path) -> Result<()> {
    let bytes = encode_png(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
