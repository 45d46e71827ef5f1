//! Image and region-map loading, sizing and PNG export.

use std::path::Path;

use anyhow::{Context, Result};
use glstyle_core::tensor::{resize_bilinear, resize_nearest};
use glstyle_core::{encode_semantic, FeatureMap, Image, Palette};

pub fn load_image(path: &Path) -> Result<Image> {
    let rgb = image::open(path).with_context(|| format!("reading {}", path.display()))?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(f64::from).collect();
    Ok(FeatureMap::from_vec(h as usize, w as usize, 3, data)?)
}

/// Clamps to `[0, 255]`, rounds and writes an 8-bit RGB PNG.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.as_slice().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).context("image buffer size")?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn round_up8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

/// Bilinearly enlarges a photo so both sides are multiples of 8.
pub fn pad_photo(img: &Image) -> Result<Image> {
    Ok(resize_bilinear(img, round_up8(img.height()), round_up8(img.width()))?)
}

/// Content and style region maps, sized to their (already padded) photos and
/// encoded with one shared palette.
pub fn load_semantic_pair(content_sem: &Path, style_sem: &Path, content: &Image, style: &Image) -> Result<(FeatureMap, FeatureMap, Palette)> {
    let cs = load_image(content_sem)?;
    let ss = load_image(style_sem)?;
    let palette = Palette::from_images(&[&cs, &ss])?;
    let cs = resize_nearest(&cs, content.height(), content.width())?;
    let ss = resize_nearest(&ss, style.height(), style.width())?;
    let enc = |img: &Image, p: &Path| encode_semantic(img, &palette).with_context(|| format!("encoding {}", p.display()));
    Ok((enc(&cs, content_sem)?, enc(&ss, style_sem)?, palette))
}
